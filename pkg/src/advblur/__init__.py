"""Adversarial-game training for binary forgery detectors.

Core pieces: a differentiable pixel-wise Gaussian blur operator (blurcore),
gradient- and generator-based attacks under explicit budgets (attacks,
generators), detector training regimes (detector, training), a synthetic
forgery benchmark (data), metrics and reports (evaluate), and a config-driven
experiment CLI (cli).
"""

from .blurcore import (
    RHO_MAX,
    RHO_MIN,
    BlurSpec,
    blur_apply,
    blur_gradient_check,
    gaussian_kernel,
    rho_to_sigma,
    sigma_to_rho,
)
from .attacks import (
    AdversarialExample,
    PerturbationBudget,
    blur_attack,
    combined_attack,
    fgsm,
    pgd,
    spatial_attack,
)
from .detector import Detector, augment_traditional
from .generators import GeneratorPair, SigmaGenerator, generate_sigma
from .evaluate import EvalReport, accuracy, auc
from .data import SampleRecord, SynthSpec, load_manifest, synth_generate
from .training import OptimizerSettings, TrainConfig, TrainResult, train

__version__ = "0.1.0"
