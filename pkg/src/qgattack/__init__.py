"""First-order l-inf adversarial attacks with sign and quantized gradients."""

__version__ = "0.1.0"

from .attacks import (
    AttackConfig,
    AttackResult,
    attack_with_restarts,
    blob_attack,
    daa_blob_gradient,
    fgsm,
    pgd,
    pqgd,
    project,
    random_start,
    run_attack,
)
from .data import Dataset, downscale, load_idx, synth_dataset
from .eval_harness import GradientHistogram, RobustnessReport, gradient_histogram, robust_accuracy, sweep
from .grad_core import Model, ModelSpec, forward, init_model, input_gradient, loss, param_gradient
from .quantizers import Qsgd, Sign, Zeta, dispatch, qsgd_quantize, quantize, sign_grad, zeta
from .training import AdversarialSpec, TrainConfig, train_adversarial, train_standard
