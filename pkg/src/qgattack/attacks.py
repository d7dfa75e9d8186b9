"""l-infinity constrained first-order attacks.

All attacks are untargeted and white-box. The iterate is kept inside the
feasible set ``{x' : ||x' - x||_inf <= eps} & [0, 1]^d`` around the clean input
``x`` after every step.

==========  ================  ======================
attack      step direction    gradient
==========  ================  ======================
pgd         sign              per-example loss
pqgd        zeta(b g / M)     per-example loss
blob        sign              DAA-BLOB ensemble
blob_qg     zeta(b eg / M)    DAA-BLOB ensemble
==========  ================  ======================
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Sequence

import numpy as np

from . import grad_core
from .errors import DomainError, ShapeError
from .grad_core import Model
from .quantizers import QuantizerKind, Qsgd, Sign, Zeta, dispatch

ATTACK_KINDS = ("fgsm", "pgd", "pqgd", "blob", "blob_qg")


def derive_seed(master: int, *counters: int) -> int:
    """Child seed for ``counters`` under ``master``.

    Uses ``SeedSequence(master, spawn_key=counters)``, so the seed of a given
    (run, restart, ...) tuple never depends on how many siblings exist.
    """
    ss = np.random.SeedSequence(int(master), spawn_key=tuple(int(c) for c in counters))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


@dataclass(frozen=True)
class AttackConfig:
    """Hyperparameters of one attack run.

    ``kernel_bandwidth=None`` selects the median heuristic for DAA attacks.
    ``daa_batch_size=None`` couples the whole batch in the DAA interaction term;
    an integer partitions it into consecutive chunks of that size.
    """

    epsilon: float
    alpha: float
    steps: int = 1
    restarts: int = 0
    quantizer: QuantizerKind = field(default_factory=Sign)
    daa_weight: float = 0.0
    kernel_bandwidth: Optional[float] = None
    seed: int = 0
    random_start: bool = True
    daa_batch_size: Optional[int] = None

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise DomainError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        if not self.alpha > 0.0:
            raise DomainError(f"alpha must be positive, got {self.alpha}")
        if self.epsilon > 0.0 and self.alpha > self.epsilon:
            raise DomainError(f"alpha ({self.alpha}) must not exceed epsilon ({self.epsilon})")
        if self.steps < 1:
            raise DomainError("steps must be >= 1")
        if self.restarts < 0:
            raise DomainError("restarts must be >= 0")
        if self.kernel_bandwidth is not None and not self.kernel_bandwidth > 0:
            raise DomainError("kernel bandwidth must be positive")
        if self.daa_batch_size is not None and self.daa_batch_size < 1:
            raise DomainError("daa_batch_size must be >= 1")

    def with_(self, **changes) -> "AttackConfig":
        return replace(self, **changes)


@dataclass
class AttackResult:
    adversarial: np.ndarray  # (n, d)
    misclassified: np.ndarray  # (n,) bool
    iterations_run: int
    degenerate: np.ndarray  # (n,) bool, some step had an all-zero direction
    trajectory: Optional[List[np.ndarray]] = None  # x^0 .. x^T when requested

    @property
    def accuracy(self) -> float:
        return 1.0 - float(np.mean(self.misclassified))


def project(x_adv, x_orig, epsilon: float) -> np.ndarray:
    """Clamp to the eps-ball around ``x_orig`` intersected with ``[0, 1]``."""
    x_orig = np.asarray(x_orig, dtype=np.float64)
    lower = np.maximum(x_orig - epsilon, 0.0)
    upper = np.minimum(x_orig + epsilon, 1.0)
    return np.clip(np.asarray(x_adv, dtype=np.float64), lower, upper)


def random_start(x, epsilon: float, rng: np.random.Generator) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    noise = rng.uniform(-epsilon, epsilon, size=x.shape)
    return project(x + noise, x, epsilon)


def _prepare(model: Model, x, y):
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y)).astype(np.int64)
    if x.shape[0] != y.shape[0]:
        raise DomainError(f"{x.shape[0]} examples but {y.shape[0]} labels")
    if x.shape[0] == 0:
        raise DomainError("empty batch")
    if x.shape[1] != model.input_dim:
        raise ShapeError(f"expected width {model.input_dim}, got {x.shape[1]}")
    return x, y


def _misclassified(model: Model, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return grad_core.predict(model, x) != y


def step_direction(kind: QuantizerKind, g: np.ndarray, rng=None):
    """Per-row step direction; rows whose gradient is all zero get a zero step.

    Returns ``(direction, degenerate_mask)``.
    """
    degenerate = ~np.any(g != 0.0, axis=1)
    if not degenerate.any():
        return dispatch(kind, g, rng), degenerate
    direction = np.zeros_like(g)
    live = ~degenerate
    if live.any():
        direction[live] = dispatch(kind, g[live], rng)
    return direction, degenerate


def fgsm(model: Model, x, y, epsilon: float) -> AttackResult:
    """One step of size eps along the sign gradient, starting at the clean input."""
    x, y = _prepare(model, x, y)
    g = grad_core.input_gradient(model, x, y)
    direction, degenerate = step_direction(Sign(), g)
    x_adv = project(x + epsilon * direction, x, epsilon)
    return AttackResult(x_adv, _misclassified(model, x_adv, y), 1, degenerate)


# --- DAA-BLOB ---------------------------------------------------------------


def median_bandwidth(x: np.ndarray) -> float:
    """Median squared distance over distinct pairs; 1.0 when undefined or zero."""
    n = x.shape[0]
    if n < 2:
        return 1.0
    sq = _pairwise_sq_dists(x)
    h = float(np.median(sq[np.triu_indices(n, k=1)]))
    return h if h > 0.0 else 1.0


def _pairwise_sq_dists(x: np.ndarray) -> np.ndarray:
    diff = x[:, None, :] - x[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def rbf_kernel(x: np.ndarray, bandwidth: float) -> np.ndarray:
    """``K_ij = exp(-||x_i - x_j||^2 / h)``."""
    return np.exp(-_pairwise_sq_dists(x) / bandwidth)


def daa_interaction(x: np.ndarray, grads: np.ndarray, c: float, bandwidth: Optional[float]):
    """Ensemble gradient ``eg_i = g_i + c/M sum_j [K_ij g_j + grad_{x_j} K(x_i, x_j)]``.

    For the RBF kernel ``grad_{x_j} K(x_i, x_j) = 2 K_ij (x_i - x_j) / h``.
    """
    if c == 0.0:
        return grads
    m = x.shape[0]
    h = median_bandwidth(x) if bandwidth is None else bandwidth
    k = rbf_kernel(x, h)
    smoothed = k @ grads
    repulsive = (2.0 / h) * (x * k.sum(axis=1, keepdims=True) - k @ x)
    return grads + (c / m) * (smoothed + repulsive)


def _chunks(n: int, size: Optional[int]):
    if size is None or size >= n:
        yield slice(0, n)
        return
    for start in range(0, n, size):
        yield slice(start, min(start + size, n))


def daa_blob_gradient(
    model: Model, x, y, c: float, bandwidth: Optional[float] = None,
    batch_size: Optional[int] = None,
) -> np.ndarray:
    """DAA-BLOB ensemble gradient for every example of the batch, shape ``(n, d)``."""
    x, y = _prepare(model, x, y)
    g = grad_core.input_gradient(model, x, y)
    if c == 0.0:
        return g
    out = np.empty_like(g)
    for sl in _chunks(x.shape[0], batch_size):
        out[sl] = daa_interaction(x[sl], g[sl], c, bandwidth)
    return out


# --- iterative attacks ------------------------------------------------------


def _iterate(
    model: Model,
    x,
    y,
    cfg: AttackConfig,
    ensemble: bool,
    keep_trajectory: bool = False,
    callback: Optional[Callable[[int, np.ndarray], None]] = None,
) -> AttackResult:
    if isinstance(cfg.quantizer, Qsgd):
        raise DomainError("QSGD is a comparison codec, not an attack direction")
    x, y = _prepare(model, x, y)
    rng = np.random.default_rng(cfg.seed)
    x_t = random_start(x, cfg.epsilon, rng) if cfg.random_start else x.copy()
    trajectory = [x_t.copy()] if keep_trajectory else None
    if callback is not None:
        callback(0, x_t)
    degenerate = np.zeros(x.shape[0], dtype=bool)
    for t in range(cfg.steps):
        g = grad_core.input_gradient(model, x_t, y)
        if ensemble and cfg.daa_weight != 0.0:
            for sl in _chunks(x.shape[0], cfg.daa_batch_size):
                g[sl] = daa_interaction(x_t[sl], g[sl], cfg.daa_weight, cfg.kernel_bandwidth)
        direction, dead = step_direction(cfg.quantizer, g)
        degenerate |= dead
        x_t = project(x_t + cfg.alpha * direction, x, cfg.epsilon)
        if keep_trajectory:
            trajectory.append(x_t.copy())
        if callback is not None:
            callback(t + 1, x_t)
    return AttackResult(x_t, _misclassified(model, x_t, y), cfg.steps, degenerate, trajectory)


def pgd(model: Model, x, y, cfg: AttackConfig, **kw) -> AttackResult:
    """Projected gradient descent with sign steps from a random start."""
    if not isinstance(cfg.quantizer, Sign):
        raise DomainError("pgd uses the sign quantizer; use pqgd for zeta")
    return _iterate(model, x, y, cfg, ensemble=False, **kw)


def pqgd(model: Model, x, y, cfg: AttackConfig, **kw) -> AttackResult:
    """Projected quantized gradient descent: steps along ``zeta(b g / max|g|)``."""
    if not isinstance(cfg.quantizer, Zeta):
        raise DomainError("pqgd needs a Zeta(b) quantizer")
    return _iterate(model, x, y, cfg, ensemble=False, **kw)


def blob_attack(model: Model, x, y, cfg: AttackConfig, **kw) -> AttackResult:
    """DAA-BLOB with a Sign quantizer, BLOB_QG with Zeta(b).

    The quantization normalizer is taken per example and per iteration.
    """
    if not isinstance(cfg.quantizer, (Sign, Zeta)):
        raise DomainError("blob attacks need a Sign or Zeta quantizer")
    return _iterate(model, x, y, cfg, ensemble=True, **kw)


def run_attack(model: Model, x, y, cfg: AttackConfig, kind: str, **kw) -> AttackResult:
    """Single attack run selected by name; see :data:`ATTACK_KINDS`."""
    if kind == "fgsm":
        return fgsm(model, x, y, cfg.epsilon)
    if kind == "pgd":
        return pgd(model, x, y, cfg, **kw)
    if kind == "pqgd":
        return pqgd(model, x, y, cfg, **kw)
    if kind in ("blob", "blob_qg"):
        if kind == "blob" and not isinstance(cfg.quantizer, Sign):
            raise DomainError("blob uses the sign quantizer; use blob_qg for zeta")
        if kind == "blob_qg" and not isinstance(cfg.quantizer, Zeta):
            raise DomainError("blob_qg needs a Zeta(b) quantizer")
        return blob_attack(model, x, y, cfg, **kw)
    raise DomainError(f"unknown attack {kind!r}; expected one of {ATTACK_KINDS}")


def restart_seeds(cfg: AttackConfig) -> List[int]:
    """Seed of restart 0 is ``cfg.seed``; restart ``r >= 1`` uses ``derive_seed(cfg.seed, r)``."""
    return [cfg.seed] + [derive_seed(cfg.seed, r) for r in range(1, cfg.restarts + 1)]


def attack_with_restarts(
    model: Model,
    x,
    y,
    cfg: AttackConfig,
    kind: str,
    seeds: Optional[Sequence[int]] = None,
) -> AttackResult:
    """Run ``1 + cfg.restarts`` independently started attacks and merge them.

    An example is broken if any restart misclassifies it. The returned
    adversarial input is the one from the first restart that broke it, or the
    first restart's output if none did.
    """
    x, y = _prepare(model, x, y)
    seeds = restart_seeds(cfg) if seeds is None else list(seeds)
    if not seeds:
        raise DomainError("need at least one restart seed")
    merged: Optional[AttackResult] = None
    for seed in seeds:
        res = run_attack(model, x, y, cfg.with_(seed=int(seed)), kind)
        if merged is None:
            merged = AttackResult(
                res.adversarial.copy(), res.misclassified.copy(),
                res.iterations_run, res.degenerate.copy(),
            )
            continue
        newly = res.misclassified & ~merged.misclassified
        merged.adversarial[newly] = res.adversarial[newly]
        merged.misclassified |= res.misclassified
        merged.degenerate |= res.degenerate
        merged.iterations_run += res.iterations_run
    return merged
