"""Robustness evaluation protocol and gradient-histogram inspection.

Accuracy under attack is reported over several independently seeded runs as
worst, average and merged (an example counts as broken if any run broke it).
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import attacks, grad_core
from .attacks import AttackConfig, derive_seed
from .data import Dataset
from .errors import DomainError
from .grad_core import Model
from .quantizers import QuantizerKind, Sign, Zeta, quantize, round_half_away, sign_grad

CSV_COLUMNS = (
    "run_id", "attack", "quantizer", "b", "epsilon", "alpha",
    "steps", "restarts", "seed", "accuracy",
)


def config_echo(cfg: AttackConfig) -> Dict:
    d = asdict(cfg)
    q = cfg.quantizer
    d["quantizer"] = {"name": q.name, **asdict(q)}
    return d


@dataclass
class RobustnessReport:
    attack: str
    config: Dict
    num_examples: int
    clean_accuracy: float
    run_seeds: List[int]
    per_run_accuracy: List[float]
    worst: float
    avg: float
    merged_accuracy: float
    timings: Dict[str, float] = field(default_factory=dict)

    def to_dict(self, include_timings: bool = False) -> Dict:
        d = asdict(self)
        if not include_timings:
            d.pop("timings")
        return d

    def to_json(self, include_timings: bool = False) -> str:
        return json.dumps(self.to_dict(include_timings), indent=2, sort_keys=True) + "\n"

    def csv_rows(self) -> List[List]:
        c = self.config
        q = c["quantizer"]
        return [
            [i, self.attack, q["name"], q.get("b", ""), c["epsilon"], c["alpha"],
             c["steps"], c["restarts"], seed, acc]
            for i, (seed, acc) in enumerate(zip(self.run_seeds, self.per_run_accuracy))
        ]


def write_csv(rows: Sequence[Sequence], path=None) -> str:
    """Render rows under :data:`CSV_COLUMNS`; also write them to ``path`` if given."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in rows:
        writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as f:
            f.write(text)
    return text


def run_seeds(master: int, num_runs: int) -> List[int]:
    return [derive_seed(master, run) for run in range(num_runs)]


def robust_accuracy(
    model: Model,
    dataset: Dataset,
    attack_kind: str,
    cfg: AttackConfig,
    num_runs: int = 5,
    threads: int = 1,
) -> RobustnessReport:
    """Accuracy under ``num_runs`` independently seeded attacks (each with restarts).

    Run ``r`` uses master seed ``derive_seed(cfg.seed, r)``. Denominators are the
    full evaluation set, including examples misclassified before the attack.
    """
    return evaluate_runs(model, dataset, attack_kind, cfg, num_runs, threads)[0]


def evaluate_runs(
    model: Model,
    dataset: Dataset,
    attack_kind: str,
    cfg: AttackConfig,
    num_runs: int = 5,
    threads: int = 1,
) -> Tuple[RobustnessReport, List[attacks.AttackResult]]:
    """Like :func:`robust_accuracy` but also hands back each run's merged result."""
    if len(dataset) == 0:
        raise DomainError("cannot evaluate on an empty dataset")
    if num_runs < 1:
        raise DomainError("num_runs must be >= 1")
    x, y = dataset.images, dataset.labels
    t0 = time.perf_counter()
    clean = float(np.mean(grad_core.predict(model, x) == y))
    t1 = time.perf_counter()
    seeds = run_seeds(cfg.seed, num_runs)

    def one(seed):
        return attacks.attack_with_restarts(model, x, y, cfg.with_(seed=seed), attack_kind)

    if threads > 1 and num_runs > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, seeds))
    else:
        results = [one(s) for s in seeds]
    t2 = time.perf_counter()

    broken_any = np.zeros(len(dataset), dtype=bool)
    per_run = []
    for res in results:
        per_run.append(1.0 - float(np.mean(res.misclassified)))
        broken_any |= res.misclassified
    merged = 1.0 - float(np.mean(broken_any))
    report = RobustnessReport(
        attack=attack_kind,
        config=config_echo(cfg),
        num_examples=len(dataset),
        clean_accuracy=clean,
        run_seeds=seeds,
        per_run_accuracy=per_run,
        worst=min(per_run),
        avg=float(np.mean(per_run)),
        merged_accuracy=merged,
        timings={"clean_eval_s": t1 - t0, "attack_s": t2 - t1},
    )
    return report, results


# --- histogram --------------------------------------------------------------


def clip_bound(epsilon: float, alpha: float) -> int:
    """``floor(eps / alpha)``, tolerant of binary round-off (0.3 / 0.01 -> 30)."""
    if alpha <= 0:
        raise DomainError("alpha must be positive")
    return int(math.floor(epsilon / alpha + 1e-9))


@dataclass
class GradientHistogram:
    values: np.ndarray  # integers -bound .. bound
    counts: np.ndarray
    bound: int
    representation: str
    real_valued: bool = False

    def count(self, value: int) -> int:
        if abs(value) > self.bound:
            return 0
        return int(self.counts[value + self.bound])

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["value", "count"])
        writer.writerows(zip(self.values.tolist(), self.counts.tolist()))
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as f:
                f.write(text)
        return text


def _rowwise(fn, g: np.ndarray) -> np.ndarray:
    out = np.zeros_like(g)
    live = np.any(g != 0.0, axis=1)
    if live.any():
        out[live] = fn(g[live])
    return out


def gradient_histogram(
    model: Model,
    dataset: Dataset,
    quantizer: QuantizerKind,
    epsilon: float,
    alpha: float,
    raw: bool = False,
) -> GradientHistogram:
    """Histogram of step directions at the clean inputs, one bin per integer.

    Values are clamped to ``[-B, B]`` with ``B = floor(eps / alpha)``: a single
    component can never move further than that many steps once projected. With
    ``raw=True`` and a ``Zeta(b)`` quantizer the gradient is rescaled by
    ``b / max|g|`` without rounding and binned to the nearest integer.
    """
    bound = clip_bound(epsilon, alpha)
    g = grad_core.input_gradient(model, dataset.images, dataset.labels)
    if isinstance(quantizer, Sign):
        if raw:
            raise DomainError("raw histograms need a Zeta(b) quantizer for the rescale")
        v = sign_grad(g).astype(np.float64)
        name = "sign"
    elif isinstance(quantizer, Zeta):
        b = quantizer.b
        if raw:
            v = _rowwise(lambda r: b * (r / np.max(np.abs(r), axis=1, keepdims=True)), g)
            name = f"raw(b={b})"
        else:
            v = _rowwise(lambda r: quantize(r, b).astype(np.float64), g)
            name = f"zeta(b={b})"
    else:
        raise DomainError(f"histograms support Sign and Zeta quantizers, not {quantizer!r}")
    v = np.clip(v, -bound, bound)
    if raw:
        v = round_half_away(v)
    ints = v.astype(np.int64).ravel()
    counts = np.bincount(ints + bound, minlength=2 * bound + 1)
    return GradientHistogram(np.arange(-bound, bound + 1), counts, bound, name, raw)


# --- sweeps -----------------------------------------------------------------

SWEEP_PARAMETERS = ("epsilon", "steps", "b")


def parse_attack_spec(spec: str) -> Tuple[str, Optional[int]]:
    """``"pgd"`` or ``"pqgd:100"`` -> ``(kind, b)``."""
    kind, _, b = spec.partition(":")
    if kind not in attacks.ATTACK_KINDS:
        raise DomainError(f"unknown attack {kind!r}")
    needs_b = kind in ("pqgd", "blob_qg")
    if needs_b and not b:
        b = None
    elif not needs_b and b:
        raise DomainError(f"{kind} takes no b")
    return kind, int(b) if b else None


def _quantizer_for(kind: str, b: Optional[int]) -> QuantizerKind:
    if kind in ("pqgd", "blob_qg"):
        if b is None:
            raise DomainError(f"{kind} needs b (write {kind}:<b> or sweep over b)")
        return Zeta(b)
    return Sign()


@dataclass
class SweepRow:
    attack: str
    parameter: str
    value: float
    report: RobustnessReport


def sweep(
    model: Model,
    dataset: Dataset,
    attack_specs: Sequence[str],
    parameter: str,
    values: Sequence,
    base: AttackConfig,
    num_runs: int = 5,
    threads: int = 1,
) -> List[SweepRow]:
    """One :func:`robust_accuracy` per grid point per attack, in grid-major order.

    Sweeping ``b`` only varies the quantized attacks; sign attacks are run once.
    When sweeping ``epsilon``, ``alpha`` is capped at the grid value.
    """
    if parameter not in SWEEP_PARAMETERS:
        raise DomainError(f"sweep parameter must be one of {SWEEP_PARAMETERS}")
    parsed = [parse_attack_spec(s) for s in attack_specs]
    rows: List[SweepRow] = []
    done_sign = set()
    for value in values:
        for kind, b in parsed:
            if parameter == "b":
                if kind in ("pqgd", "blob_qg"):
                    b = int(value)
                elif kind in done_sign:
                    continue
                else:
                    done_sign.add(kind)
            cfg = base.with_(quantizer=_quantizer_for(kind, b))
            if parameter == "epsilon":
                eps = float(value)
                cfg = cfg.with_(epsilon=eps, alpha=min(cfg.alpha, eps) if eps > 0 else cfg.alpha)
            elif parameter == "steps":
                cfg = cfg.with_(steps=int(value))
            report = robust_accuracy(model, dataset, kind, cfg, num_runs, threads)
            rows.append(SweepRow(kind, parameter, value, report))
    return rows


def sweep_csv(rows: Sequence[SweepRow], path=None) -> str:
    return write_csv([r for row in rows for r in row.report.csv_rows()], path)
