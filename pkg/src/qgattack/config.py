"""JSON run configuration for the command-line tool.

Every section is optional except where a subcommand needs it. Unknown keys are
rejected at every level. Example::

    {
      "seed": 0,
      "output_dir": "runs/demo",
      "model": {"hidden": [64]},
      "data": {"source": "synthetic", "n_train": 1500, "n_eval": 500,
               "side": 8, "num_classes": 10},
      "train": {"epochs": 15, "batch_size": 64, "learning_rate": 0.05,
                "adversarial": {"attack": "pgd", "epsilon": 0.3,
                                "alpha": 0.075, "steps": 7}},
      "attack": {"kind": "pqgd", "epsilon": 0.3, "alpha": 0.01,
                 "steps": 20, "b": 100},
      "eval": {"num_runs": 5},
      "histogram": {"quantizer": "zeta", "b": 100},
      "sweep": {"attacks": ["pgd", "pqgd:100"], "parameter": "steps",
                "values": [20, 100]}
    }

Seeds: the master ``seed`` feeds ``derive_seed(seed, k)`` with ``k = 0`` for the
training-set draw, ``1`` for the evaluation-set draw, ``2`` for training and
``3`` for attacks.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List

from .data import resolve_data_path
from .attacks import ATTACK_KINDS, AttackConfig, derive_seed
from .errors import ConfigError, QGAttackError
from .grad_core import ModelSpec
from .quantizers import Sign, Zeta
from .training import AdversarialSpec, TrainConfig

SEED_TRAIN_DATA, SEED_EVAL_DATA, SEED_TRAIN, SEED_ATTACK = 0, 1, 2, 3

_SCHEMA: Dict[str, Any] = {
    "seed": int,
    "output_dir": str,
    "model": {"hidden": list},
    "data": {
        "source": str, "n_train": int, "n_eval": int, "side": int, "num_classes": int,
        "blob_width": float, "noise": float, "jitter": float,
        "train_images": str, "train_labels": str, "eval_images": str, "eval_labels": str,
        "downscale": int, "eval_limit": int,
    },
    "train": {
        "epochs": int, "batch_size": int, "learning_rate": float, "optimizer": str,
        "momentum": float, "lr_decay_every": int, "lr_decay_factor": float,
        "adversarial": {
            "attack": str, "epsilon": float, "alpha": float, "steps": int, "b": int,
            "random_start": bool, "mix_ratio": float, "daa_weight": float,
            "kernel_bandwidth": float,
        },
    },
    "attack": {
        "kind": str, "epsilon": float, "alpha": float, "steps": int, "restarts": int,
        "b": int, "daa_weight": float, "kernel_bandwidth": float, "random_start": bool,
        "daa_batch_size": int,
    },
    "eval": {"num_runs": int},
    "histogram": {"quantizer": str, "b": int, "raw": bool, "epsilon": float, "alpha": float},
    "sweep": {"attacks": list, "parameter": str, "values": list, "num_runs": int},
}

DEFAULTS: Dict[str, Any] = {
    "seed": 0,
    "output_dir": "runs/default",
    "model": {"hidden": [64]},
    "data": {
        "source": "synthetic", "n_train": 1500, "n_eval": 500, "side": 8, "num_classes": 10,
        "blob_width": 1.0, "noise": 0.05, "jitter": 0.3, "downscale": 1,
    },
    "train": {
        "epochs": 15, "batch_size": 64, "learning_rate": 0.05, "optimizer": "momentum",
        "momentum": 0.9, "lr_decay_every": 0, "lr_decay_factor": 0.1,
    },
    "attack": {
        "kind": "pgd", "epsilon": 0.3, "alpha": 0.01, "steps": 20, "restarts": 0,
        "daa_weight": 0.0, "random_start": True,
    },
    "eval": {"num_runs": 5},
    "histogram": {"quantizer": "zeta", "b": 100, "raw": False},
    "sweep": {"attacks": ["pgd", "pqgd:100"], "parameter": "steps", "values": [20, 100]},
}


def _check(node: Any, schema: Any, where: str) -> None:
    if isinstance(schema, dict):
        if not isinstance(node, dict):
            raise ConfigError(f"{where or 'config'} must be an object")
        for key, value in node.items():
            if key not in schema:
                raise ConfigError(f"unknown key {where + '.' if where else ''}{key}")
            _check(value, schema[key], f"{where}.{key}" if where else key)
        return
    if node is None:
        return
    if schema is float and isinstance(node, int) and not isinstance(node, bool):
        return
    if schema is int and isinstance(node, bool):
        raise ConfigError(f"{where} must be an integer")
    if not isinstance(node, schema):
        raise ConfigError(f"{where} must be of type {schema.__name__}")


def _merge(base: Dict, override: Dict) -> Dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


@dataclass
class RunConfig:
    raw: Dict[str, Any]

    @classmethod
    def from_dict(cls, user: Dict[str, Any]) -> "RunConfig":
        _check(user, _SCHEMA, "")
        cfg = cls(_merge(DEFAULTS, user))
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        text = Path(path).read_text()
        try:
            user = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        return cls.from_dict(user)

    def with_seed(self, seed: int) -> "RunConfig":
        raw = copy.deepcopy(self.raw)
        raw["seed"] = int(seed)
        return RunConfig(raw)

    # -- typed views --------------------------------------------------------

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    def seed_for(self, purpose: int) -> int:
        return derive_seed(self.seed, purpose)

    def model_spec(self, input_dim: int, num_classes: int) -> ModelSpec:
        return ModelSpec(input_dim, tuple(self.raw["model"]["hidden"]), num_classes)

    def attack_kind(self) -> str:
        return self.raw["attack"]["kind"]

    def attack_config(self) -> AttackConfig:
        a = self.raw["attack"]
        return _attack_config(a, a["kind"], self.seed_for(SEED_ATTACK))

    def train_config(self) -> TrainConfig:
        t = dict(self.raw["train"])
        adv = t.pop("adversarial", None)
        spec = None
        if adv:
            adv = dict(adv)
            kind = adv.pop("attack", "pgd")
            mix = adv.pop("mix_ratio", 1.0)
            acfg = _attack_config(adv, kind, 0)
            spec = AdversarialSpec(acfg, kind, mix)
        return TrainConfig(seed=self.seed_for(SEED_TRAIN), adversarial=spec, **t)

    def paths(self) -> List[Path]:
        """Input files the configured data source needs."""
        d = self.raw["data"]
        if d["source"] != "idx":
            return []
        return [resolve_data_path(d[k]) for k in ("train_images", "train_labels", "eval_images", "eval_labels") if d.get(k)]

    def validate(self) -> None:
        d = self.raw["data"]
        if d["source"] not in ("synthetic", "idx"):
            raise ConfigError("data.source must be 'synthetic' or 'idx'")
        if d["source"] == "idx":
            for k in ("eval_images", "eval_labels"):
                if not d.get(k):
                    raise ConfigError(f"data.{k} is required for idx data")
            if bool(d.get("train_images")) != bool(d.get("train_labels")):
                raise ConfigError("data.train_images and data.train_labels go together")
        if any(not isinstance(h, int) or isinstance(h, bool) or h < 1 for h in self.raw["model"]["hidden"]):
            raise ConfigError("model.hidden must be a list of positive integers")
        if self.attack_kind() not in ATTACK_KINDS:
            raise ConfigError(f"attack.kind must be one of {ATTACK_KINDS}")
        if self.raw["histogram"]["quantizer"] not in ("sign", "zeta"):
            raise ConfigError("histogram.quantizer must be 'sign' or 'zeta'")
        try:
            self.attack_config()
            self.train_config()
        except QGAttackError as exc:
            raise ConfigError(str(exc)) from exc
        except (TypeError, KeyError) as exc:
            raise ConfigError(f"incomplete or invalid section: {exc}") from exc
        sw = self.raw["sweep"]
        if sw["parameter"] not in ("epsilon", "steps", "b"):
            raise ConfigError("sweep.parameter must be epsilon, steps or b")
        if not sw["values"]:
            raise ConfigError("sweep.values must not be empty")


def _attack_config(a: Dict[str, Any], kind: str, seed: int) -> AttackConfig:
    if kind not in ATTACK_KINDS:
        raise ConfigError(f"unknown attack {kind!r}")
    if kind in ("pqgd", "blob_qg"):
        if a.get("b") is None:
            raise ConfigError(f"attack {kind} needs b")
        quantizer = Zeta(int(a["b"]))
    else:
        quantizer = Sign()
    epsilon = float(a["epsilon"])
    return AttackConfig(
        epsilon=epsilon,
        alpha=float(a.get("alpha", epsilon)),
        steps=int(a.get("steps", 1)),
        restarts=int(a.get("restarts", 0)),
        quantizer=quantizer,
        daa_weight=float(a.get("daa_weight", 0.0)),
        kernel_bandwidth=a.get("kernel_bandwidth"),
        seed=seed,
        random_start=bool(a.get("random_start", True)),
        daa_batch_size=a.get("daa_batch_size"),
    )
