"""Configuration documents: one JSON file with fixed sections and defaults.

Sections: ``region``, ``design``, ``field``, ``model``, ``plan``,
``experiment``.  Every field has a default (listed in ``DEFAULTS``); unknown
keys anywhere are errors, so typos in scientific configs fail loudly instead
of silently running the default.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from typing import Optional

from .bootstrap import BootstrapPlan
from .designs import NormalMixtureDesign, StripDesign, UniformDesign
from .errors import ConfigError
from .field import CovarianceModel
from .geometry import Region, scale_region
from .regression import IDENTITY_SCORE, Score, WeightSpec, pseudo_huber
from .selection import SelectionConfig

DEFAULTS = {
    "region": {
        "prototype": "cube",
        "dimension": 2,
        # "auto" (analyze only): square bounding box of the data
        "lambda": 12.0,
    },
    "design": {
        "kind": "uniform",
        # strip parameter
        "a": 40.0,
        # mixture parameters
        "mean1": [0.0, 0.0],
        "mean2": [0.25, 0.25],
        "cov1": 1.0,
        "cov2": 2.0,
        "weight": 0.5,
    },
    "field": {
        "family": "spherical",
        "sill": 1.0,
        "range": 2.0,
    },
    "model": {
        "covariates": 1,
        "beta": [25.0, -5.0],
        "score": "identity",
        "huber_k": None,
        # analyze: list of {"coefficient": j, "null": v}; None tests each
        # non-intercept coefficient against 0
        "tests": None,
    },
    "plan": {
        "variant": "gbbb",
        # block side, or "auto" to run the empirical selection rule
        "block": 2.0,
        "resamples": 1000,
        "ci": "normal",
        "level": 0.9,
        "exact": False,
    },
    "experiment": {
        "samples": 500,
        "resamples": 1000,
        "lambdas": [12.0],
        "sample_sizes": [100],
        "ranges": [2.0],
        "designs": ["uniform"],
        # dict keyed by str(lambda), or one flat list for all lambdas
        "block_sizes": {"12": [2.0, 4.0, 6.0], "24": [4.0, 6.0, 8.0, 12.0]},
        "variants": ["gbbb"],
        "select_blocks": False,
        "selection": {
            "candidates": None,  # None: reuse the scenario's block sizes
            "subregions": 4,
            "pilot": "median",
            "resamples_pilot": 200,
            "resamples_sub": 200,
        },
        "workers": 1,
        "demo": {
            "design": "strip",
            "a": 40.0,
            "lambda": 6.0,
            "block_sizes": [2.0],
            "samples": 100,
            "resamples": 500,
            "range": 1.0,
            "sill": 1.0,
            "clip_sigma": None,
            "linearized": False,
            "field_redraws": 200,
            "threshold": 0.7,
        },
    },
}


def _merge(defaults: dict, user: dict, path: str) -> dict:
    out = copy.deepcopy(defaults)
    for key, value in user.items():
        here = f"{path}.{key}" if path else key
        if key not in defaults:
            raise ConfigError(f"unknown config key: {here}")
        if isinstance(defaults[key], dict) and defaults[key]:
            if not isinstance(value, dict):
                raise ConfigError(f"config key {here} must be an object")
            out[key] = _merge(defaults[key], value, here)
        else:
            out[key] = copy.deepcopy(value)
    return out


@dataclass(frozen=True)
class Config:
    region: dict
    design: dict
    field: dict
    model: dict
    plan: dict
    experiment: dict

    def echo(self) -> dict:
        return {
            "region": self.region,
            "design": self.design,
            "field": self.field,
            "model": self.model,
            "plan": self.plan,
            "experiment": self.experiment,
        }


def load_config(path: Optional[str]) -> Config:
    """Read and validate the JSON document; ``None`` gives pure defaults."""
    user = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                user = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        if not isinstance(user, dict):
            raise ConfigError("config root must be a JSON object")
    merged = _merge(DEFAULTS, user, "")
    return Config(**merged)


def _wrap(section: str, builder):
    try:
        return builder()
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"invalid {section} config: {exc}") from None


def build_region(cfg: Config, lam: Optional[float] = None) -> Region:
    sec = cfg.region
    lam = float(sec["lambda"]) if lam is None else float(lam)
    return _wrap(
        "region", lambda: scale_region(sec["prototype"], int(sec["dimension"]), lam)
    )


def build_design(cfg: Config, kind: Optional[str] = None):
    sec = cfg.design
    kind = sec["kind"] if kind is None else kind
    dim = int(cfg.region["dimension"])
    proto = cfg.region["prototype"]

    def make():
        if kind == "uniform":
            return UniformDesign(d=dim, prototype=proto)
        if kind == "mixture":
            return NormalMixtureDesign(
                mean1=tuple(sec["mean1"]), mean2=tuple(sec["mean2"]),
                cov1=float(sec["cov1"]), cov2=float(sec["cov2"]),
                weight=float(sec["weight"]),
            )
        if kind == "strip":
            return StripDesign(a=float(sec["a"]))
        raise ValueError(f"unknown design kind {kind!r}")

    return _wrap("design", make)


def build_cov_model(cfg: Config, range_: Optional[float] = None) -> CovarianceModel:
    sec = cfg.field
    r = float(sec["range"]) if range_ is None else float(range_)
    return _wrap(
        "field",
        lambda: CovarianceModel(sec["family"], sill=float(sec["sill"]), range_=r),
    )


def build_score(cfg: Config) -> Score:
    sec = cfg.model

    def make():
        if sec["score"] == "identity":
            return IDENTITY_SCORE
        if sec["score"] == "pseudo_huber":
            if sec["huber_k"] is None:
                raise ValueError("pseudo_huber score requires model.huber_k")
            return pseudo_huber(float(sec["huber_k"]))
        raise ValueError(f"unknown score {sec['score']!r}")

    return _wrap("model", make)


def build_weights(cfg: Config, covariates: Optional[int] = None) -> WeightSpec:
    q = int(cfg.model["covariates"]) if covariates is None else int(covariates)
    return _wrap("model", lambda: WeightSpec(q))


def build_plan(cfg: Config, b: float, seed: int, M: Optional[int] = None) -> BootstrapPlan:
    sec = cfg.plan
    return _wrap(
        "plan",
        lambda: BootstrapPlan(
            variant=sec["variant"],
            b=float(b),
            M=int(sec["resamples"] if M is None else M),
            ci_method=sec["ci"],
            level=float(sec["level"]),
            seed=seed,
            exact_mode=bool(sec["exact"]),
        ),
    )


def block_sizes_for(cfg: Config, lam: float) -> tuple:
    raw = cfg.experiment["block_sizes"]
    if isinstance(raw, dict):
        key = f"{lam:g}"
        if key not in raw:
            raise ConfigError(
                f"experiment.block_sizes has no entry for lambda {key}"
            )
        return tuple(float(v) for v in raw[key])
    return tuple(float(v) for v in raw)


def build_selection(cfg: Config, candidates: tuple) -> SelectionConfig:
    sec = cfg.experiment["selection"]
    cands = sec["candidates"] if sec["candidates"] is not None else candidates
    return _wrap(
        "experiment.selection",
        lambda: SelectionConfig(
            candidates=tuple(float(c) for c in cands),
            subregion_count=int(sec["subregions"]),
            pilot_rule=sec["pilot"],
            M_pilot=int(sec["resamples_pilot"]),
            M_sub=int(sec["resamples_sub"]),
        ),
    )
