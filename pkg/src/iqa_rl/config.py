"""Flat ``key = value`` engine configuration.

Only the keys declared in :data:`FIELDS` are accepted; anything else is a
:class:`~iqa_rl.errors.ConfigError`. ``dump_config`` writes every key, so
``load_config(dump_config(cfg))`` reproduces ``cfg`` exactly.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Dict, Optional, Union

from .errors import ConfigError


@dataclass(frozen=True)
class EngineConfig:
    alpha: float = 1.0
    beta: float = 2.0
    sigma: float = 0.35
    v_floor: float = 1e-4
    eps_clip: float = 0.2
    adv_eps: float = 1e-8
    group_size: int = 8
    klc_p: float = 0.02
    klc_beta_kl: float = 0.04
    klc_min_masked: int = 1
    vrf_rating_diff: float = 0.05
    vrf_iou_min: float = 0.5
    vrf_entropy_diff: float = 0.01
    resample_K: int = 10
    resample_S: int = 3
    resample_gamma: float = 1.0
    # toy simulator
    sim_steps: int = 300
    sim_images: int = 48
    sim_batch_images: int = 8
    sim_lr: float = 10.0
    sim_inner_epochs: int = 4
    sim_init_scale: float = 0.1
    # optional path to a ground-truth MOS file (one value per line, or CSV/JSONL)
    eval_mos_file: str = ""

    def coefficients(self):
        from .rewards import RewardCoefficients

        return RewardCoefficients(alpha=self.alpha, beta=self.beta, sigma=self.sigma)

    def klc(self):
        from .policy import KlcConfig

        return KlcConfig(p=self.klc_p, beta_kl=self.klc_beta_kl, min_masked=self.klc_min_masked)

    def vrf_thresholds(self):
        from .curation import VrfThresholds

        return VrfThresholds(
            rating_diff=self.vrf_rating_diff,
            iou_min=self.vrf_iou_min,
            entropy_diff=self.vrf_entropy_diff,
        )

    def replace(self, **changes: Any) -> "EngineConfig":
        cfg = dataclasses.replace(self, **changes)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if not self.sigma > 0:
            raise ConfigError("sigma must be > 0")
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("alpha and beta must be >= 0")
        if not self.v_floor > 0:
            raise ConfigError("v_floor must be > 0")
        if not 0 < self.eps_clip < 1:
            raise ConfigError("eps_clip must lie in (0, 1)")
        if not self.adv_eps > 0:
            raise ConfigError("adv_eps must be > 0")
        if self.group_size < 2:
            raise ConfigError("group_size must be >= 2")
        if not 0 < self.klc_p <= 1:
            raise ConfigError("klc.p must lie in (0, 1]")
        if self.klc_beta_kl < 0:
            raise ConfigError("klc.beta_kl must be >= 0")
        if self.klc_min_masked < 1:
            raise ConfigError("klc.min_masked must be >= 1")
        if self.vrf_rating_diff <= 0 or self.vrf_entropy_diff <= 0:
            raise ConfigError("vrf thresholds must be positive")
        if not 0 < self.vrf_iou_min <= 1:
            raise ConfigError("vrf.iou_min must lie in (0, 1]")
        if self.resample_K < 1 or self.resample_S < 0 or self.resample_gamma < 0:
            raise ConfigError("resample.K >= 1, resample.S >= 0, resample.gamma >= 0 required")
        if self.sim_steps < 0 or self.sim_images < 2 or self.sim_batch_images < 2:
            raise ConfigError("sim.steps >= 0, sim.images >= 2, sim.batch_images >= 2 required")
        if self.sim_inner_epochs < 1 or self.sim_lr < 0:
            raise ConfigError("sim.inner_epochs >= 1 and sim.lr >= 0 required")


# file key -> dataclass field
FIELDS: Dict[str, str] = {
    f.name.replace("_", ".", 1) if f.name.split("_", 1)[0] in ("klc", "vrf", "resample", "sim", "eval") else f.name: f.name
    for f in dataclasses.fields(EngineConfig)
}
_TYPES = {f.name: f.type for f in dataclasses.fields(EngineConfig)}


def _coerce(key: str, field: str, raw: str) -> Any:
    kind = _TYPES[field]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind}") from None
    return raw


def parse_config(text: str, base: Optional[EngineConfig] = None) -> EngineConfig:
    values: Dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in FIELDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[FIELDS[key]] = _coerce(key, FIELDS[key], raw)
    cfg = dataclasses.replace(base or EngineConfig(), **values)
    cfg.validate()
    return cfg


def dump_config(cfg: EngineConfig) -> str:
    lines = []
    for key, field in FIELDS.items():
        value = getattr(cfg, field)
        lines.append(f"{key} = {value!r}" if isinstance(value, float) else f"{key} = {value}")
    return "\n".join(lines) + "\n"


def default_config_text() -> str:
    return resources.files("iqa_rl").joinpath("data/default.cfg").read_text(encoding="utf-8")


def load_config(path: Union[str, Path, None] = None) -> EngineConfig:
    """Load ``path`` on top of the shipped defaults (or just the defaults)."""
    base = parse_config(default_config_text())
    if path is None:
        return base
    return parse_config(Path(path).read_text(encoding="utf-8"), base=base)
