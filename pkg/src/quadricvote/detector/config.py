"""Detector configuration: one dataclass, loadable from TOML or JSON."""

from __future__ import annotations

import json
import sys
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


@dataclass(frozen=True)
class DetectorConfig:
    # Distances are fractions of the normalized cloud diameter unless noted.
    tau_s: float = 0.03
    omega: float = 1.0
    tau: float = 0.01  # algebraic incidence threshold on unit-norm q
    tau_n: float = 0.85
    s_min: int = 10
    bin_count: int = 90
    max_bases: int = 200
    max_attempts: int = 1000
    basis_min_dist: float = 0.02
    basis_max_dist: float = 0.5
    basis_min_angle_deg: float = 10.0
    normal_k: int = 12
    don_radius_small: float = 0.02
    don_radius_large: float = 0.1
    don_threshold: float = 0.1
    use_don: bool = False
    remove_planes: bool = False
    plane_tau: float = 0.01  # point-to-plane distance, unit-ball units
    eps_close: float = 0.5
    eps_far: float = 0.3
    close_gate: float = 0.5  # L1 gate of d_close
    refine: bool = True
    min_score: float = 0.04
    min_exclusive: float = 0.5  # share of support not explained by better hypotheses
    sphere_tau: float = 0.01  # point-to-sphere distance, unit-ball units
    sphere_eps: float = 0.05
    seed: int = 0

    def __post_init__(self):
        positive = (
            "tau_s", "omega", "tau", "tau_n", "s_min", "bin_count", "max_bases", "max_attempts",
            "basis_max_dist", "normal_k", "don_radius_small", "don_radius_large",
            "don_threshold", "plane_tau", "eps_close", "eps_far", "close_gate",
            "sphere_tau", "sphere_eps",
        )
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)!r}")
        if not 0 <= self.basis_min_dist < self.basis_max_dist:
            raise ValueError("need 0 <= basis_min_dist < basis_max_dist")
        if not self.don_radius_small < self.don_radius_large:
            raise ValueError("need don_radius_small < don_radius_large")
        for name in ("min_score", "min_exclusive"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in [0, 1]")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def with_overrides(self, **overrides: Any) -> DetectorConfig:
        """Copy with the non-None overrides applied."""
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> DetectorConfig:
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(data) - set(known))
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path: str | Path) -> DetectorConfig:
        path = Path(path)
        if path.suffix.lower() == ".toml":
            with path.open("rb") as fh:
                data = tomllib.load(fh)
        elif path.suffix.lower() == ".json":
            data = json.loads(path.read_text())
        else:
            raise ValueError(f"{path}: config must be .toml or .json")
        data = data.get("detector", data)
        return cls.from_dict(data)
