"""Settings and report types shared by the four estimation engines."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace

from .errors import ConfigurationError
from .model import GamChainParams, LogNParams

ENGINES = ("c1", "c2", "c3", "c4")
ENGINE_NAMES = {
    "c1": "LogN-Chain/VI",
    "c2": "LogN-Chain/MC",
    "c3": "Gam-Chain/VI",
    "c4": "Gam-Chain/MC",
}


@dataclass(frozen=True)
class FitConfig:
    max_rounds: int = 1000
    tol_a: float = 1e-6          # relative change of the parameter between rounds
    sweeps: int = 1              # coordinate sweeps per E-step (VI engines)
    step0: float = 0.1           # initial gradient-ascent step on log A
    a_init: float = 1.0
    s2_init: float = 1.0
    paper_literal: bool = False  # C3 only: printed boundary rows
    particles: int = 20          # MC engines
    trajectories: int | None = None  # backward trajectories, default = particles
    seed: int = 0
    damping: float = 1.0         # C1 only
    fixed_iterations: bool = False  # run exactly max_rounds (benchmark mode)
    track_objective: bool = True

    def __post_init__(self):
        if self.max_rounds < 1:
            raise ConfigurationError("max_rounds must be >= 1")
        if self.sweeps < 1:
            raise ConfigurationError("sweeps must be >= 1")
        if not self.tol_a > 0:
            raise ConfigurationError("tol_a must be positive")
        if not self.step0 > 0:
            raise ConfigurationError("step0 must be positive")
        if not self.a_init > 0 or not self.s2_init > 0:
            raise ConfigurationError("initial parameters must be positive")
        if self.particles < 2:
            raise ConfigurationError("at least 2 particles are required")
        if self.trajectories is not None and self.trajectories < 1:
            raise ConfigurationError("trajectories must be >= 1")
        if not 0.0 < self.damping <= 1.0:
            raise ConfigurationError("damping must lie in (0, 1]")

    @property
    def n_trajectories(self) -> int:
        return self.particles if self.trajectories is None else self.trajectories

    def updated(self, **changes) -> "FitConfig":
        return replace(self, **changes)

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


@dataclass
class FitReport:
    """Loop-level bookkeeping of one EM run.

    ``a_trace`` holds the parameter after every round: A for the gamma
    chain, S^2 for the lognormal chain.
    """

    engine: str
    params: GamChainParams | LogNParams
    objective_trace: list[float] = field(default_factory=list)
    a_trace: list[float] = field(default_factory=list)
    iterations: int = 0
    estep_seconds: float = 0.0
    mstep_seconds: float = 0.0
    converged: bool = False

    @property
    def parameter_name(self) -> str:
        return "A" if isinstance(self.params, GamChainParams) else "S2"

    @property
    def parameter(self) -> float:
        if isinstance(self.params, GamChainParams):
            return self.params.shape_a
        return self.params.step_variance

    def to_dict(self) -> dict:
        """Deterministic part of the report (no wall-clock fields)."""
        return {
            "engine": self.engine,
            "engine_name": ENGINE_NAMES.get(self.engine, self.engine),
            "parameter": {"name": self.parameter_name, "value": self.parameter},
            "iterations": self.iterations,
            "converged": self.converged,
            "a_trace": list(self.a_trace),
            "objective_trace": list(self.objective_trace),
        }

    def timing_dict(self) -> dict:
        return {
            "engine": self.engine,
            "iterations": self.iterations,
            "estep_seconds": self.estep_seconds,
            "mstep_seconds": self.mstep_seconds,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "FitReport":
        par = data["parameter"]
        params = GamChainParams(par["value"]) if par["name"] == "A" else LogNParams(par["value"])
        return cls(
            engine=data["engine"],
            params=params,
            objective_trace=list(data.get("objective_trace", [])),
            a_trace=list(data.get("a_trace", [])),
            iterations=int(data["iterations"]),
            converged=bool(data["converged"]),
        )


def relative_change(new: float, old: float) -> float:
    return abs(new - old) / abs(old)
