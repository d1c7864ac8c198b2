"""Forward simulation of the gamma chain and the lognormal chain.

Paths are generated on the log scale: one gamma-chain step is
``log u_{t+1} = log u_t + log G2 - log G1`` with ``G1, G2 ~ Ga(A, 1)``
(``v_t = G1 / u_t`` and ``u_{t+1} = G2 / v_t``), which keeps long paths
finite even when ``u`` itself would overflow.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DomainError
from .model import GamChainParams, LatentPath, LogNParams, ReturnSeries
from .numerics import sample_log_standard_gamma

BURN_IN = 100


@dataclass(frozen=True)
class SyntheticDataset:
    series: ReturnSeries
    latents: LatentPath
    params: GamChainParams | LogNParams
    seed: int | None = None

    @property
    def model(self) -> str:
        return "gam" if isinstance(self.params, GamChainParams) else "logn"


def _check_common(length: int, u0: float) -> None:
    if length < 2:
        raise DomainError(f"T must be at least 2, got {length}")
    if not (math.isfinite(u0) and u0 > 0.0):
        raise DomainError(f"u0 must be positive, got {u0}")


def gamchain_log_path(params: GamChainParams, length: int, rng: np.random.Generator, *,
                      u0: float = 1.0, burn_in: int = BURN_IN) -> tuple[np.ndarray, np.ndarray]:
    """Sample (log u_1..T, log v_1..T-1) after discarding ``burn_in`` steps."""
    _check_common(length, u0)
    a = params.shape_a
    steps = burn_in + length - 1
    log_g1 = sample_log_standard_gamma(a, rng, steps)
    log_g2 = sample_log_standard_gamma(a, rng, steps)
    log_u = np.empty(steps + 1)
    log_u[0] = math.log(u0)
    np.cumsum(log_g2 - log_g1, out=log_u[1:])
    log_u[1:] += log_u[0]
    log_v = log_g1 - log_u[:-1]
    return log_u[burn_in:], log_v[burn_in:]


def simulate_gamchain(params: GamChainParams, length: int, rng: np.random.Generator, *,
                      u0: float = 1.0, seed: int | None = None, instrument_id: str = "sim-gam",
                      burn_in: int = BURN_IN) -> SyntheticDataset:
    log_u, log_v = gamchain_log_path(params, length, rng, u0=u0, burn_in=burn_in)
    returns = rng.standard_normal(length) * np.exp(-0.5 * log_u)
    if not np.all(np.isfinite(returns)):
        raise DomainError("simulated returns left the floating-point range; use a shorter T or larger A")
    series = ReturnSeries(returns, instrument_id, "sim")
    return SyntheticDataset(series, LatentPath(log_u, log_v), params, seed)


def logn_log_path(params: LogNParams, length: int, rng: np.random.Generator, *,
                  u0: float = 1.0, burn_in: int = BURN_IN) -> np.ndarray:
    _check_common(length, u0)
    steps = burn_in + length - 1
    log_u = np.empty(steps + 1)
    log_u[0] = math.log(u0)
    np.cumsum(rng.standard_normal(steps) * math.sqrt(params.step_variance), out=log_u[1:])
    log_u[1:] += log_u[0]
    return log_u[burn_in:]


def simulate_logn(params: LogNParams, length: int, rng: np.random.Generator, *,
                  u0: float = 1.0, seed: int | None = None, instrument_id: str = "sim-logn",
                  burn_in: int = BURN_IN) -> SyntheticDataset:
    log_u = logn_log_path(params, length, rng, u0=u0, burn_in=burn_in)
    returns = rng.standard_normal(length) * np.exp(-0.5 * log_u)
    if not np.all(np.isfinite(returns)):
        raise DomainError("simulated returns left the floating-point range; use a shorter T")
    series = ReturnSeries(returns, instrument_id, "sim")
    return SyntheticDataset(series, LatentPath(log_u), params, seed)


def simulate(model: str, parameter: float, length: int, seed: int, *, u0: float = 1.0,
             instrument_id: str | None = None) -> SyntheticDataset:
    """Seeded convenience wrapper used by the CLI and the test corpora."""
    from .numerics import default_rng

    rng = default_rng(seed)
    if model == "gam":
        return simulate_gamchain(GamChainParams(parameter), length, rng, u0=u0, seed=seed,
                                 instrument_id=instrument_id or f"sim-gam-{seed}")
    if model == "logn":
        return simulate_logn(LogNParams(parameter), length, rng, u0=u0, seed=seed,
                             instrument_id=instrument_id or f"sim-logn-{seed}")
    raise DomainError(f"unknown model {model!r}; expected 'gam' or 'logn'")


def write_dataset(dataset: SyntheticDataset, csv_path: str | Path) -> tuple[Path, Path]:
    """Write the returns CSV plus a JSON sidecar with params, seed and latents.

    The CSV uses the ``timestamp,return`` layout accepted by
    :func:`gamchain.ingest.load_series`; timestamps are the step index.
    """
    from .ingest import write_returns_csv

    csv_path = Path(csv_path)
    write_returns_csv(dataset.series, csv_path)
    sidecar = csv_path.with_suffix(".json")
    if isinstance(dataset.params, GamChainParams):
        params = {"A": dataset.params.shape_a}
    else:
        params = {"S2": dataset.params.step_variance}
    payload = {
        "model": dataset.model,
        "params": params,
        "seed": dataset.seed,
        "length": len(dataset.series),
        "instrument_id": dataset.series.instrument_id,
        "log_u": [float(x) for x in dataset.latents.log_u],
        "log_v": None if dataset.latents.log_v is None else [float(x) for x in dataset.latents.log_v],
    }
    sidecar.write_text(json.dumps(payload, indent=1) + "\n")
    return csv_path, sidecar
