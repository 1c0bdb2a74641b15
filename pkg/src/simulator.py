"""Ground-truth parameters and synthetic series for estimation experiments.

Randomness comes from numpy's PCG64 seeded through a SeedSequence; the seed is
split into independent substreams (parameters, state noise, observation noise)
so changing one process never shifts the draws of another.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from src.errors import ConfigError
from src.params import LatentSeries, LdsParams, ObservationSeries, validate_params


STABLE_RADIUS = 0.95

_PARAM_STREAM, _STATE_STREAM, _OBS_STREAM = range(3)


def _stream(seed: int, which: int) -> np.random.Generator:
    children = np.random.SeedSequence(seed).spawn(3)
    return np.random.Generator(np.random.PCG64(children[which]))


@dataclass(frozen=True)
class SimConfig:
    p: int
    d: int
    T: int
    sparsity_level: float = 0.2
    diag_boost: float = 1.0
    r_scale: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if min(self.p, self.d, self.T) < 1:
            raise ConfigError("p, d and T must be positive integers")
        if self.d > min(self.p, self.T):
            raise ConfigError(f"d={self.d} exceeds min(p, T)={min(self.p, self.T)}")
        if not 0.0 <= self.sparsity_level <= 1.0:
            raise ConfigError("sparsity_level must lie in [0, 1]")
        if not (self.diag_boost > 0 and self.r_scale > 0):
            raise ConfigError("diag_boost and r_scale must be > 0")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")


def spectral_radius(A: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(A)))) if A.size else 0.0


def generate_params(cfg: SimConfig) -> LdsParams:
    rng = _stream(cfg.seed, _PARAM_STREAM)
    d = cfg.d

    C = np.sort(rng.standard_normal((cfg.p, d)), axis=0)

    A = rng.standard_normal((d, d)) + cfg.diag_boost * np.eye(d)
    # ceil, so at least the requested fraction is zero
    n_zero = math.ceil(cfg.sparsity_level * d * d - 1e-9)
    if n_zero:
        smallest = np.argsort(np.abs(A), axis=None, kind="stable")[:n_zero]
        A.flat[smallest] = 0.0
    radius = spectral_radius(A)
    if radius > STABLE_RADIUS:
        A = A / (radius / STABLE_RADIUS)

    logging.debug("Generated A with %d zeros and spectral radius %.4f", n_zero, spectral_radius(A))
    return LdsParams(A=A, C=C, R_diag=np.full(cfg.p, cfg.r_scale), pi0=np.zeros(d))


def simulate_series(params: LdsParams, T: int, seed: int) -> tuple[LatentSeries, ObservationSeries]:
    violations = validate_params(params, params.p, params.d)
    if violations:
        raise ConfigError("cannot simulate from invalid parameters: " + "; ".join(violations))
    if T < 1:
        raise ConfigError("T must be >= 1")

    state_noise = _stream(seed, _STATE_STREAM).standard_normal((params.d, T))
    obs_noise = _stream(seed, _OBS_STREAM).standard_normal((params.p, T))

    X = np.empty((params.d, T + 1))
    X[:, 0] = params.pi0
    for t in range(1, T + 1):
        X[:, t] = params.A @ X[:, t - 1] + state_noise[:, t - 1]
    Y = params.C @ X[:, 1:] + np.sqrt(params.R_diag)[:, None] * obs_noise
    return LatentSeries(X), ObservationSeries(Y)
