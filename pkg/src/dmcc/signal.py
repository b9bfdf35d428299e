"""Linear measurement model, alpha-stable sampling and gated impulsive noise.

Each node draws from its own generator per purpose, keyed off a single seed,
so the whole data stream is a pure function of ``(config, seed)`` and nodes
never share noise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

REGRESSOR, NOISE = 0, 1


def stream_rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))


@dataclass(frozen=True)
class AlphaStableParams:
    """Alpha-stable law with characteristic function

    ``exp(j*delta*t - dispersion*|t|**alpha * (1 + j*beta*sign(t)*S(t, alpha)))``

    where ``S = tan(alpha*pi/2)`` for alpha != 1 and ``(2/pi)*log|t|`` otherwise.
    """
    alpha: float = 1.2
    beta: float = 0.0
    dispersion: float = 1.0
    location: float = 0.0

    def __post_init__(self):
        if not 0 < self.alpha <= 2:
            raise ValueError(f"alpha must be in (0, 2], got {self.alpha}")
        if not -1 <= self.beta <= 1:
            raise ValueError(f"beta must be in [-1, 1], got {self.beta}")
        if not self.dispersion > 0:
            raise ValueError(f"dispersion must be positive, got {self.dispersion}")


@dataclass(frozen=True)
class NoiseModel:
    kind: str = "impulsive"
    gaussian_variance: float = 0.0
    arrival_probability: float = 0.2
    stable: AlphaStableParams = AlphaStableParams()

    def __post_init__(self):
        if self.kind not in ("gaussian", "impulsive"):
            raise ValueError(f"noise kind must be 'gaussian' or 'impulsive', got {self.kind!r}")
        if not 0 <= self.arrival_probability <= 1:
            raise ValueError("arrival_probability must be in [0, 1]")
        if self.gaussian_variance < 0:
            raise ValueError("gaussian_variance must be nonnegative")

    @property
    def variance(self) -> float:
        """Noise variance; infinite for gated stable noise with alpha < 2."""
        if self.kind == "gaussian":
            return self.gaussian_variance
        c, st = self.arrival_probability, self.stable
        if c == 0:
            return 0.0
        if st.alpha < 2:
            return math.inf
        return c * (2 * st.dispersion + st.location ** 2) - (c * st.location) ** 2


@dataclass(frozen=True)
class MeasurementModel:
    true_weights: np.ndarray
    regressor_variance: float | np.ndarray = 1.0

    def __post_init__(self):
        w = np.asarray(self.true_weights, dtype=float)
        if w.ndim != 1 or w.size < 1:
            raise ValueError("true_weights must be a nonempty vector")
        if not np.all(np.isfinite(w)):
            raise ValueError("true_weights must be finite")
        if np.any(np.asarray(self.regressor_variance) <= 0):
            raise ValueError("regressor variances must be positive")
        w.setflags(write=False)
        object.__setattr__(self, "true_weights", w)

    @property
    def m(self) -> int:
        return self.true_weights.size

    def node_variance(self, k: int) -> float:
        v = np.asarray(self.regressor_variance, dtype=float)
        return float(v) if v.ndim == 0 else float(v[k])


def init_true_weights(m: int, seed: int) -> np.ndarray:
    """Unknown parameter vector ``randn(m) / sqrt(m)``."""
    if m < 1:
        raise ValueError("m must be >= 1")
    return np.random.default_rng(seed).standard_normal(m) / math.sqrt(m)


def sample_alpha_stable(params: AlphaStableParams, rng: np.random.Generator, size=None):
    """Chambers-Mallows-Stuck draw(s) from ``params``.

    Returns a float when ``size`` is None, otherwise an array.
    """
    a = params.alpha
    v = rng.uniform(-np.pi / 2, np.pi / 2, size)
    w = rng.standard_exponential(size)
    if a == 1:
        # the log-|t| branch keeps its sign convention; scale = dispersion
        b, scale = params.beta, params.dispersion
        hb = np.pi / 2 + b * v
        x = (2 / np.pi) * (hb * np.tan(v) - b * np.log((np.pi / 2) * w * np.cos(v) / hb))
        y = scale * x + (2 / np.pi) * b * scale * math.log(scale) + params.location
    else:
        # tan branch: the +j*beta sign in the exponent flips the usual skew
        b = -params.beta
        scale = params.dispersion ** (1 / a)
        t = b * math.tan(np.pi * a / 2)
        shift = math.atan(t) / a
        s = (1 + t * t) ** (1 / (2 * a))
        x = (s * np.sin(a * (v + shift)) / np.cos(v) ** (1 / a)
             * (np.cos(v - a * (v + shift)) / w) ** ((1 - a) / a))
        y = scale * x + params.location
    return float(y) if size is None else y


def sample_noise(model: NoiseModel, rng: np.random.Generator, size=None):
    """Gaussian noise, or a Bernoulli(c) gate times an alpha-stable draw.

    Both gate and stable value are always drawn so the stream position does
    not depend on the gate outcome.
    """
    if model.kind == "gaussian":
        out = math.sqrt(model.gaussian_variance) * rng.standard_normal(size)
    else:
        gate = rng.random(size) < model.arrival_probability
        out = np.where(gate, sample_alpha_stable(model.stable, rng, size), 0.0)
    return float(out) if size is None else out


def generate_node_datum(model: MeasurementModel, noise: NoiseModel, k: int,
                        rng: np.random.Generator) -> tuple[np.ndarray, float]:
    u = math.sqrt(model.node_variance(k)) * rng.standard_normal(model.m)
    d = float(model.true_weights @ u) + sample_noise(noise, rng)
    return u, d


@dataclass(frozen=True)
class DataStream:
    """Regressors ``(I, N, M)``, measurements ``(I, N)`` and the noise that went in."""
    regressors: np.ndarray
    measurements: np.ndarray
    noise: np.ndarray

    @property
    def iterations(self) -> int:
        return self.measurements.shape[0]

    def snapshot(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        return self.regressors[i], self.measurements[i]


def generate_stream(model: MeasurementModel, noise: NoiseModel, n_nodes: int, iterations: int,
                    seed: int, run: int = 0) -> DataStream:
    """Data for one Monte Carlo run; node ``k`` uses streams ``(run, k, purpose)``."""
    m = model.m
    u = np.empty((iterations, n_nodes, m))
    v = np.empty((iterations, n_nodes))
    for k in range(n_nodes):
        u[:, k, :] = math.sqrt(model.node_variance(k)) * stream_rng(seed, run, k, REGRESSOR).standard_normal((iterations, m))
        v[:, k] = sample_noise(noise, stream_rng(seed, run, k, NOISE), iterations)
    d = u @ model.true_weights + v
    return DataStream(u, d, v)
