"""Adaptation and combination steps for diffusion MCC and its baselines.

Estimates are stacked row-wise, ``W[k]`` being node k's M-vector. A
combination matrix ``C`` (columns sum to one) fuses them as ``C.T @ W``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

CRITERIA = ("mcc", "lms", "lmp", "mee")
MODES = ("atc", "cta", "general", "noncoop")
SQRT_2PI = math.sqrt(2 * math.pi)


class DivergenceError(FloatingPointError):
    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


def gaussian_kernel(e, sigma):
    """``exp(-e**2 / (2 sigma**2)) / (sigma sqrt(2 pi))``."""
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma <= 0):
        raise ValueError("kernel size sigma must be positive")
    e = np.asarray(e, dtype=float)
    out = np.exp(-0.5 * (e / sigma) ** 2) / (sigma * SQRT_2PI)
    return float(out) if out.ndim == 0 else out


def _as_identity_or_matrix(c):
    if c is None:
        return None
    c = np.asarray(getattr(c, "entries", c), dtype=float)
    if np.array_equal(c, np.eye(c.shape[0])):
        return None
    return c


@dataclass(frozen=True)
class AlgorithmConfig:
    """One diffusion algorithm.

    ``pre``, ``data`` and ``post`` are the diffusion-I, incremental and
    diffusion-II combiners; ``None`` stands for the identity. ``eta``,
    ``sigma`` and ``p`` may be per-node arrays.
    """
    criterion: str = "mcc"
    mode: str = "atc"
    eta: float | np.ndarray = 0.06
    sigma: float | np.ndarray = 1.0
    p: float | np.ndarray = 1.2
    window: int = 8
    pre: np.ndarray | None = None
    data: np.ndarray | None = None
    post: np.ndarray | None = None

    def __post_init__(self):
        if self.criterion not in CRITERIA:
            raise ValueError(f"unknown criterion {self.criterion!r}; expected one of {CRITERIA}")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if np.any(np.asarray(self.eta) <= 0):
            raise ValueError("step size eta must be positive")
        if self.criterion in ("mcc", "mee") and np.any(np.asarray(self.sigma) <= 0):
            raise ValueError("kernel size sigma must be positive")
        if self.criterion == "lmp" and np.any((np.asarray(self.p) < 1) | (np.asarray(self.p) > 2)):
            raise ValueError("power p must lie in [1, 2]")
        if self.criterion == "mee" and self.window < 1:
            raise ValueError("window must be a positive integer")
        mats = {k: _as_identity_or_matrix(getattr(self, k)) for k in ("pre", "data", "post")}
        forced = {"atc": ("pre", "data"), "cta": ("data", "post"),
                  "noncoop": ("pre", "data", "post"), "general": ()}[self.mode]
        for name in forced:
            if mats[name] is not None:
                raise ValueError(f"mode {self.mode!r} requires the {name} combiner to be the identity")
        for name, c in mats.items():
            if c is not None:
                c.setflags(write=False)
            object.__setattr__(self, name, c)

    def param(self, name, node=None):
        v = np.asarray(getattr(self, name), dtype=float)
        if v.ndim == 0 or node is None:
            return v if v.ndim else float(v)
        return float(v[node])


def error_nonlinearity(e, criterion, sigma=1.0, p=1.2):
    """Scalar factor ``f(e)`` in the update ``w + eta * f(e) * u``."""
    e = np.asarray(e, dtype=float)
    if criterion == "mcc":
        return gaussian_kernel(e, sigma) * e
    if criterion == "lms":
        return e
    if criterion == "lmp":
        # p == 1 gives sign(e) with sign(0) = 0
        return np.abs(e) ** (np.asarray(p) - 1) * np.sign(e)
    raise ValueError(f"criterion {criterion!r} has no pointwise error nonlinearity")


def mee_gradient(w, window_u, window_d, sigma):
    """Gradient of the quadratic information potential of the window errors.

    ``V(w) = mean_ij kappa_{sigma*sqrt(2)}(e_i - e_j)`` with ``e = d - U w``.
    Batched over leading axes: ``w (..., M)``, ``window_u (..., L, M)``,
    ``window_d (..., L)``.
    """
    w = np.asarray(w, dtype=float)
    window_u = np.asarray(window_u, dtype=float)
    e = np.asarray(window_d, dtype=float) - np.einsum("...lm,...m->...l", window_u, w)
    n = e.shape[-1]
    s2 = 2.0 * np.asarray(sigma, dtype=float) ** 2
    s2 = s2.reshape(s2.shape + (1, 1)) if s2.ndim else s2
    diff = e[..., :, None] - e[..., None, :]
    coef = diff * np.exp(-0.5 * diff ** 2 / s2) / (np.sqrt(s2) * SQRT_2PI) / s2 / n ** 2
    # sum_ij coef_ij (u_i - u_j) = sum_i (row_i - col_i) u_i
    r = coef.sum(axis=-1) - coef.sum(axis=-2)
    return np.einsum("...l,...lm->...m", r, window_u)


def incremental_update(w, u, d, config: AlgorithmConfig, history=None, node=None):
    """One local adaptation step from datum ``(u, d)``.

    ``history`` (mee only) is ``(past_u (h, M), past_d (h,))``; the current
    datum is appended and the last ``config.window`` samples are used.
    Batched over leading axes of ``w`` and ``u`` for the pointwise criteria.
    """
    w = np.asarray(w, dtype=float)
    u = np.asarray(u, dtype=float)
    d = np.asarray(d, dtype=float)
    if not (np.all(np.isfinite(w)) and np.all(np.isfinite(u)) and np.all(np.isfinite(d))):
        raise DivergenceError("non-finite input to incremental_update", node)
    eta = config.param("eta", node)
    sigma = config.param("sigma", node)
    if config.criterion == "mee":
        past_u, past_d = history if history is not None else (np.empty((0,) + u.shape), np.empty(0))
        win_u = np.concatenate([np.asarray(past_u, dtype=float).reshape(-1, u.size), u[None]])[-config.window:]
        win_d = np.concatenate([np.asarray(past_d, dtype=float).ravel(), [float(d)]])[-config.window:]
        return w + eta * mee_gradient(w, win_u, win_d, sigma)
    e = d - np.einsum("...m,...m->...", u, w)
    f = error_nonlinearity(e, config.criterion, sigma, config.param("p", node))
    return w + (np.asarray(eta) * f)[..., None] * u


def effective_step(e, config: AlgorithmConfig, node=None):
    """Equivalent LMS step ``eta * G_sigma(e)`` of an MCC update."""
    if config.criterion != "mcc":
        raise ValueError("effective_step is defined for the mcc criterion only")
    return config.param("eta", node) * gaussian_kernel(e, config.param("sigma", node))


def combine(estimates, weights, k: int):
    """Convex combination ``sum_l weights[l, k] * estimates[l]``."""
    c = np.asarray(getattr(weights, "entries", weights), dtype=float)
    return c[:, k] @ np.asarray(estimates, dtype=float)


@dataclass(frozen=True)
class NetworkState:
    weights: np.ndarray
    intermediates: np.ndarray
    window_u: np.ndarray = field(default_factory=lambda: np.empty((0, 0, 0)))
    window_d: np.ndarray = field(default_factory=lambda: np.empty((0, 0)))
    iteration: int = 0

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    @property
    def m(self) -> int:
        return self.weights.shape[1]


def init_state(n: int, m: int, initial=None) -> NetworkState:
    w = np.zeros((n, m)) if initial is None else np.array(initial, dtype=float).reshape(n, m)
    return NetworkState(w, w.copy(), np.empty((n, 0, m)), np.empty((n, 0)), 0)


def _columns(v, n):
    v = np.asarray(v, dtype=float)
    return v if v.ndim == 0 else v.reshape(n)


def _adapt_local(phi, u, d, config, win_u, win_d):
    n = phi.shape[0]
    eta = _columns(config.eta, n)
    sigma = _columns(config.sigma, n)
    if config.criterion == "mee":
        col = eta[:, None] if np.ndim(eta) else eta
        return phi + col * mee_gradient(phi, win_u, win_d, sigma)
    e = d - np.einsum("km,km->k", u, phi)
    f = error_nonlinearity(e, config.criterion, sigma, _columns(config.p, n))
    return phi + (eta * f)[:, None] * u


def _adapt_shared(phi, u, d, config, win_u, win_d):
    """Incremental phase with neighbor data weighted by the ``data`` combiner."""
    n = phi.shape[0]
    a = config.data
    eta = _columns(config.eta, n)
    if config.criterion == "mee":
        out = phi.copy()
        sig = _columns(config.sigma, n)
        for k in range(n):
            sk = sig if np.ndim(sig) == 0 else sig[k]
            ek = eta if np.ndim(eta) == 0 else eta[k]
            for l in np.flatnonzero(a[:, k]):
                out[k] += ek * a[l, k] * mee_gradient(phi[k], win_u[l], win_d[l], sk)
        return out
    # err[k, l] = d_l - u_l . phi_k
    err = d[None, :] - phi @ u.T
    sigma = _columns(config.sigma, n)
    p = _columns(config.p, n)
    f = error_nonlinearity(err, config.criterion,
                           sigma[:, None] if np.ndim(sigma) else sigma,
                           p[:, None] if np.ndim(p) else p)
    step = (a.T * f) @ u
    return phi + (eta[:, None] if np.ndim(eta) else eta) * step


def run_iteration(state: NetworkState, regressors, measurements, config: AlgorithmConfig) -> NetworkState:
    """Advance every node by one time step; returns a fresh state.

    ``regressors`` is ``(N, M)`` and ``measurements`` ``(N,)`` for the current
    instant.
    """
    u = np.asarray(regressors, dtype=float)
    d = np.asarray(measurements, dtype=float)
    w = state.weights
    for name, arr in (("weights", w), ("regressors", u), ("measurements", d)):
        bad = ~np.isfinite(arr.reshape(arr.shape[0], -1)).all(axis=1)
        if bad.any():
            k = int(np.flatnonzero(bad)[0])
            raise DivergenceError(f"non-finite {name} at node {k}", k)

    win_u, win_d = state.window_u, state.window_d
    if config.criterion == "mee":
        win_u = np.concatenate([win_u, u[:, None, :]], axis=1)[:, -config.window:]
        win_d = np.concatenate([win_d, d[:, None]], axis=1)[:, -config.window:]

    phi = w if config.pre is None else config.pre.T @ w
    if config.data is None:
        psi = _adapt_local(phi, u, d, config, win_u, win_d)
    else:
        psi = _adapt_shared(phi, u, d, config, win_u, win_d)
    new_w = psi if config.post is None else config.post.T @ psi
    return NetworkState(new_w, psi, win_u, win_d, state.iteration + 1)
