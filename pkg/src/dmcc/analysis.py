"""Mean and mean-square theory of ATC diffusion MCC.

Stacked (global) quantities use node-major ordering: ``W = col{w_1, ..., w_N}``.
The global combiner maps adapted estimates to fused ones, ``W = B Phi`` with
``B = C.T kron I_M`` for a combination matrix ``C`` with unit column sums.

``bvec`` splits a matrix into ``m x m`` blocks and stacks their column-major
``vec`` block column by block column; ``block_kron`` is the matching block
Kronecker product, so that ``bvec(X S Y) == block_kron(Y.T, X, m) @ bvec(S)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .diffusion import SQRT_2PI, AlgorithmConfig, gaussian_kernel, init_state, run_iteration
from .signal import AlphaStableParams, MeasurementModel, NoiseModel, generate_stream, sample_alpha_stable, \
    sample_noise

EIG_CLAMP = 1e-12
MSD_FLOOR = 1e-30
EXPLICIT_LIMIT = 2500  # largest (MN)^2 for which F(i) is formed explicitly


def spectral_radius(a) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(np.asarray(a, dtype=float)))))


# ---------------------------------------------------------------- block algebra

def _check_blocks(x, m):
    if x.ndim != 2 or x.shape[0] % m or x.shape[1] % m:
        raise ValueError(f"shape {x.shape} is not a multiple of block size {m}")


def bvec(x, m: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    _check_blocks(x, m)
    p, q = x.shape[0] // m, x.shape[1] // m
    # blocks[a, b] is the (a, b) block; order (b, a, col j, row i)
    blocks = x.reshape(p, m, q, m).transpose(2, 0, 3, 1)
    return blocks.reshape(-1)


def unbvec(v, m: int, shape: tuple[int, int]) -> np.ndarray:
    p, q = shape[0] // m, shape[1] // m
    if shape[0] % m or shape[1] % m or np.size(v) != shape[0] * shape[1]:
        raise ValueError(f"cannot rebuild shape {shape} with block size {m} from {np.size(v)} entries")
    blocks = np.asarray(v, dtype=float).reshape(q, p, m, m)
    return blocks.transpose(1, 3, 0, 2).reshape(shape)


def block_kron(a, b, m: int) -> np.ndarray:
    """Block Kronecker product: block ``(i, j)`` holds ``[a_ij kron b_kl]_{k,l}``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    _check_blocks(a, m)
    _check_blocks(b, m)
    pa, qa = a.shape[0] // m, a.shape[1] // m
    pb, qb = b.shape[0] // m, b.shape[1] // m
    ab = a.reshape(pa, m, qa, m).transpose(0, 2, 1, 3)   # (i, j, r, s)
    bb = b.reshape(pb, m, qb, m).transpose(0, 2, 1, 3)   # (k, l, t, u)
    # (i, k, r, t) x (j, l, s, u) ordering of a_ij kron b_kl
    out = np.einsum("ijrs,kltu->ikrtjlsu", ab, bb)
    return out.reshape(pa * pb * m * m, qa * qb * m * m)


# ------------------------------------------------------------- global model

def regressor_autocorrelation(profiles, m: int) -> np.ndarray:
    """Block-diagonal ``R_U``; ``profiles`` holds per-node variances or ``m x m`` matrices."""
    blocks = []
    for prof in profiles:
        p = np.asarray(prof, dtype=float)
        if p.ndim == 0:
            if p <= 0:
                raise ValueError("regressor variances must be positive")
            p = p * np.eye(m)
        if p.shape != (m, m):
            raise ValueError(f"regressor block has shape {p.shape}, expected ({m}, {m})")
        blocks.append(p)
    n = len(blocks)
    r = np.zeros((n * m, n * m))
    for k, blk in enumerate(blocks):
        r[k * m:(k + 1) * m, k * m:(k + 1) * m] = blk
    return r


def node_blocks(x, m: int) -> list[np.ndarray]:
    n = x.shape[0] // m
    return [x[k * m:(k + 1) * m, k * m:(k + 1) * m] for k in range(n)]


@dataclass(frozen=True)
class GlobalModel:
    """Network-level description of ATC diffusion for the analysis recursions.

    ``combiner`` is the N x N combination matrix (``delta`` entries);
    ``expected_step`` holds ``E[rho_k]`` and ``noise_variance`` the per-node
    measurement-noise variances.
    """
    combiner: np.ndarray
    r_u: np.ndarray
    expected_step: np.ndarray
    noise_variance: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.combiner.shape[0]

    @property
    def m(self) -> int:
        return self.r_u.shape[0] // self.n

    @property
    def b(self) -> np.ndarray:
        return np.kron(np.asarray(self.combiner, dtype=float).T, np.eye(self.m))

    @property
    def ey(self) -> np.ndarray:
        return np.kron(np.diag(np.broadcast_to(self.expected_step, (self.n,))), np.eye(self.m))

    def mean_transfer(self) -> np.ndarray:
        """``B (I - E[Y] R_U)``."""
        return self.b @ (np.eye(self.n * self.m) - self.ey @ self.r_u)


def build_global_model(combiner, r_u, expected_step, noise_variance=None) -> GlobalModel:
    c = np.asarray(getattr(combiner, "entries", combiner), dtype=float)
    n = c.shape[0]
    r_u = np.asarray(r_u, dtype=float)
    if r_u.shape[0] % n or r_u.shape[0] != r_u.shape[1]:
        raise ValueError("R_U must be square with size a multiple of N")
    if not np.allclose(r_u, r_u.T):
        raise ValueError("R_U must be symmetric")
    es = np.broadcast_to(np.asarray(expected_step, dtype=float), (n,)).copy()
    nv = None if noise_variance is None else np.broadcast_to(np.asarray(noise_variance, dtype=float), (n,)).copy()
    return GlobalModel(c, r_u, es, nv)


# --------------------------------------------------------- mean performance

def _error_sampler(dist):
    if callable(dist):
        return dist
    if isinstance(dist, NoiseModel):
        return lambda rng, size: sample_noise(dist, rng, size)
    if isinstance(dist, AlphaStableParams):
        return lambda rng, size: sample_alpha_stable(dist, rng, size)
    raise TypeError(f"unsupported error distribution {dist!r}")


def estimate_kernel_expectation(error_distribution, sigma: float, n_samples: int = 100_000,
                                seed: int = 0) -> float:
    """Monte Carlo estimate of ``E[G_sigma(e)]``.

    ``error_distribution`` is a NoiseModel, AlphaStableParams, or a callable
    ``(rng, size) -> samples``.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    e = np.asarray(_error_sampler(error_distribution)(rng, n_samples), dtype=float)
    return float(np.mean(gaussian_kernel(e, sigma)))


def l1_kernel_expectation(tau: float, sigma: float, model: MeasurementModel, noise: NoiseModel,
                          node: int = 0, n_samples: int = 100_000, seed: int = 0) -> float:
    """``E[G_sigma(tau * ||u||_1 + |d|)]``, the conservative error argument
    obtained when every weight vector has l1 norm at most ``tau``."""
    rng = np.random.default_rng(seed)
    u = math.sqrt(model.node_variance(node)) * rng.standard_normal((n_samples, model.m))
    d = u @ model.true_weights + sample_noise(noise, rng, n_samples)
    arg = tau * np.abs(u).sum(axis=1) + np.abs(d)
    return float(np.mean(gaussian_kernel(arg, sigma)))


def mean_stability_bound(r_uk, sigma: float, expected_gamma: float | None = None) -> float:
    """Largest step ``eta`` keeping node k stable in the mean, ``2 / (lambda_max E[gamma])``.

    Without ``expected_gamma`` the worst case ``G_sigma(0)`` is used, which
    gives the smallest bound over all error distributions.
    """
    r = np.atleast_2d(np.asarray(r_uk, dtype=float))
    lam = float(np.max(np.linalg.eigvalsh(r)))
    if lam <= 0:
        raise ValueError("lambda_max(R_u,k) must be positive")
    if expected_gamma is None:
        expected_gamma = 1.0 / (sigma * SQRT_2PI)
    if expected_gamma <= 0:
        raise ValueError("expected kernel value must be positive")
    return 2.0 / (lam * expected_gamma)


@dataclass
class MeanRecursion:
    trajectory: np.ndarray
    spectral_radius: float

    @property
    def stable(self) -> bool:
        return self.spectral_radius < 1


def mean_error_recursion(model: GlobalModel, initial_error, iterations: int) -> MeanRecursion:
    """Iterate ``E[W~(i)] = B (I - E[Y] R_U) E[W~(i-1)]``; row 0 is the initial error."""
    t = model.mean_transfer()
    traj = np.empty((iterations + 1, t.shape[0]))
    traj[0] = np.asarray(initial_error, dtype=float)
    for i in range(iterations):
        traj[i + 1] = t @ traj[i]
    return MeanRecursion(traj, spectral_radius(t))


# -------------------------------------------------- mean-square performance

def build_fourth_moment_A(eigenvalues) -> np.ndarray:
    """Fourth-moment matrix for Gaussian regressors in the eigenbasis.

    For bvec position ``(a, b)`` (block row a, block column b) the diagonal
    block is ``Lambda_b kron Lambda_a``, except ``a == b`` where it is
    ``vec(Lambda_a) vec(Lambda_a)^T + 2 Lambda_a kron Lambda_a``.
    """
    lam = np.atleast_2d(np.asarray(eigenvalues, dtype=float))
    if np.any(lam < 0):
        raise ValueError("eigenvalues must be nonnegative")
    n, m = lam.shape
    mats = [np.diag(x) for x in lam]
    size = m * m
    out = np.zeros((n * n * size, n * n * size))
    for b in range(n):
        for a in range(n):
            blk = np.kron(mats[b], mats[a])
            if a == b:
                v = mats[a].reshape(-1, order="F")
                blk = np.outer(v, v) + 2 * np.kron(mats[a], mats[a])
            s = (b * n + a) * size
            out[s:s + size, s:s + size] = blk
    return out


@dataclass(frozen=True)
class TransientModel:
    """Eigen-decomposed model: ``R_U = Q diag(Lambda) Q^T`` and ``B_bar = Q^T B Q``."""
    eigenvalues: np.ndarray      # (N, M)
    q: np.ndarray                # (MN, MN) block diagonal
    b_bar: np.ndarray            # (MN, MN)
    a: np.ndarray | None         # fourth-moment matrix, only for small models

    @property
    def n(self) -> int:
        return self.eigenvalues.shape[0]

    @property
    def m(self) -> int:
        return self.eigenvalues.shape[1]


def build_transient_model(model: GlobalModel, explicit: bool | None = None) -> TransientModel:
    n, m = model.n, model.m
    lam = np.empty((n, m))
    q = np.zeros((n * m, n * m))
    for k, blk in enumerate(node_blocks(model.r_u, m)):
        w, v = np.linalg.eigh(blk)
        w = np.where(np.abs(w) < EIG_CLAMP, 0.0, w)
        if np.any(w < 0):
            raise ValueError(f"regressor autocorrelation of node {k} is not positive semidefinite")
        lam[k] = w
        q[k * m:(k + 1) * m, k * m:(k + 1) * m] = v
    if explicit is None:
        explicit = (n * m) ** 2 <= EXPLICIT_LIMIT
    b_bar = q.T @ model.b @ q
    return TransientModel(lam, q, b_bar, build_fourth_moment_A(lam) if explicit else None)


def _step_products(mean_rho, mean_rho2):
    """Matrix of ``E[rho_a rho_b]``: product of means off the diagonal, second moment on it."""
    mr = np.asarray(mean_rho, dtype=float)
    p = np.outer(mr, mr)
    np.fill_diagonal(p, np.asarray(mean_rho2, dtype=float))
    return p


def transfer_matrix(tm: TransientModel, mean_rho, mean_rho2) -> np.ndarray:
    """``F = [I - (I (.) Lambda E[Y]) - (Lambda E[Y] (.) I) + E[Y (.) Y] A] (B_bar^T (.) B_bar^T)``."""
    if tm.a is None:
        raise ValueError("fourth-moment matrix not built; model too large for explicit F")
    n, m = tm.n, tm.m
    mn = n * m
    ley = np.diag((np.asarray(mean_rho, dtype=float)[:, None] * tm.eigenvalues).ravel())
    eye = np.eye(mn)
    prods = _step_products(mean_rho, mean_rho2)
    # bvec position (a, b) sits at index b*N + a
    eyy = np.repeat(prods.T.ravel(), m * m)
    inner = np.eye(mn * mn) - block_kron(eye, ley, m) - block_kron(ley, eye, m) + eyy[:, None] * tm.a
    return inner @ block_kron(tm.b_bar.T, tm.b_bar.T, m)


def driving_vector(tm: TransientModel, mean_rho2, noise_variance) -> np.ndarray:
    """``bvec(R_v E[Y^2] Lambda)``; pairs with ``(B_bar^T (.) B_bar^T) zeta`` in the recursion."""
    scale = np.asarray(noise_variance, dtype=float) * np.asarray(mean_rho2, dtype=float)
    g = np.diag((scale[:, None] * tm.eigenvalues).ravel())
    return bvec(g, tm.m)


def _propagate_covariance(tm: TransientModel, cov, mean_rho, mean_rho2, noise_variance=None):
    """Matrix-form adjoint of the weighted-norm recursion (no explicit F).

    Without ``noise_variance`` only the linear part is applied.
    """
    n, m = tm.n, tm.m
    lam = tm.eigenvalues
    ley = (np.asarray(mean_rho)[:, None] * lam).ravel()
    prods = _step_products(mean_rho, mean_rho2)
    lam_flat = lam.ravel()
    inner = cov - ley[:, None] * cov - cov * ley[None, :]
    fourth = prods.repeat(m, 0).repeat(m, 1) * (lam_flat[:, None] * cov * lam_flat[None, :])
    rv = np.zeros(n) if noise_variance is None else \
        np.asarray(noise_variance, dtype=float) * np.asarray(mean_rho2, dtype=float)
    for k in range(n):
        sl = slice(k * m, (k + 1) * m)
        ck = cov[sl, sl]
        fourth[sl, sl] *= 2.0
        fourth[sl, sl] += np.asarray(mean_rho2)[k] * np.trace(lam[k][:, None] * ck) * np.diag(lam[k])
        inner[sl, sl] += rv[k] * np.diag(lam[k])
    return tm.b_bar @ (inner + fourth) @ tm.b_bar.T


def _operator_radius(tm: TransientModel, mean_rho, mean_rho2) -> float:
    from scipy.sparse.linalg import LinearOperator, eigs

    mn = tm.n * tm.m

    def matvec(x):
        c = np.asarray(x, dtype=float).reshape(mn, mn)
        return _propagate_covariance(tm, c, mean_rho, mean_rho2).ravel()

    op = LinearOperator((mn * mn, mn * mn), matvec=matvec, dtype=float)
    vals = eigs(op, k=1, which="LM", return_eigenvectors=False, maxiter=5000, tol=1e-10)
    return float(np.abs(vals[0]))


@dataclass
class TransientPrediction:
    msd: np.ndarray                  # linear network MSD, index 0 = initial
    spectral_radius: float           # of F at the last iteration
    method: str

    @property
    def msd_db(self) -> np.ndarray:
        return 10 * np.log10(np.maximum(self.msd, MSD_FLOOR))

    @property
    def stable(self) -> bool:
        return self.spectral_radius < 1


def transient_msd_model(model: GlobalModel, initial_error, mean_rho, mean_rho2,
                        iterations: int | None = None, method: str | None = None) -> TransientPrediction:
    """Predicted network MSD ``E||W~(i)||^2 / N`` for i = 0..I.

    ``mean_rho`` and ``mean_rho2`` are ``(I, N)`` sequences of ``E[rho_k(i)]``
    and ``E[rho_k(i)^2]``; ``(N,)`` vectors are held constant for
    ``iterations`` steps. ``method`` is ``"explicit"`` (forms F(i)) or
    ``"matrix"``; by default F(i) is formed only for small networks.
    """
    if model.noise_variance is None or not np.all(np.isfinite(model.noise_variance)):
        raise ValueError("transient model needs finite per-node noise variances (Gaussian regime)")
    mean_rho = np.asarray(mean_rho, dtype=float)
    mean_rho2 = np.asarray(mean_rho2, dtype=float)
    if mean_rho.ndim == 1:
        if iterations is None:
            raise ValueError("constant step moments need an iteration count")
        mean_rho = np.tile(mean_rho, (iterations, 1))
        mean_rho2 = np.tile(mean_rho2, (iterations, 1))
    if mean_rho.shape != mean_rho2.shape or mean_rho.shape[1] != model.n:
        raise ValueError("step moment sequences must both have shape (I, N)")
    n, m = model.n, model.m
    tm = build_transient_model(model, explicit=(method == "explicit") if method else None)
    method = "explicit" if tm.a is not None else "matrix"
    w0 = np.asarray(initial_error, dtype=float).reshape(-1)
    wbar = tm.q.T @ w0
    cov = np.outer(wbar, wbar)
    zeta = bvec(np.eye(n * m), m) / n
    msd = [float(np.trace(cov)) / n]
    radius = float("nan")
    if method == "explicit":
        c = bvec(cov, m)
        bb = block_kron(tm.b_bar.T, tm.b_bar.T, m)
        f = None
        for er, er2 in zip(mean_rho, mean_rho2):
            f = transfer_matrix(tm, er, er2)
            c = f.T @ c + bb.T @ driving_vector(tm, er2, model.noise_variance)
            msd.append(float(zeta @ c))
        if f is not None:
            radius = spectral_radius(f)
    else:
        for er, er2 in zip(mean_rho, mean_rho2):
            cov = _propagate_covariance(tm, cov, er, er2, model.noise_variance)
            msd.append(float(np.trace(cov)) / n)
        if len(mean_rho):
            radius = _operator_radius(tm, mean_rho[-1], mean_rho2[-1])
    return TransientPrediction(np.array(msd), radius, method)


def steady_state_fixed_point(model: GlobalModel, mean_rho, mean_rho2) -> float:
    """Network MSD fixed point of the recursion with constant step moments."""
    tm = build_transient_model(model, explicit=True)
    f = transfer_matrix(tm, mean_rho, mean_rho2)
    bb = block_kron(tm.b_bar.T, tm.b_bar.T, tm.m)
    drive = bb.T @ driving_vector(tm, mean_rho2, model.noise_variance)
    c = np.linalg.solve(np.eye(f.shape[0]) - f.T, drive)
    return float(bvec(np.eye(model.n * model.m), tm.m) @ c) / model.n


# ----------------------------------------------------------- pilot moments

def pilot_step_moments(config: AlgorithmConfig, model: MeasurementModel, noise: NoiseModel,
                       n_nodes: int, iterations: int, runs: int, seed: int, estimator: str = "linearized",
                       first_run: int = 0):
    """Per-iteration ``E[rho_k(i)]`` and ``E[rho_k(i)^2]`` from a pilot ATC simulation.

    ``rho_k(i) = eta_k G_sigma(e_k(i))`` for mcc (``eta_k`` for lms), with
    ``e_k(i)`` the a-priori error at node k; streams ``first_run ..
    first_run + runs - 1`` are used. The second moment is always the
    sample mean of ``rho**2``. For the first moment, ``"plain"`` averages
    ``rho`` itself, while ``"linearized"`` averages
    ``eta * d/de[G(e) e] = rho * (1 - e**2 / sigma**2)``: with Gaussian
    regressors and noise this is the factor that makes
    ``E[rho e u] = E[rho] R_u w~`` exact, so it stays accurate while errors
    are still large compared with sigma.
    """
    if config.mode != "atc" or config.criterion not in ("mcc", "lms"):
        raise ValueError("step moments are defined for ATC mcc/lms algorithms")
    if estimator not in ("plain", "linearized"):
        raise ValueError(f"unknown estimator {estimator!r}")
    s1 = np.zeros((iterations, n_nodes))
    s2 = np.zeros((iterations, n_nodes))
    eta = np.broadcast_to(np.asarray(config.eta, dtype=float), (n_nodes,))
    sigma = np.broadcast_to(np.asarray(config.sigma, dtype=float), (n_nodes,))
    for r in range(first_run, first_run + runs):
        stream = generate_stream(model, noise, n_nodes, iterations, seed, r)
        state = init_state(n_nodes, model.m)
        for i in range(iterations):
            u, d = stream.snapshot(i)
            if config.criterion == "mcc":
                e = d - np.einsum("km,km->k", u, state.weights)
                rho = eta * gaussian_kernel(e, sigma)
                s1[i] += rho * (1 - (e / sigma) ** 2) if estimator == "linearized" else rho
            else:
                rho = eta.copy()
                s1[i] += rho
            s2[i] += rho * rho
            state = run_iteration(state, u, d, config)
    return s1 / runs, s2 / runs
