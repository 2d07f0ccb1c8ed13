"""CLOMP-R: greedy recovery of a weighted Dirac mixture from an RFF sketch.

Each outer iteration adds the atom most correlated with the residual,
hard-thresholds the support back to K atoms by nonnegative least squares
weights, re-projects the weights, then jointly fine-tunes centroids and
weights on ``||z - sum_k beta_k phi(c_k)||^2``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.optimize import nnls

from .rff import FeatureMap, NoDerivativeError
from .sketching import Sketch


@dataclass(frozen=True)
class MixtureModel:
    """K centroids with nonnegative weights summing to one."""

    centroids: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        C = np.atleast_2d(np.asarray(self.centroids, dtype=np.float64))
        w = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if C.shape[0] != w.size:
            raise ValueError("one weight per centroid")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        if abs(w.sum() - 1.0) > 1e-9:
            raise ValueError(f"weights must sum to 1, got {w.sum()!r}")
        object.__setattr__(self, "centroids", C)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, centroids) -> "MixtureModel":
        C = np.atleast_2d(np.asarray(centroids, dtype=np.float64))
        return cls(C, np.full(C.shape[0], 1.0 / C.shape[0]))

    @property
    def K(self) -> int:
        return self.centroids.shape[0]


@dataclass
class ClompOptions:
    n_iterations: Optional[int] = None  # None -> 2K
    restarts: int = 5
    max_inner: int = 300
    armijo: float = 1e-4
    grad_tol: float = 1e-8
    rel_tol: float = 1e-9
    box_inflation: float = 0.10
    seed: int = 0

    def __post_init__(self):
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")


def inflate_box(lo, hi, inflation: float = 0.10):
    """Grow the box by ``inflation`` of its width, split evenly on both sides."""
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    pad = 0.5 * inflation * (hi - lo)
    return lo - pad, hi + pad


def mixture_sketch(fmap: FeatureMap, m: MixtureModel) -> np.ndarray:
    """``sum_k alpha_k phi(c_k)``."""
    return m.weights @ np.atleast_2d(fmap(m.centroids))


def projected_descent(fun_grad: Callable, x0, lower, upper, opts: ClompOptions):
    """Projected gradient descent with Armijo backtracking (halving).

    Trial steps start from the Barzilai-Borwein estimate of the previous
    iteration. Returns ``(x, f)``; ``f`` never exceeds ``f(x0)``.
    """
    x = np.clip(np.asarray(x0, dtype=np.float64), lower, upper)
    f, g = fun_grad(x)
    step = None
    for _ in range(opts.max_inner):
        pg = x - np.clip(x - g, lower, upper)
        gnorm = np.linalg.norm(pg)
        if gnorm <= opts.grad_tol:
            break
        t = step if step is not None else 1.0 / max(np.linalg.norm(g), 1e-12)
        while True:
            xn = np.clip(x - t * g, lower, upper)
            d = xn - x
            fn, gn = fun_grad(xn)
            if fn <= f + opts.armijo * float(g @ d):
                break
            t *= 0.5
            if t * gnorm < 1e-16 * (1.0 + np.linalg.norm(x)):
                return x, f
        s, y = xn - x, gn - g
        sy = float(s @ y)
        step = float(s @ s) / sy if sy > 0 else 2.0 * t
        decrease = f - fn
        x, f, g = xn, fn, gn
        if decrease <= opts.rel_tol * max(abs(f), 1e-300):
            break
    return x, f


def atom_objective(fmap: FeatureMap, residual, c) -> tuple[float, np.ndarray]:
    """Value and gradient of ``Re <phi(c), r> / ||phi(c)||`` (the norm is sqrt(M))."""
    W = fmap.frequency_matrix()
    phi = fmap(c)
    prod = phi * np.conj(residual)
    norm = np.sqrt(fmap.M)
    return float(prod.real.sum()) / norm, (prod.imag @ W) / norm


def find_atom(fmap: FeatureMap, residual, box, opts: Optional[ClompOptions] = None,
              rng=None) -> np.ndarray:
    """Best of ``opts.restarts`` projected ascents of the atom correlation in ``box``."""
    if not fmap.has_derivative:
        raise NoDerivativeError("atom search needs the derivative of the feature map")
    opts = opts or ClompOptions()
    rng = np.random.default_rng(opts.seed if rng is None else rng)
    lo, hi = (np.asarray(b, dtype=np.float64) for b in box)
    residual = np.asarray(residual, dtype=np.complex128)

    def neg(c):
        v, g = atom_objective(fmap, residual, c)
        return -v, -g

    best_c, best_f = None, np.inf
    for _ in range(opts.restarts):
        c0 = rng.uniform(lo, hi)
        c, f = projected_descent(neg, c0, lo, hi, opts)
        if f < best_f:
            best_c, best_f = c, f
    return best_c


def nnls_weights(atoms, z) -> np.ndarray:
    """Nonnegative ``beta`` minimising ``||z - atoms @ beta||`` on stacked real/imag parts.

    ``atoms`` is (M, k) complex (one atom per column) or a list of M-vectors.
    """
    if isinstance(atoms, (list, tuple)):
        A = np.stack([np.asarray(a) for a in atoms], axis=1)
    else:
        A = np.asarray(atoms)
        if A.ndim == 1:
            A = A[:, None]
    z = np.asarray(z, dtype=np.complex128)
    A_r = np.vstack([A.real, A.imag])
    z_r = np.concatenate([z.real, z.imag])
    beta, _ = nnls(A_r, z_r, maxiter=50 * A_r.shape[1])
    return beta


def fit_objective(fmap: FeatureMap, z, C, beta):
    """``||z - sum_k beta_k phi(c_k)||^2`` with gradients in ``C`` (K, D) and ``beta`` (K,)."""
    W = fmap.frequency_matrix()
    Phi = np.atleast_2d(fmap(C))
    r = z - beta @ Phi
    f = float(np.vdot(r, r).real)
    prod = Phi * np.conj(r)[None, :]
    g_beta = -2.0 * prod.real.sum(axis=1)
    g_C = -2.0 * beta[:, None] * (prod.imag @ W)
    return f, g_C, g_beta


def fine_tune(fmap: FeatureMap, z, C, beta, box, opts: ClompOptions):
    """Joint projected descent over centroids (box) and weights (>= 0)."""
    K, D = C.shape
    lo, hi = box
    lower = np.concatenate([np.tile(lo, K), np.zeros(K)])
    upper = np.concatenate([np.tile(hi, K), np.full(K, np.inf)])

    def fg(p):
        f, gC, gb = fit_objective(fmap, z, p[:K * D].reshape(K, D), p[K * D:])
        return f, np.concatenate([gC.ravel(), gb])

    p, _ = projected_descent(fg, np.concatenate([C.ravel(), beta]), lower, upper, opts)
    return p[:K * D].reshape(K, D), p[K * D:]


def residual_norm(fmap: FeatureMap, z, C, beta) -> float:
    if len(beta) == 0:
        return float(np.linalg.norm(z))
    return float(np.linalg.norm(z - beta @ np.atleast_2d(fmap(C))))


def clomp_r(z, fmap: FeatureMap, K: int, box, opts: Optional[ClompOptions] = None,
            trace: Optional[list] = None) -> MixtureModel:
    """Decode a K-Dirac mixture from sketch ``z``.

    Parameters
    ----------
    z : Sketch or array_like
        Data sketch. A ``Sketch`` fixes the scale of ``fmap``.
    fmap : FeatureMap
        Map with explicit frequencies (matrix or calibrated twin).
    K : int
        Number of centroids.
    box : (lo, hi)
        Data bounding box; atoms are searched in it after inflation by
        ``opts.box_inflation``.
    trace : list, optional
        Receives one dict per iteration with residual norms before and
        after fine-tuning.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    if not fmap.has_derivative:
        raise NoDerivativeError("CLOMP-R needs a feature map with explicit frequencies")
    opts = opts or ClompOptions()
    if isinstance(z, Sketch):
        if z.scale != fmap.scale:
            fmap = fmap.with_scale(z.scale)
        z = z.values
    z = np.asarray(z, dtype=np.complex128)
    if z.shape != (fmap.M,):
        raise ValueError(f"sketch length {z.shape} does not match M={fmap.M}")
    rng = np.random.default_rng(opts.seed)
    search = inflate_box(*box, opts.box_inflation)
    D = fmap.D
    T = opts.n_iterations if opts.n_iterations is not None else 2 * K
    if T < K:
        raise ValueError("need at least K iterations")

    C = np.empty((0, D))
    beta = np.empty(0)
    for it in range(T):
        r = z - beta @ np.atleast_2d(fmap(C)) if len(beta) else z.copy()
        c = find_atom(fmap, r, search, opts, rng)
        C = np.vstack([C, c])
        Phi = np.atleast_2d(fmap(C))
        if C.shape[0] > K:
            b = nnls_weights(Phi.T, z)
            keep = np.sort(np.argsort(-b, kind="stable")[:K])
            C, Phi = C[keep], Phi[keep]
        beta = nnls_weights(Phi.T, z)
        before = residual_norm(fmap, z, C, beta)
        C, beta = fine_tune(fmap, z, C, beta, search, opts)
        after = residual_norm(fmap, z, C, beta)
        if trace is not None:
            trace.append({"iteration": it, "support": C.shape[0],
                          "residual_before": before, "residual_after": after})

    total = beta.sum()
    alpha = beta / total if total > 0 else np.full(beta.size, 1.0 / beta.size)
    alpha = alpha / alpha.sum()
    return MixtureModel(C, alpha)
