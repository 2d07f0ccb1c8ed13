"""Random Fourier frequencies and the complex exponential feature map.

The feature map is ``phi(x) = exp(-i * (Omega @ x + offset) / sigma)`` where
``Omega = diag(radii) @ directions`` is the unscaled frequency operator. The
offset is zero for plain RFF and is only used when an affine input
normalisation is folded into the map (see ``calibration.make_twin_map``).

Inner products follow ``<a, b> = sum_m a_m * conj(b_m)`` throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np


class InvalidScaleError(ValueError):
    """Raised for a non-positive sketching scale."""


class NoDerivativeError(RuntimeError):
    """Raised when a gradient is requested from a map without explicit frequencies."""


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def sample_directions(M: int, D: int, rng=None) -> np.ndarray:
    """Draw ``M`` i.i.d. directions uniformly on the unit sphere of R^D."""
    if M < 1 or D < 1:
        raise ValueError("M and D must be positive")
    rng = as_generator(rng)
    U = rng.standard_normal((M, D))
    norms = np.linalg.norm(U, axis=1)
    # zero-norm draws have probability zero; redraw them anyway
    bad = norms == 0.0
    while np.any(bad):
        U[bad] = rng.standard_normal((int(bad.sum()), D))
        norms = np.linalg.norm(U, axis=1)
        bad = norms == 0.0
    return U / norms[:, None]


def sample_radii(M: int, rng=None) -> np.ndarray:
    """Folded standard normal radii ``|g|``, ``g ~ N(0, 1)``."""
    if M < 1:
        raise ValueError("M must be positive")
    return np.abs(as_generator(rng).standard_normal(M))


@dataclass(frozen=True)
class FrequencyFactors:
    """Radii, unit directions and scale defining ``W = diag(radii) @ directions / scale``."""

    radii: np.ndarray
    directions: np.ndarray
    scale: float = 1.0
    seed: Optional[int] = None

    def __post_init__(self):
        radii = np.asarray(self.radii, dtype=np.float64).reshape(-1)
        directions = np.atleast_2d(np.asarray(self.directions, dtype=np.float64))
        if directions.shape[0] != radii.size:
            raise ValueError("radii and directions disagree on M")
        if np.any(radii < 0) or not np.all(np.isfinite(radii)):
            raise ValueError("radii must be finite and nonnegative")
        norms = np.linalg.norm(directions, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-12):
            raise ValueError("directions must have unit-norm rows")
        if not self.scale > 0:
            raise InvalidScaleError(f"scale must be positive, got {self.scale}")
        radii.flags.writeable = False
        directions.flags.writeable = False
        object.__setattr__(self, "radii", radii)
        object.__setattr__(self, "directions", directions)
        object.__setattr__(self, "scale", float(self.scale))

    @classmethod
    def draw(cls, M: int, D: int, seed=None, scale: float = 1.0) -> "FrequencyFactors":
        """Sample directions then radii from one seeded generator."""
        rng = as_generator(seed)
        U = sample_directions(M, D, rng)
        radii = sample_radii(M, rng)
        return cls(radii, U, scale, seed if isinstance(seed, (int, np.integer)) else None)

    @property
    def M(self) -> int:
        return self.radii.size

    @property
    def D(self) -> int:
        return self.directions.shape[1]

    def unscaled(self) -> np.ndarray:
        """``diag(radii) @ directions``."""
        return self.radii[:, None] * self.directions

    def with_scale(self, scale: float) -> "FrequencyFactors":
        return FrequencyFactors(self.radii, self.directions, scale, self.seed)


def build_frequency_matrix(f: FrequencyFactors, scale: Optional[float] = None) -> np.ndarray:
    """``W[j] = radii[j] / scale * directions[j]``."""
    sigma = f.scale if scale is None else scale
    if not sigma > 0:
        raise InvalidScaleError(f"scale must be positive, got {sigma}")
    return (f.radii / sigma)[:, None] * f.directions


def rff_evaluate(W, x) -> np.ndarray:
    """``exp(-i W x)`` for an explicit matrix or a callable applying W.

    ``x`` may be a single point (D,) or a batch (n, D).
    """
    x = np.asarray(x, dtype=np.float64)
    phase = W(x) if callable(W) else x @ np.asarray(W).T
    return np.exp(-1j * phase)


def rff_gradient(W, c, v) -> np.ndarray:
    """Gradient in ``c`` of ``Re <phi(c), v>`` with ``phi(c) = exp(-i W c)``.

    Equals ``sum_m Im(phi_m(c) * conj(v_m)) * w_m``.
    """
    if W is None or callable(W):
        raise NoDerivativeError("gradient needs an explicit frequency matrix")
    W = np.asarray(W, dtype=np.float64)
    phi = np.exp(-1j * (W @ np.asarray(c, dtype=np.float64)))
    return np.imag(phi * np.conj(v)) @ W


@dataclass
class FeatureMap:
    """Complex exponential feature map at a given scale.

    Either ``matrix`` (unscaled ``Omega``, shape (M, D)) is given, making the
    map differentiable, or ``project`` computes the unscaled phases of a
    batch directly (the simulated-OPU path, no derivative).
    """

    M: int
    D: int
    scale: float = 1.0
    matrix: Optional[np.ndarray] = None
    offset: Optional[np.ndarray] = None
    project_fn: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, repr=False)
    provenance: str = "matrix"

    def __post_init__(self):
        if not self.scale > 0:
            raise InvalidScaleError(f"scale must be positive, got {self.scale}")
        if self.matrix is None and self.project_fn is None:
            raise ValueError("need either an explicit matrix or a projection callable")
        if self.matrix is not None:
            self.matrix = np.asarray(self.matrix, dtype=np.float64)
            if self.matrix.shape != (self.M, self.D):
                raise ValueError(f"matrix shape {self.matrix.shape} != {(self.M, self.D)}")
        if self.offset is not None:
            self.offset = np.asarray(self.offset, dtype=np.float64).reshape(self.M)

    @classmethod
    def from_factors(cls, f: FrequencyFactors, scale: Optional[float] = None) -> "FeatureMap":
        return cls(f.M, f.D, f.scale if scale is None else scale, matrix=f.unscaled())

    @property
    def has_derivative(self) -> bool:
        return self.matrix is not None

    def with_scale(self, scale: float) -> "FeatureMap":
        return FeatureMap(self.M, self.D, scale, self.matrix, self.offset,
                          self.project_fn, self.provenance)

    def project(self, X) -> np.ndarray:
        """Unscaled phases ``Omega x + offset`` for a batch (n, D) -> (n, M)."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.D:
            raise ValueError(f"expected points of dimension {self.D}, got {X.shape[1]}")
        if self.matrix is None:
            return self.project_fn(X)
        P = X @ self.matrix.T
        if self.offset is not None:
            P += self.offset
        return P

    def frequency_matrix(self) -> np.ndarray:
        if self.matrix is None:
            raise NoDerivativeError("this feature map has no explicit frequency matrix")
        return self.matrix / self.scale

    def phases(self, X) -> np.ndarray:
        return self.project(X) / self.scale

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        out = np.exp(-1j * self.phases(x))
        return out[0] if x.ndim == 1 else out

    def jacobian(self, c) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(phi(c), J)`` with ``J[m] = d phi_m / dc = -i w_m phi_m(c)`` of shape (M, D)."""
        W = self.frequency_matrix()
        phi = self(c)
        return phi, (-1j * phi)[:, None] * W

    def gradient(self, c, v) -> np.ndarray:
        """Gradient in ``c`` of ``Re <phi(c), v>``."""
        W = self.frequency_matrix()
        phi = self(c)
        return np.imag(phi * np.conj(v)) @ W
