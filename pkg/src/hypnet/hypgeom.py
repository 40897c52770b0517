"""Hyperboloid-model arithmetic for hyperbolic n-space.

Points live on the upper sheet of ``<x, x> = -1`` in Minkowski space
R^{1,n} with ``<x, y> = -x0*y0 + x1*y1 + ... + xn*yn``.  Isometries are
(n+1)x(n+1) matrices preserving that form and the upper sheet.

The public value types (`HPoint`, `HIsometry`) validate on construction.
The ``*_arrays`` helpers are the vectorised versions used by the heavier
modules; they take raw ``(..., n+1)`` arrays and skip validation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import integrate

POINT_TOL = 1e-12
ISOMETRY_TOL = 1e-10


class HypGeomError(ValueError):
    """Base class for geometry errors."""


class MalformedPointError(HypGeomError):
    pass


class MalformedIsometryError(HypGeomError):
    pass


class UnsupportedDimensionError(HypGeomError):
    pass


class NotHyperbolicError(HypGeomError):
    """Raised when a translation length is requested for a non-hyperbolic isometry."""


class EllipticIsometryError(NotHyperbolicError):
    """The isometry fixes a point: it is a rotation with zero displacement there."""


class ParabolicIsometryError(NotHyperbolicError):
    """The displacement infimum is zero but is not attained."""


def minkowski_form(dim: int) -> np.ndarray:
    """The diagonal form J = diag(-1, 1, ..., 1) for hyperbolic ``dim``-space."""
    J = np.eye(dim + 1)
    J[0, 0] = -1.0
    return J


def minkowski_dot(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return -x[..., 0] * y[..., 0] + np.sum(x[..., 1:] * y[..., 1:], axis=-1)


def normalize_arrays(x: np.ndarray) -> np.ndarray:
    """Project timelike vectors back onto the upper sheet."""
    x = np.asarray(x, dtype=float)
    q = -minkowski_dot(x, x)
    return x / np.sqrt(q)[..., None] * np.sign(x[..., :1])


def distance_arrays(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Broadcasting hyperbolic distance between sheet points.

    Uses ``2*asinh(|x - y|_M / 2)`` which keeps full relative precision
    for nearby points, where ``arccosh`` would lose half the digits.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d = x - y
    chord2 = np.maximum(minkowski_dot(d, d), 0.0)
    return 2.0 * np.arcsinh(0.5 * np.sqrt(chord2))


def cosh_distance_arrays(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return -minkowski_dot(x, y)


def to_poincare(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x[..., 1:] / (1.0 + x[..., :1])


def from_poincare(u: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    s = np.sum(u * u, axis=-1, keepdims=True)
    return np.concatenate([1.0 + s, 2.0 * u], axis=-1) / (1.0 - s)


def to_klein(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x[..., 1:] / x[..., :1]


def from_klein(k: np.ndarray) -> np.ndarray:
    k = np.asarray(k, dtype=float)
    s = np.sum(k * k, axis=-1, keepdims=True)
    return np.concatenate([np.ones_like(s), k], axis=-1) / np.sqrt(1.0 - s)


@dataclass(frozen=True, eq=False)
class HPoint:
    """A point of hyperbolic n-space in hyperboloid coordinates."""

    coords: np.ndarray

    def __post_init__(self) -> None:
        x = np.array(self.coords, dtype=float).reshape(-1)
        if x.size < 3:
            raise UnsupportedDimensionError(f"need at least 3 coordinates, got {x.size}")
        if not np.all(np.isfinite(x)):
            raise MalformedPointError("non-finite coordinates")
        q = float(minkowski_dot(x, x))
        if x[0] <= 0 or q >= 0:
            raise MalformedPointError(
                f"not on the upper sheet: x0={x[0]:.6g}, <x,x>={q:.6g}"
            )
        x = x / math.sqrt(-q)
        x.setflags(write=False)
        object.__setattr__(self, "coords", x)

    @property
    def dim(self) -> int:
        return self.coords.size - 1

    @classmethod
    def origin(cls, dim: int) -> HPoint:
        x = np.zeros(dim + 1)
        x[0] = 1.0
        return cls(x)

    @classmethod
    def from_poincare(cls, u) -> HPoint:
        u = np.asarray(u, dtype=float)
        if np.dot(u, u) >= 1.0:
            raise MalformedPointError("Poincare coordinates outside the unit ball")
        return cls(from_poincare(u))

    def poincare(self) -> np.ndarray:
        return to_poincare(self.coords)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, HPoint):
            return NotImplemented
        return self.dim == other.dim and distance(self, other) < 1e-10

    def __repr__(self) -> str:
        return f"HPoint({np.array2string(self.coords, precision=6)})"


def _classify(matrix: np.ndarray) -> str:
    dim = matrix.shape[0] - 1
    scale = max(1.0, float(np.max(np.abs(matrix))))
    if np.allclose(matrix, np.eye(dim + 1), atol=1e-9 * scale):
        return "identity"
    if dim == 2:
        # tr = 1 + 2 cosh(l) for hyperbolic, 1 + 2 cos(theta) for elliptic
        tr = float(np.trace(matrix))
        if tr > 3.0 + 1e-9 * scale:
            return "hyperbolic"
        if tr < 3.0 - 1e-9 * scale:
            return "elliptic"
        return "parabolic"
    rho = float(np.max(np.abs(np.linalg.eigvals(matrix))))
    if rho > 1.0 + 1e-6:
        return "hyperbolic"
    # elliptic iff the fixed space of M contains a timelike vector
    _, sing, vt = np.linalg.svd(matrix - np.eye(dim + 1))
    fixed = vt[sing < 1e-7 * scale]
    if fixed.size:
        gram = fixed @ minkowski_form(dim) @ fixed.T
        if np.min(np.linalg.eigvalsh(gram)) < -1e-9:
            return "elliptic"
    return "parabolic"


@dataclass(frozen=True, eq=False)
class HIsometry:
    """An isometry of hyperbolic n-space: a matrix in O+(n, 1)."""

    matrix: np.ndarray
    kind: str = field(default="", compare=False)

    def __post_init__(self) -> None:
        m = np.array(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 3:
            raise MalformedIsometryError(f"bad matrix shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise MalformedIsometryError("non-finite matrix entries")
        J = minkowski_form(m.shape[0] - 1)
        defect = float(np.max(np.abs(m.T @ J @ m - J)))
        # entries of long words grow like e^len; roundoff in M^T J M grows with |M|^2
        tol = ISOMETRY_TOL * max(1.0, float(np.max(np.abs(m)))) ** 2
        if defect > tol:
            raise MalformedIsometryError(
                f"matrix does not preserve the Minkowski form (defect {defect:.3g})"
            )
        if m[0, 0] <= 0:
            raise MalformedIsometryError("matrix swaps the sheets of the hyperboloid")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "kind", _classify(m))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0] - 1

    @classmethod
    def identity(cls, dim: int) -> HIsometry:
        return cls(np.eye(dim + 1))

    def inverse(self) -> HIsometry:
        J = minkowski_form(self.dim)
        return HIsometry(J @ self.matrix.T @ J)

    def __matmul__(self, other):
        if isinstance(other, HIsometry):
            return HIsometry(self.matrix @ other.matrix)
        if isinstance(other, HPoint):
            return apply(self, other)
        return NotImplemented

    def __repr__(self) -> str:
        return f"HIsometry(kind={self.kind!r}, dim={self.dim})"


def rotation(dim: int, angle: float, plane: tuple[int, int] = (1, 2)) -> HIsometry:
    """Rotation by ``angle`` in the spatial coordinate plane ``plane``."""
    i, j = plane
    m = np.eye(dim + 1)
    c, s = math.cos(angle), math.sin(angle)
    m[i, i], m[i, j], m[j, i], m[j, j] = c, -s, s, c
    return HIsometry(m)


def boost(dim: int, distance_: float, axis: int = 1) -> HIsometry:
    """Translation by ``distance_`` along the geodesic through the origin in direction e_axis."""
    m = np.eye(dim + 1)
    c, s = math.cosh(distance_), math.sinh(distance_)
    m[0, 0], m[0, axis], m[axis, 0], m[axis, axis] = c, s, s, c
    return HIsometry(m)


def boost_along(direction, distance_: float) -> np.ndarray:
    """Translation matrix along the unit spatial ``direction`` through the origin."""
    u = np.asarray(direction, dtype=float)
    u = u / np.linalg.norm(u)
    n = u.size
    c, s = math.cosh(distance_), math.sinh(distance_)
    m = np.eye(n + 1)
    m[0, 0] = c
    m[0, 1:] = s * u
    m[1:, 0] = s * u
    m[1:, 1:] += (c - 1.0) * np.outer(u, u)
    return m


def rotation_about(axis, angle: float) -> np.ndarray:
    """Rotation of hyperbolic 3-space fixing the geodesic through the origin along ``axis``."""
    k = np.asarray(axis, dtype=float)
    if k.size != 3:
        raise UnsupportedDimensionError("rotation_about is defined for dimension 3")
    k = k / np.linalg.norm(k)
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    r = np.eye(3) + math.sin(angle) * K + (1 - math.cos(angle)) * (K @ K)
    m = np.eye(4)
    m[1:, 1:] = r
    return m


def distance(p: HPoint, q: HPoint) -> float:
    if p.dim != q.dim:
        raise UnsupportedDimensionError("points of different dimensions")
    c = float(cosh_distance_arrays(p.coords, q.coords))
    if c < 1.0 - 1e-9:
        raise MalformedPointError(f"-<p,q> = {c:.12g} < 1")
    return float(distance_arrays(p.coords, q.coords))


def apply(g: HIsometry, p: HPoint) -> HPoint:
    if g.dim != p.dim:
        raise UnsupportedDimensionError("isometry and point dimensions differ")
    return HPoint(g.matrix @ p.coords)


def translation_length(g: HIsometry) -> float:
    """Minimal displacement ``inf_x d(x, g x)`` of a hyperbolic isometry.

    The eigenvalues of a hyperbolic element are e^l, e^-l and unit-modulus
    values, so l is the log of the spectral radius.
    """
    if g.kind == "identity":
        raise NotHyperbolicError("identity has no translation length")
    if g.kind == "elliptic":
        raise EllipticIsometryError("elliptic isometry: fixes a point, zero-length rotation")
    if g.kind == "parabolic":
        raise ParabolicIsometryError("parabolic isometry: infimum 0 is not attained")
    lam = float(np.max(np.abs(np.linalg.eigvals(g.matrix))))
    return math.log(lam)


def translation_lengths_2d(mats: np.ndarray) -> np.ndarray:
    """Vectorised translation lengths for a stack of SO+(2,1) matrices.

    Non-hyperbolic entries come back as NaN.
    """
    tr = np.trace(mats, axis1=-2, axis2=-1)
    with np.errstate(invalid="ignore"):
        out = np.arccosh((tr - 1.0) / 2.0)
    scale = np.maximum(1.0, np.max(np.abs(mats), axis=(-2, -1)))
    return np.where(tr > 3.0 + 1e-9 * scale, out, np.nan)


def translation_lengths(mats: np.ndarray) -> np.ndarray:
    mats = np.asarray(mats, dtype=float)
    if mats.shape[-1] == 3:
        return translation_lengths_2d(mats)
    lam = np.max(np.abs(np.linalg.eigvals(mats)), axis=-1)
    return np.where(lam > 1.0 + 1e-6, np.log(lam), np.nan)


# --- ball volumes ---------------------------------------------------------


def sphere_area(k: int) -> float:
    """Area of the unit k-sphere in R^{k+1}."""
    return 2.0 * math.pi ** ((k + 1) / 2) / math.gamma((k + 1) / 2)


def euclidean_ball_volume(n: int) -> float:
    return math.pi ** (n / 2) / math.gamma(n / 2 + 1)


def _check_dim(n: int) -> None:
    if int(n) != n or n < 2:
        raise UnsupportedDimensionError(f"dimension must be an integer >= 2, got {n}")


def _ball_volume_closed(n: int, r: float) -> float:
    if n == 2:
        return 4.0 * math.pi * math.sinh(r / 2) ** 2
    if n == 3:
        if r < 1e-3:
            # sinh 2r - 2r = (2r)^3/6 + (2r)^5/120 + ...
            t = 2 * r
            return math.pi * (t**3 / 6 + t**5 / 120 + t**7 / 5040)
        return math.pi * (math.sinh(2 * r) - 2 * r)
    raise UnsupportedDimensionError(f"no closed form for n={n}")


def _ball_volume_quad(n: int, r: float) -> float:
    val, _ = integrate.quad(
        lambda t: math.sinh(t) ** (n - 1), 0.0, r, epsabs=0.0, epsrel=1e-13, limit=200
    )
    return sphere_area(n - 1) * val


@lru_cache(maxsize=None)
def _gauss_nodes(order: int):
    return np.polynomial.legendre.leggauss(order)


def _ball_volume_gauss(n: int, r: float, panels: int = 16, order: int = 24) -> float:
    x, w = _gauss_nodes(order)
    edges = np.linspace(0.0, r, panels + 1)
    a, b = edges[:-1, None], edges[1:, None]
    t = 0.5 * (b - a) * x[None, :] + 0.5 * (a + b)
    val = float(np.sum(0.5 * (b - a) * w[None, :] * np.sinh(t) ** (n - 1)))
    return sphere_area(n - 1) * val


def ball_volume(n: int, r: float, method: str = "auto") -> float:
    """Volume of a radius-``r`` ball in hyperbolic ``n``-space.

    ``method`` is ``"closed"`` (n = 2, 3 only), ``"quad"`` (adaptive
    quadrature of the radial volume form), ``"gauss"`` (composite
    Gauss-Legendre) or ``"auto"`` (closed form when available).
    """
    _check_dim(n)
    r = float(r)
    if r < 0:
        raise ValueError(f"radius must be nonnegative, got {r}")
    if r == 0:
        return 0.0
    if method == "auto":
        method = "closed" if n in (2, 3) else "quad"
    if method == "closed":
        return _ball_volume_closed(n, r)
    if method == "quad":
        return _ball_volume_quad(n, r)
    if method == "gauss":
        return _ball_volume_gauss(n, r)
    raise ValueError(f"unknown method {method!r}")


@dataclass(frozen=True)
class BallVolumeTable:
    """Ball volumes in one dimension, with the calibrated exponential lower bound."""

    dimension: int

    def __post_init__(self) -> None:
        _check_dim(self.dimension)

    def closed_form(self, r: float) -> float:
        return ball_volume(self.dimension, r, method="closed")

    def quadrature(self, r: float) -> float:
        return ball_volume(self.dimension, r, method="quad")

    def __call__(self, r: float) -> float:
        return ball_volume(self.dimension, r)

    @property
    def c1(self) -> float:
        return exp_bound_constant(self.dimension)

    def lower_bound(self, R: float) -> float:
        return ball_volume_lower_bound(self.dimension, R)


C1_GRID = np.linspace(0.1, 5.0, 50)
C1_SAFETY = 0.9


@lru_cache(maxsize=None)
def exp_bound_constant(n: int) -> float:
    """c1(n) = 0.9 * min over R in [0.1, 5] of vol(B(R/2)) * exp(-(n-1) R / 2)."""
    _check_dim(n)
    ratios = [ball_volume(n, R / 2) * math.exp(-(n - 1) * R / 2) for R in C1_GRID]
    return C1_SAFETY * min(ratios)


def ball_volume_lower_bound(n: int, R: float) -> float:
    """Exponential lower bound ``c1(n) * exp((n-1) R / 2)`` for vol(B(R/2)).

    Valid for R >= 0.1 (the calibration range starts there and the ratio
    vol(B(R/2)) / exp((n-1)R/2) is increasing in R).
    """
    _check_dim(n)
    if R <= 0:
        raise ValueError(f"R must be positive, got {R}")
    return exp_bound_constant(n) * math.exp((n - 1) * R / 2)
