"""Closed hyperbolic manifolds as quotients H^n / Gamma.

A manifold is stored as a convex fundamental polytope (vertices on the
hyperboloid, facets given by vertex indices) together with the facet
pairing isometries that generate the deck group.  Everything downstream
(distances, nets, Voronoi cells) needs only that data.

Group enumeration walks the tiling: the neighbours of the tile gF are the
tiles g s F for the facet pairings s.  Walks are pruned by the basepoint
displacement d(o, g o), and the pruning radius doubles as a certificate:
every element moving o by less than ``certified_radius`` has been found.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import jsonschema
import numpy as np
from scipy.spatial import cKDTree

from .hypgeom import (
    HIsometry,
    HPoint,
    HypGeomError,
    MalformedIsometryError,
    UnsupportedDimensionError,
    boost_along,
    distance_arrays,
    minkowski_dot,
    minkowski_form,
    normalize_arrays,
    to_klein,
    to_poincare,
    translation_lengths,
)

DEDUP_TOL = 1e-4
MEMBERSHIP_TOL = 1e-9


class ManifoldError(ValueError):
    """Invalid manifold description."""


class OutOfDomainError(HypGeomError):
    pass


class SystoleError(RuntimeError):
    pass


@dataclass(frozen=True)
class Generator:
    label: str
    isometry: HIsometry


@dataclass(frozen=True)
class Facet:
    vertex_indices: tuple[int, ...]
    paired_facet: int
    pairing_generator: str


@dataclass(frozen=True, eq=False)
class QuotientManifold:
    """A closed hyperbolic n-manifold given by a fundamental polytope and its side pairings.

    The pairing generator of facet k maps facet ``paired_facet`` onto facet k,
    so ``g F`` is the tile adjacent to F across facet k.
    """

    dimension: int
    generators: tuple[Generator, ...]
    domain_vertices: np.ndarray
    facets: tuple[Facet, ...]
    basepoint: HPoint
    volume: float
    euler_characteristic: int | None = None
    name: str = "unnamed"
    source: str = ""
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self) -> None:
        validate_manifold(self)

    # -- derived geometry --------------------------------------------------

    @cached_property
    def generator_map(self) -> dict[str, HIsometry]:
        return {g.label: g.isometry for g in self.generators}

    @cached_property
    def facet_normals(self) -> np.ndarray:
        """Unit spacelike normals, oriented so that <x, n_k> <= 0 inside the domain."""
        J = minkowski_form(self.dimension)
        # the vertex centroid is interior for a convex domain, independent of the basepoint
        ref = normalize_arrays(np.sum(self.domain_vertices, axis=0))
        normals = []
        for facet in self.facets:
            V = self.domain_vertices[list(facet.vertex_indices)]
            _, s, vt = np.linalg.svd(V @ J)
            n = vt[-1]
            q = float(minkowski_dot(n, n))
            if q <= 0:
                raise ManifoldError(f"facet {len(normals)} does not span a hyperplane")
            n = n / math.sqrt(q)
            if minkowski_dot(ref, n) > 0:
                n = -n
            normals.append(n)
        return np.array(normals)

    @cached_property
    def domain_radius(self) -> float:
        """Max distance from the basepoint to a domain vertex (the domain is convex)."""
        return float(np.max(distance_arrays(self.basepoint.coords, self.domain_vertices)))

    @cached_property
    def domain_diameter(self) -> float:
        V = self.domain_vertices
        return float(np.max(distance_arrays(V[:, None, :], V[None, :, :])))

    @cached_property
    def pairing_labels(self) -> tuple[str, ...]:
        """Distinct facet-pairing labels in facet order: the generating set for walks."""
        seen: list[str] = []
        for f in self.facets:
            if f.pairing_generator not in seen:
                seen.append(f.pairing_generator)
        return tuple(seen)

    @cached_property
    def pairing_matrices(self) -> np.ndarray:
        return np.array([self.generator_map[lab].matrix for lab in self.pairing_labels])

    @cached_property
    def pairing_inverse_index(self) -> np.ndarray:
        mats = self.pairing_matrices
        J = minkowski_form(self.dimension)
        inv = np.full(len(mats), -1)
        for i, m in enumerate(mats):
            mi = J @ m.T @ J
            for j, other in enumerate(mats):
                if np.allclose(mi, other, atol=1e-8 * max(1.0, np.max(np.abs(m)))):
                    inv[i] = j
                    break
        return inv

    def signed_facet_values(self, x: np.ndarray) -> np.ndarray:
        """sinh of the signed distance of each point to each facet hyperplane (positive outside)."""
        x = np.asarray(x, dtype=float)
        return -np.outer(x[..., 0], self.facet_normals[:, 0]).reshape(
            x.shape[:-1] + (len(self.facets),)
        ) + x[..., 1:] @ self.facet_normals[:, 1:].T

    def contains(self, x: np.ndarray, tol: float = MEMBERSHIP_TOL) -> np.ndarray:
        return np.all(self.signed_facet_values(x) <= tol, axis=-1)

    def group_ball(self, L: int | None, cutoff: float) -> GroupBall:
        key = ("ball", L, round(float(cutoff), 9))
        if key not in self._cache:
            self._cache[key] = enumerate_group_ball(self, L, cutoff)
        return self._cache[key]

    def elements_within(self, radius: float) -> np.ndarray:
        """All deck transformations g with d(o, g o) <= radius (exhaustive)."""
        ball = self.group_ball(None, radius + self.domain_radius + 1e-9)
        return ball.matrices[ball.displacements <= radius]

    @property
    def cached_systole(self) -> SystoleResult | None:
        return self._cache.get("systole")

    @property
    def injectivity_radius(self) -> float | None:
        res = self.cached_systole
        return None if res is None else res.inj


# -- validation ------------------------------------------------------------


def validate_manifold(M: QuotientManifold) -> None:
    n = M.dimension
    if n < 2:
        raise UnsupportedDimensionError(f"dimension must be >= 2, got {n}")
    V = np.asarray(M.domain_vertices, dtype=float)
    if V.ndim != 2 or V.shape[1] != n + 1:
        raise ManifoldError(f"domain vertices must be (n+1)-vectors, got shape {V.shape}")
    for i, v in enumerate(V):
        q = float(minkowski_dot(v, v))
        if v[0] <= 0 or abs(q + 1.0) > 1e-9:
            raise ManifoldError(f"domain vertex {i} is not on the hyperboloid (<v,v> = {q:.12g})")
    V = normalize_arrays(V)
    V.setflags(write=False)
    object.__setattr__(M, "domain_vertices", V)
    if M.basepoint.dim != n:
        raise ManifoldError("basepoint dimension mismatch")
    labels = [g.label for g in M.generators]
    if len(set(labels)) != len(labels):
        raise ManifoldError("duplicate generator labels")
    for g in M.generators:
        if g.isometry.dim != n:
            raise ManifoldError(f"generator {g.label!r} has wrong dimension")
    gmap = {g.label: g.isometry for g in M.generators}
    nf = len(M.facets)
    if nf < 2:
        raise ManifoldError("need at least two facets")
    for k, f in enumerate(M.facets):
        if len(f.vertex_indices) < n:
            raise ManifoldError(f"facet {k} has fewer than {n} vertices")
        if any(not 0 <= i < len(V) for i in f.vertex_indices):
            raise ManifoldError(f"facet {k} references a missing vertex")
        if not 0 <= f.paired_facet < nf:
            raise ManifoldError(f"facet {k} pairs with missing facet {f.paired_facet}")
        if M.facets[f.paired_facet].paired_facet != k:
            raise ManifoldError(
                f"facet pairing is not an involution at facet {k} "
                f"({k} -> {f.paired_facet} -> {M.facets[f.paired_facet].paired_facet})"
            )
        if f.pairing_generator not in gmap:
            raise ManifoldError(f"facet {k} uses unknown generator {f.pairing_generator!r}")
    for k, f in enumerate(M.facets):
        g = gmap[f.pairing_generator].matrix
        j = f.paired_facet
        h = gmap[M.facets[j].pairing_generator].matrix
        scale = max(1.0, float(np.max(np.abs(g)))) ** 2
        if not np.allclose(g @ h, np.eye(n + 1), atol=1e-8 * scale):
            raise ManifoldError(
                f"generators of paired facets {k} and {j} are not mutually inverse"
            )
        src = V[list(M.facets[j].vertex_indices)] @ g.T
        dst = V[list(f.vertex_indices)]
        d = distance_arrays(src[:, None, :], dst[None, :, :])
        if np.max(np.min(d, axis=1)) > 1e-6:
            raise ManifoldError(
                f"generator {f.pairing_generator!r} does not map facet {j} onto facet {k}"
            )
    if not (M.volume > 0 and math.isfinite(M.volume)):
        raise ManifoldError(f"volume must be positive, got {M.volume}")
    if n == 2 and M.euler_characteristic is not None:
        expected = -2.0 * math.pi * M.euler_characteristic
        if abs(M.volume - expected) > 1e-6:
            raise ManifoldError(
                f"Gauss-Bonnet violated: volume {M.volume:.9g} != -2*pi*chi = {expected:.9g}"
            )
    vals = M.signed_facet_values(M.basepoint.coords)
    if np.max(vals) >= -1e-9:
        raise ManifoldError("basepoint is not strictly inside the domain")
    for i, v in enumerate(V):
        if np.max(M.signed_facet_values(v)) > 1e-7:
            raise ManifoldError(f"domain vertex {i} violates a facet inequality (non-convex domain)")


# -- surfaces ----------------------------------------------------------------


def build_surface(genus: int) -> QuotientManifold:
    """Closed genus-g surface from the regular 4g-gon with opposite sides paired.

    Interior angles are 2*pi/(4g), so all vertices form one cycle with angle
    sum 2*pi.  For g = 2 this is the Bolza surface.
    """
    if int(genus) != genus or genus < 2:
        raise ManifoldError(f"no hyperbolic structure for genus {genus}")
    g = int(genus)
    p = 4 * g
    half_angle = math.pi / p  # half the interior angle 2*pi/p
    cosh_circ = 1.0 / (math.tan(math.pi / p) * math.tan(half_angle))
    cosh_in = math.cos(half_angle) / math.sin(math.pi / p)
    rho = math.acosh(cosh_circ)
    r_in = math.acosh(cosh_in)
    angles = [(2 * j - 1) * math.pi / p for j in range(p)]
    V = np.array([[math.cosh(rho), math.sinh(rho) * math.cos(t), math.sinh(rho) * math.sin(t)] for t in angles])
    gens = []
    facets = []
    for k in range(p):
        phi = 2 * math.pi * k / p
        label = f"a{k + 1}" if k < 2 * g else f"A{k - 2 * g + 1}"
        gens.append(Generator(label, HIsometry(boost_along([math.cos(phi), math.sin(phi)], 2 * r_in))))
        facets.append(Facet((k, (k + 1) % p), (k + 2 * g) % p, label))
    return QuotientManifold(
        dimension=2,
        generators=tuple(gens),
        domain_vertices=V,
        facets=tuple(facets),
        basepoint=HPoint.origin(2),
        volume=4 * math.pi * (g - 1),
        euler_characteristic=2 - 2 * g,
        name="bolza" if g == 2 else f"genus{g}",
        source=f"regular {p}-gon, opposite sides paired",
    )


def vertex_cycles(M: QuotientManifold) -> list[tuple[str, ...]]:
    """Words read off around each vertex cycle of a polygon (n = 2).

    When the angle sum of a cycle is 2*pi the word multiplies to the identity.
    """
    if M.dimension != 2:
        raise UnsupportedDimensionError("vertex cycles are computed for surfaces only")
    at_vertex: dict[int, list[int]] = {}
    for k, f in enumerate(M.facets):
        for v in f.vertex_indices:
            at_vertex.setdefault(v, []).append(k)
    V = M.domain_vertices
    seen: set[tuple[int, int]] = set()
    words = []
    for v0 in range(len(V)):
        for k0 in at_vertex.get(v0, []):
            if (v0, k0) in seen:
                continue
            word = []
            v, k = v0, k0
            while (v, k) not in seen:
                seen.add((v, k))
                f = M.facets[k]
                word.append(f.pairing_generator)
                g_inv = M.generator_map[f.pairing_generator].inverse().matrix
                img = g_inv @ V[v]
                v = int(np.argmin(distance_arrays(img, V)))
                k = next(j for j in at_vertex[v] if j != f.paired_facet)
            words.append(tuple(word))
    return words


def word_matrix(M: QuotientManifold, word) -> np.ndarray:
    m = np.eye(M.dimension + 1)
    for lab in word:
        m = m @ M.generator_map[lab].matrix
    return m


# -- serialisation -------------------------------------------------------------

_NUM = {"type": ["string", "number"]}

MANIFOLD_SCHEMA = {
    "type": "object",
    "required": ["name", "dimension", "generators", "domain_vertices", "facets", "basepoint"],
    "properties": {
        "name": {"type": "string"},
        "source": {"type": "string"},
        "dimension": {"type": "integer", "minimum": 2},
        "volume": _NUM,
        "euler_characteristic": {"type": ["integer", "null"]},
        "generators": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["label", "matrix"],
                "properties": {
                    "label": {"type": "string"},
                    "matrix": {"type": "array", "items": _NUM},
                },
            },
        },
        "domain_vertices": {"type": "array", "items": {"type": "array", "items": _NUM}},
        "facets": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["vertex_indices", "paired_facet", "pairing_generator"],
                "properties": {
                    "vertex_indices": {"type": "array", "items": {"type": "integer", "minimum": 0}},
                    "paired_facet": {"type": "integer", "minimum": 0},
                    "pairing_generator": {"type": "string"},
                },
            },
        },
        "basepoint": {"type": "array", "items": _NUM},
    },
}


def _num(x) -> float:
    try:
        return float(x)
    except (TypeError, ValueError) as exc:
        raise ManifoldError(f"not a number: {x!r}") from exc


def manifold_to_dict(M: QuotientManifold) -> dict:
    out = {
        "name": M.name,
        "source": M.source,
        "dimension": M.dimension,
        "volume": repr(float(M.volume)),
        "euler_characteristic": M.euler_characteristic,
        "generators": [
            {"label": g.label, "matrix": [repr(float(x)) for x in g.isometry.matrix.ravel()]}
            for g in M.generators
        ],
        "domain_vertices": [[repr(float(x)) for x in v] for v in M.domain_vertices],
        "facets": [
            {
                "vertex_indices": list(f.vertex_indices),
                "paired_facet": f.paired_facet,
                "pairing_generator": f.pairing_generator,
            }
            for f in M.facets
        ],
        "basepoint": [repr(float(x)) for x in M.basepoint.coords],
    }
    return out


def manifold_from_dict(data: dict) -> QuotientManifold:
    try:
        jsonschema.validate(data, MANIFOLD_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ManifoldError(f"schema violation at {where}: {exc.message}") from exc
    n = int(data["dimension"])
    gens = []
    for i, g in enumerate(data["generators"]):
        vals = [_num(x) for x in g["matrix"]]
        if len(vals) != (n + 1) ** 2:
            raise ManifoldError(
                f"generator {i} ({g['label']!r}): matrix has {len(vals)} entries, expected {(n + 1) ** 2}"
            )
        try:
            iso = HIsometry(np.array(vals).reshape(n + 1, n + 1))
        except MalformedIsometryError as exc:
            raise MalformedIsometryError(f"generator {i} ({g['label']!r}): {exc}") from exc
        gens.append(Generator(g["label"], iso))
    V = np.array([[_num(x) for x in v] for v in data["domain_vertices"]])
    facets = tuple(
        Facet(tuple(f["vertex_indices"]), int(f["paired_facet"]), f["pairing_generator"])
        for f in data["facets"]
    )
    basepoint = HPoint(np.array([_num(x) for x in data["basepoint"]]))
    chi = data.get("euler_characteristic")
    volume = data.get("volume")
    kwargs = dict(
        dimension=n,
        generators=tuple(gens),
        domain_vertices=V,
        facets=facets,
        basepoint=basepoint,
        euler_characteristic=chi,
        name=data["name"],
        source=data.get("source", ""),
    )
    if volume is None:
        if n == 2 and chi is not None:
            vol = -2 * math.pi * chi
        else:
            # validate the combinatorics with a placeholder first, then integrate
            probe = QuotientManifold(volume=1.0, **{**kwargs, "euler_characteristic": None})
            vol = domain_volume(probe)
        return QuotientManifold(volume=vol, **kwargs)
    return QuotientManifold(volume=_num(volume), **kwargs)


def export_manifold(M: QuotientManifold, path) -> None:
    Path(path).write_text(json.dumps(manifold_to_dict(M), indent=1) + "\n", encoding="utf-8")


def ingest_manifold(path) -> QuotientManifold:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifoldError(f"{path}: invalid JSON ({exc})") from exc
    return manifold_from_dict(data)


# -- domain sampling and volume --------------------------------------------------


def _cube_offsets(n: int) -> np.ndarray:
    return np.array(np.meshgrid(*[[-1.0, 1.0]] * n, indexing="ij")).reshape(n, -1).T


def _cell_geometry(M: QuotientManifold, centers: np.ndarray, half: float):
    """Hyperbolic radius bound and facet values for Poincare-ball cubes."""
    n = M.dimension
    rad_e = half * math.sqrt(n)
    norm = np.linalg.norm(centers, axis=1)
    outer = norm + rad_e
    with np.errstate(divide="ignore"):
        lam = np.where(outer < 1.0, 2.0 / (1.0 - np.minimum(outer, 1.0) ** 2), np.inf)
    hrad = lam * rad_e
    inside_ball = norm < 1.0
    safe = np.where(inside_ball[:, None], centers, 0.0)
    s = np.sum(safe * safe, axis=1, keepdims=True)
    x = np.concatenate([1.0 + s, 2.0 * safe], axis=1) / (1.0 - s)
    vals = np.arcsinh(M.signed_facet_values(x))
    return hrad, vals, inside_ball


def _outer_radius(M: QuotientManifold) -> float:
    return float(np.max(np.linalg.norm(to_poincare(M.domain_vertices), axis=1)))


def domain_samples(M: QuotientManifold, h: float) -> np.ndarray:
    """Deterministic sample of the fundamental domain with covering radius about h.

    Dyadic cubes in Poincare-ball coordinates are refined until each has
    hyperbolic radius <= h; centres inside the domain are kept.  Cubes that
    straddle the boundary with their centre outside are split once more.
    """
    if h <= 0:
        raise ValueError("resolution must be positive")
    n = M.dimension
    offsets = _cube_offsets(n)
    umax = _outer_radius(M)
    centers = np.zeros((1, n))
    half = umax
    out = []
    while len(centers):
        hrad, vals, inside_ball = _cell_geometry(M, centers, half)
        outside = (np.linalg.norm(centers, axis=1) - half * math.sqrt(n) > umax) | (
            inside_ball & np.any(vals > hrad[:, None], axis=1)
        )
        center_in = inside_ball & np.all(vals <= 0.0, axis=1)
        leaf = (hrad <= h) & ~outside
        out.append(centers[leaf & center_in])
        straddle = leaf & ~center_in
        if np.any(straddle):
            kids = (centers[straddle][:, None, :] + 0.5 * half * offsets[None]).reshape(-1, n)
            _, vk, ik = _cell_geometry(M, kids, half / 2)
            out.append(kids[ik & np.all(vk <= 0.0, axis=1)])
        nxt = centers[~outside & ~leaf]
        centers = (nxt[:, None, :] + 0.5 * half * offsets[None]).reshape(-1, n)
        half /= 2
    u = np.concatenate(out, axis=0) if out else np.zeros((0, n))
    if not len(u):
        raise ManifoldError("empty domain sample")
    s = np.sum(u * u, axis=1, keepdims=True)
    return np.concatenate([1.0 + s, 2.0 * u], axis=1) / (1.0 - s)


def polygon_area(M: QuotientManifold) -> float:
    """Exact area of the fundamental polygon: (k - 2) pi minus the angle sum."""
    if M.dimension != 2:
        raise UnsupportedDimensionError("polygon_area needs n = 2")
    N = M.facet_normals
    k = len(M.facets)
    total = 0.0
    for a in range(k):
        for b in range(a + 1, k):
            if set(M.facets[a].vertex_indices) & set(M.facets[b].vertex_indices):
                c = -float(minkowski_dot(N[a], N[b]))
                total += math.acos(max(-1.0, min(1.0, c)))
    return (k - 2) * math.pi - total


def polyhedron_volume(M: QuotientManifold, order: int = 24, splits: int = 4) -> float:
    """Volume of a three-dimensional fundamental polyhedron by coning its faces from the basepoint.

    With the basepoint moved to the origin, faces are flat in the Klein
    model.  In polar coordinates the radial integral of sinh^2 is
    (sinh 2p - 2p)/4 with p the distance to the face, and the solid angle
    of a face patch dA at Klein position k is d dA / |k|^3 (d the plane's
    Euclidean distance).  Each face is fanned into triangles and integrated
    with a collapsed Gauss-Legendre rule.
    """
    if M.dimension != 3:
        raise UnsupportedDimensionError("polyhedron_volume needs n = 3")
    b = M.basepoint.coords
    T = np.eye(4)
    if np.linalg.norm(b[1:]) > 1e-15:
        T = boost_along(b[1:], -float(np.arccosh(b[0])))
    K = to_klein((T @ M.domain_vertices.T).T)
    x, w = np.polynomial.legendre.leggauss(order)
    x, w = (x + 1) / 2, w / 2
    U, V = np.meshgrid(x, x, indexing="ij")
    W = np.outer(w, w)
    total = 0.0
    for f in M.facets:
        P = K[list(f.vertex_indices)]
        c = P.mean(axis=0)
        nrm = np.linalg.svd(P[1:] - P[0])[2][-1]
        d = abs(float(nrm @ P[0]))
        # order the face vertices around the centroid
        e1 = P[0] - c
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(nrm, e1)
        ang = np.arctan2((P - c) @ e2, (P - c) @ e1)
        P = P[np.argsort(ang)]
        for i in range(len(P)):
            a0, a1 = P[i], P[(i + 1) % len(P)]
            # split each fan triangle into splits^2 pieces for accuracy near the corners
            for s in range(splits):
                for t in range(splits - s):
                    for flip in (False, True):
                        if flip and t == splits - s - 1:
                            continue
                        q0 = c + (s * (a0 - c) + t * (a1 - c)) / splits
                        da, db = (a0 - c) / splits, (a1 - c) / splits
                        tri = (q0, q0 + da, q0 + db) if not flip else (q0 + da + db, q0 + db, q0 + da)
                        A, B, C = tri
                        pts = A + U[..., None] * (B - A) + (U * V)[..., None] * (C - B)
                        jac = U * np.linalg.norm(np.cross(B - A, C - B))
                        r = np.linalg.norm(pts, axis=-1)
                        rho = np.arctanh(r)
                        f_val = (np.sinh(2 * rho) - 2 * rho) / 4 * d / r**3
                        total += float(np.sum(W * jac * f_val))
    return total


def domain_volume(M: QuotientManifold, h: float = 0.02, method: str = "auto") -> float:
    """Hyperbolic volume of the fundamental domain.

    ``auto`` is exact for polygons and uses coned-face quadrature for
    polyhedra.  ``sampled`` (the only route for n >= 4) integrates interior
    Poincare-ball cubes with a tensor Gauss rule and refines boundary cubes
    to radius h, counting them by their centres.
    """
    if method not in ("auto", "sampled"):
        raise ValueError(f"unknown volume method {method!r}")
    if method == "auto" and M.dimension == 2:
        return polygon_area(M)
    if method == "auto" and M.dimension == 3:
        return polyhedron_volume(M)
    n = M.dimension
    offsets = _cube_offsets(n)
    gx, gw = np.polynomial.legendre.leggauss(3)
    grid = np.array(np.meshgrid(*[gx] * n, indexing="ij")).reshape(n, -1).T
    gwt = np.prod(np.array(np.meshgrid(*[gw] * n, indexing="ij")).reshape(n, -1).T, axis=1)
    umax = _outer_radius(M)
    centers = np.zeros((1, n))
    half = umax
    total = 0.0
    while len(centers):
        hrad, vals, inside_ball = _cell_geometry(M, centers, half)
        finite = np.isfinite(hrad)
        outside = (np.linalg.norm(centers, axis=1) - half * math.sqrt(n) > umax) | (
            inside_ball & finite & np.any(vals > hrad[:, None], axis=1)
        )
        fully_in = finite & np.all(vals < -hrad[:, None], axis=1)
        integrate = fully_in & (hrad <= 0.5)
        if np.any(integrate):
            pts = centers[integrate][:, None, :] + half * grid[None]
            dens = (2.0 / (1.0 - np.sum(pts * pts, axis=2))) ** n
            total += float(np.sum(dens * gwt[None])) * half**n
        leaf = ~outside & ~integrate & (hrad <= h)
        if np.any(leaf):
            c = centers[leaf]
            cin = np.all(vals[leaf] <= 0.0, axis=1)
            dens = (2.0 / (1.0 - np.sum(c * c, axis=1))) ** n
            total += float(np.sum(dens[cin])) * (2 * half) ** n
        refine = ~outside & ~integrate & ~leaf
        nxt = centers[refine]
        centers = (nxt[:, None, :] + 0.5 * half * offsets[None]).reshape(-1, n)
        half /= 2
    return total


# -- group enumeration -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GroupBall:
    """Deck transformations reached by pruned walks of length <= L through the tiling.

    Elements are found breadth-first (so ``depths`` is the walk length) and
    deduplicated by their image of the basepoint; walks are abandoned as
    soon as d(o, g o) exceeds ``cutoff``.  Every element with
    d(o, g o) <= ``certified_radius`` is guaranteed present.
    """

    L: int | None
    cutoff: float
    labels: tuple[str, ...]
    matrices: np.ndarray
    parents: np.ndarray
    letters: np.ndarray
    depths: np.ndarray
    displacements: np.ndarray
    certified_radius: float

    def __len__(self) -> int:
        return len(self.matrices)

    def word(self, i: int) -> tuple[str, ...]:
        out = []
        while i > 0:
            out.append(self.labels[self.letters[i]])
            i = int(self.parents[i])
        return tuple(reversed(out))

    def isometry(self, i: int) -> HIsometry:
        return HIsometry(self.matrices[i])

    def up_to(self, L: int) -> np.ndarray:
        return self.matrices[self.depths <= L]


def _dedup(points: np.ndarray, existing: cKDTree | None) -> np.ndarray:
    """Indices of the first occurrence of each distinct point not already in ``existing``."""
    keep = np.ones(len(points), dtype=bool)
    if existing is not None and existing.n:
        d, _ = existing.query(points, distance_upper_bound=DEDUP_TOL)
        keep &= ~np.isfinite(d)
    idx = np.flatnonzero(keep)
    if len(idx) > 1:
        pairs = cKDTree(points[idx]).query_pairs(DEDUP_TOL, output_type="ndarray")
        if len(pairs):
            drop = np.unique(np.max(pairs, axis=1))
            mask = np.ones(len(idx), dtype=bool)
            mask[drop] = False
            idx = idx[mask]
    return idx


def enumerate_group_ball(M: QuotientManifold, L: int | None, cutoff: float) -> GroupBall:
    """Breadth-first walk through the tiling from F, pruned at basepoint displacement ``cutoff``.

    Certification: the tiles meeting B(o, rho) form a facet-connected set,
    each of them moves o by at most rho + rad(F).  If rho + rad(F) <= cutoff
    and every walk of length L that survived moved o by more than
    rho + rad(F), all tiles meeting B(o, rho) were reached.
    """
    if L is not None and L < 0:
        raise ValueError("word length must be nonnegative")
    n = M.dimension
    gens = M.pairing_matrices
    inv = M.pairing_inverse_index
    o = M.basepoint.coords
    rad = M.domain_radius

    mats = [np.eye(n + 1)[None]]
    parents = [np.array([-1])]
    letters = [np.array([-1])]
    depths = [np.array([0])]
    disp = [np.array([0.0])]
    points = o[None].copy()
    tree = cKDTree(points)

    front_m, front_idx, front_last = mats[0], np.array([0]), np.array([-1])
    depth = 0
    frontier_min = math.inf
    total = 1
    while len(front_m):
        if L is not None and depth >= L:
            frontier_min = float(np.min(disp[-1])) if depth > 0 else 0.0
            break
        depth += 1
        cand = np.einsum("kij,sjl->ksil", front_m, gens)
        k, s = np.meshgrid(np.arange(len(front_m)), np.arange(len(gens)), indexing="ij")
        ok = inv[s] != front_last[k]
        cand, k, s = cand[ok], k[ok], s[ok]
        img = cand @ o
        d = distance_arrays(o, img)
        ok = d <= cutoff
        cand, k, s, img, d = cand[ok], k[ok], s[ok], img[ok], d[ok]
        keep = _dedup(img, tree)
        cand, k, s, img, d = cand[keep], k[keep], s[keep], img[keep], d[keep]
        if not len(cand):
            break
        mats.append(cand)
        parents.append(front_idx[k])
        letters.append(s)
        depths.append(np.full(len(cand), depth))
        disp.append(d)
        new_idx = np.arange(total, total + len(cand))
        total += len(cand)
        points = np.concatenate([points, img])
        tree = cKDTree(points)
        front_m, front_idx, front_last = cand, new_idx, s

    certified = min(cutoff, frontier_min) - rad
    return GroupBall(
        L=L,
        cutoff=float(cutoff),
        labels=M.pairing_labels,
        matrices=np.concatenate(mats),
        parents=np.concatenate(parents),
        letters=np.concatenate(letters),
        depths=np.concatenate(depths),
        displacements=np.concatenate(disp),
        certified_radius=float(certified),
    )


# -- quotient distance and systole -------------------------------------------------


def _check_in_domain(M: QuotientManifold, *pts: HPoint) -> None:
    for p in pts:
        if p.dim != M.dimension:
            raise UnsupportedDimensionError("point dimension does not match manifold")
        if not M.contains(p.coords, tol=1e-7):
            raise OutOfDomainError(f"{p!r} lies outside the fundamental domain")


def quotient_distance_certified(
    p: HPoint, q: HPoint, M: QuotientManifold, L: int | None = 8
) -> tuple[float, bool]:
    """Quotient distance and whether the enumeration provably contained the minimiser."""
    _check_in_domain(M, p, q)
    rad = M.domain_radius
    # the minimiser g satisfies d(o, g o) <= d + 2 rad; start with the neighbours of F
    first = M.group_ball(L, 3 * rad + 1e-9)
    d = float(np.min(distance_arrays(p.coords, first.matrices @ q.coords)))
    need = d + 3 * rad
    ball = first if first.cutoff >= need else M.group_ball(L, math.ceil(need * 4) / 4)
    if ball is not first:
        d = float(np.min(distance_arrays(p.coords, ball.matrices @ q.coords)))
    return d, d + 2 * rad <= ball.certified_radius


def quotient_distance(p: HPoint, q: HPoint, M: QuotientManifold, L: int | None = 8) -> float:
    if L is not None and L < 1:
        raise ValueError("word length must be >= 1")
    return quotient_distance_certified(p, q, M, L)[0]


@dataclass(frozen=True)
class SystoleResult:
    sys: float
    word: tuple[str, ...]
    inj: float
    word_length_used: int
    certified_radius: float
    certified: bool
    spectrum: tuple[tuple[float, int], ...] = ()

    def __post_init__(self) -> None:
        if self.inj != self.sys / 2:
            raise ValueError("inj must equal sys / 2 on a closed hyperbolic manifold")


def systole(M: QuotientManifold, L: int = 8, cutoff: float | None = None) -> SystoleResult:
    """Shortest closed geodesic via translation lengths over a pruned group ball.

    A closed geodesic of length l has a lift whose axis crosses F, so its
    deck transformation moves o by at most l + 2 rad(F).  The result is
    certified once the enumeration is exhaustive up to that displacement.
    """
    if L < 2:
        raise ValueError(f"systole needs word length >= 2, got {L}")
    rad = M.domain_radius
    if cutoff is None:
        gen_len = translation_lengths(M.pairing_matrices)
        upper = float(np.nanmin(gen_len)) if np.any(np.isfinite(gen_len)) else 2 * rad
        cutoff = upper + 3 * rad + 1e-6
    ball = M.group_ball(L, cutoff)
    lengths = translation_lengths(ball.matrices[1:])
    if not np.any(np.isfinite(lengths)):
        raise SystoleError("no hyperbolic element in the enumerated group ball")
    i = int(np.nanargmin(lengths))
    sys_val = float(lengths[i])
    # conjugacy classes by (length, trace) at 1e-6 resolution
    finite = np.isfinite(lengths)
    tr = np.trace(ball.matrices[1:], axis1=1, axis2=2)
    keys = np.round(np.stack([lengths[finite], tr[finite]], axis=1), 6)
    classes, counts = np.unique(keys[:, 0], return_counts=True)
    spectrum = tuple((float(c), int(m)) for c, m in zip(classes[:10], counts[:10]))
    res = SystoleResult(
        sys=sys_val,
        word=ball.word(i + 1),
        inj=sys_val / 2,
        word_length_used=L,
        certified_radius=ball.certified_radius,
        certified=sys_val + 2 * rad <= ball.certified_radius,
        spectrum=spectrum,
    )
    prev = M._cache.get("systole")
    if prev is None or (res.certified and not prev.certified) or res.sys < prev.sys:
        M._cache["systole"] = res
    return res
