"""Maximal separated nets, sampled Voronoi decompositions and their dual triangulations.

All distances are quotient distances on M = H^n / Gamma.  They are
evaluated in the universal cover: a net point x in F is replaced by its
lifts g x that can possibly come within the search radius of F, and
candidate pairs are found with a k-d tree on Poincare-ball coordinates
(each query uses the exact Euclidean radius of the Poincare ball that
contains the hyperbolic delta-ball, so no pair is missed).
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import ConvexHull, cKDTree

from . import __version__
from . import bounds
from .hypgeom import (
    HPoint,
    ball_volume,
    ball_volume_lower_bound,
    distance_arrays,
    minkowski_dot,
    to_poincare,
)
from .quotient import QuotientManifold, domain_samples, systole

REGIMES = ("jt3", "jtn", "embolic", "free")
REGIME_FRACTION = {"jt3": 0.5, "jtn": 1.0, "embolic": 0.2}


class NetError(ValueError):
    pass


class ResolutionError(NetError):
    pass


class InvariantViolation(RuntimeError):
    pass


class TriangulationError(RuntimeError):
    pass


# -- helpers -------------------------------------------------------------------


def _samples(M: QuotientManifold, h: float) -> np.ndarray:
    key = ("samples", round(h, 12))
    if key not in M._cache:
        M._cache[key] = domain_samples(M, h)
    return M._cache[key]


def _lifts(M: QuotientManifold, pts: np.ndarray, reach: float):
    """Lifts g x of points x in F with d(o, g x) <= rad(F) + reach.

    Returns (lifted points, owner index, element index); element 0 is the identity.
    """
    rad = M.domain_radius
    G = M.elements_within(reach + 2 * rad)
    o = M.basepoint.coords
    chunk = max(1, 2_000_000 // len(G))
    P, I, E = [], [], []
    for start in range(0, len(pts), chunk):
        imgs = np.einsum("gij,pj->gpi", G, pts[start : start + chunk])
        gi, pi = np.nonzero(distance_arrays(o, imgs) <= rad + reach)
        P.append(imgs[gi, pi])
        I.append(pi + start)
        E.append(gi)
    return np.concatenate(P), np.concatenate(I), np.concatenate(E)


def _euclid_radius(u: np.ndarray, delta: float) -> np.ndarray:
    """Euclidean radius of a Poincare ball around u containing the hyperbolic delta-ball."""
    t = np.linalg.norm(u, axis=-1)
    s = 2.0 * np.arctanh(np.minimum(t, 1 - 1e-16))
    inner = t - np.tanh((s - delta) / 2.0)
    outer = np.tanh((s + delta) / 2.0) - t
    return np.maximum(inner, outer) * (1 + 1e-9) + 1e-12


def _pairs_within(
    query_pts: np.ndarray, target_pts: np.ndarray, delta: float, chunk: int = 20000
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """All (i, j, d) with hyperbolic d(query_i, target_j) <= delta."""
    uq = to_poincare(query_pts)
    tree = cKDTree(to_poincare(target_pts))
    I, Jx, D = [], [], []
    for start in range(0, len(uq), chunk):
        sl = slice(start, start + chunk)
        lists = tree.query_ball_point(uq[sl], r=_euclid_radius(uq[sl], delta))
        lens = np.fromiter((len(x) for x in lists), dtype=np.int64, count=len(lists))
        if not lens.sum():
            continue
        i = np.repeat(np.arange(start, start + len(lists)), lens)
        j = np.fromiter((k for x in lists for k in x), dtype=np.int64, count=int(lens.sum()))
        d = distance_arrays(query_pts[i], target_pts[j])
        keep = d <= delta
        I.append(i[keep])
        Jx.append(j[keep])
        D.append(d[keep])
    if not I:
        e = np.zeros(0, dtype=np.int64)
        return e, e, np.zeros(0)
    return np.concatenate(I), np.concatenate(Jx), np.concatenate(D)


# -- nets ------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Net:
    """A maximal R-separated subset of the sample set of F."""

    R: float
    h: float
    seed: int
    points: np.ndarray
    sample_set: np.ndarray
    net_sample_index: np.ndarray
    nearest_distance: np.ndarray
    maximality_certificate: float
    separation: float
    manifold_name: str = ""

    def __len__(self) -> int:
        return len(self.points)

    @property
    def hpoints(self) -> list[HPoint]:
        return [HPoint(x) for x in self.points]


def build_net(M: QuotientManifold, R: float, h: float | None = None, seed: int = 0) -> Net:
    """Greedy maximal R-separated net over a deterministic sample of F.

    Samples are visited in a seeded permutation; a sample joins the net iff
    its quotient distance to every current net point is >= R.
    """
    if not R > 0:
        raise NetError(f"R must be positive, got {R}")
    if h is None:
        h = R / 20
    if not h > 0 or h > R / 10 * (1 + 1e-12):
        raise ResolutionError(f"sample resolution h={h:g} must satisfy 0 < h <= R/10 = {R / 10:g}")
    S = _samples(M, h)
    if not len(S):
        raise NetError("empty sample set")
    order = np.random.default_rng(seed).permutation(len(S))
    tree = cKDTree(to_poincare(S))
    # quotient distances never exceed 2 rad(F), so larger radii need no larger search
    Rs = min(R, 2 * M.domain_radius + 1e-9)
    G = M.elements_within(Rs + 2 * M.domain_radius)
    o = M.basepoint.coords
    reach = M.domain_radius + Rs
    covered = np.zeros(len(S), dtype=bool)
    nearest = np.full(len(S), np.inf)
    chosen = []
    for i in order:
        if covered[i]:
            continue
        chosen.append(i)
        lifts = G @ S[i]
        lifts = lifts[distance_arrays(o, lifts) <= reach]
        u = to_poincare(lifts)
        lists = tree.query_ball_point(u, r=_euclid_radius(u, Rs))
        for lift, idx in zip(lifts, lists):
            if not idx:
                continue
            idx = np.asarray(idx)
            d = distance_arrays(lift, S[idx])
            close = d < R
            covered[idx[close]] = True
            np.minimum.at(nearest, idx[close], d[close])
    chosen = np.asarray(chosen)
    pts = S[chosen]
    # separation: smallest quotient distance between distinct net points (<= 2R reported)
    sep = math.inf
    if len(pts) > 1:
        L, owner, gi = _lifts(M, pts, 2 * Rs)
        i, j, d = _pairs_within(pts, L, 2 * Rs)
        other = ~((owner[j] == i) & (gi[j] == 0))
        if np.any(other):
            sep = float(np.min(d[other]))
    return Net(
        R=float(R),
        h=float(h),
        seed=int(seed),
        points=pts,
        sample_set=S,
        net_sample_index=chosen,
        nearest_distance=nearest,
        maximality_certificate=float(np.max(nearest)),
        separation=sep,
        manifold_name=M.name,
    )


# -- Voronoi decomposition -------------------------------------------------------


@dataclass(frozen=True, eq=False)
class VoronoiDecomposition:
    net: Net
    assignment: np.ndarray
    sample_distance: np.ndarray
    adjacency: np.ndarray
    adjacency_distance: np.ndarray
    cell_count: int
    volume: float
    dimension: int
    packing_lhs: float = field(init=False)

    def __post_init__(self) -> None:
        lhs = self.cell_count * ball_volume(self.dimension, self.net.R / 2)
        object.__setattr__(self, "packing_lhs", lhs)

    @property
    def packing_holds(self) -> bool:
        return self.packing_lhs <= self.volume + 1e-6

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.cell_count, dtype=int)
        if len(self.adjacency):
            np.add.at(deg, self.adjacency.ravel(), 1)
        return deg

    def adjacency_slack(self, factor: float = 1.5) -> float:
        """max over adjacent pairs of center distance minus (factor R + 2h); <= 0 when the bound holds.

        factor 1.5 is the common-face criterion B(y, R) in B(x, 5R/2); factor 2
        is what the face count actually needs (disjoint R/2-balls in B(x, 5R/2)).
        """
        if not len(self.adjacency_distance):
            return -math.inf
        bound = factor * self.net.R + 2 * self.net.h
        return float(np.max(self.adjacency_distance) - bound)


def voronoi(M: QuotientManifold, net: Net) -> VoronoiDecomposition:
    """Nearest-net-point assignment of every sample; adjacency from sample pairs within 2h."""
    S, X, h = net.sample_set, net.points, net.h
    N = len(X)
    cover = net.maximality_certificate * (1 + 1e-12) + 1e-12
    L, owner, _ = _lifts(M, X, cover)
    i, j, d = _pairs_within(S, L, cover)
    o = np.lexsort((owner[j], d, i))
    i, j, d = i[o], j[o], d[o]
    first = np.ones(len(i), dtype=bool)
    first[1:] = i[1:] != i[:-1]
    assignment = np.full(len(S), -1)
    dist = np.full(len(S), np.inf)
    assignment[i[first]] = owner[j[first]]
    dist[i[first]] = d[first]
    if np.any(assignment < 0):
        raise InvariantViolation("sample left unassigned: net is not covering")
    own = assignment[net.net_sample_index]
    if not np.array_equal(own, np.arange(N)):
        raise InvariantViolation("a net point is not assigned to its own cell")

    edges = np.zeros((0, 2), dtype=int)
    edge_d = np.zeros(0)
    if N > 1:
        SL, s_owner, _ = _lifts(M, S, 2 * h)
        a, b, _ = _pairs_within(S, SL, 2 * h)
        ca, cb = assignment[a], assignment[s_owner[b]]
        diff = ca != cb
        if np.any(diff):
            e = np.unique(np.sort(np.stack([ca[diff], cb[diff]], axis=1), axis=1), axis=0)
            edges = e
            edge_d = _center_distances(M, X, e, 2 * cover + 2 * h)
    return VoronoiDecomposition(
        net=net,
        assignment=assignment,
        sample_distance=dist,
        adjacency=edges,
        adjacency_distance=edge_d,
        cell_count=N,
        volume=M.volume,
        dimension=M.dimension,
    )


def _center_distances(M: QuotientManifold, X: np.ndarray, edges: np.ndarray, reach: float) -> np.ndarray:
    G = M.elements_within(reach + 2 * M.domain_radius)
    lifted = np.einsum("gij,ej->egi", G, X[edges[:, 1]])
    d = distance_arrays(X[edges[:, 0]][:, None, :], lifted)
    return np.min(d, axis=1)


# -- counting bounds -------------------------------------------------------------


@dataclass(frozen=True)
class CountBound:
    N_actual: int
    N_bound: float
    N_exp_bound: float


def count_bound(M: QuotientManifold, net: Net) -> CountBound:
    """Cell count against vol/vol(B(R/2)) and its exponential-form relaxation."""
    n = M.dimension
    return CountBound(
        N_actual=len(net),
        N_bound=M.volume / ball_volume(n, net.R / 2),
        N_exp_bound=M.volume / ball_volume_lower_bound(n, net.R),
    )


@dataclass(frozen=True)
class FaceCountBound:
    F_max: float
    degrees: np.ndarray
    max_degree: int


def face_count_max(n: int, R: float) -> float:
    return ball_volume(n, 2.5 * R) / ball_volume(n, R / 2)


def face_count_bound(M: QuotientManifold, decomp: VoronoiDecomposition) -> FaceCountBound:
    F_max = face_count_max(M.dimension, decomp.net.R)
    deg = decomp.degrees()
    top = int(deg.max()) if len(deg) else 0
    if top > F_max:
        raise InvariantViolation(f"cell degree {top} exceeds the face-count bound {F_max:.4g}")
    return FaceCountBound(F_max=F_max, degrees=deg, max_degree=top)


# -- dual triangulation ------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Triangulation:
    dimension: int
    vertices: np.ndarray
    edges: np.ndarray
    simplices: np.ndarray
    simplex_count: int
    is_estimate: bool
    euler_characteristic: int | None
    manifold_name: str
    R: float
    h: float
    sampled_edge_recall: float | None = None

    @property
    def counts(self) -> tuple[int, int, int]:
        return len(self.vertices), len(self.edges), self.simplex_count


def _delaunay_2d(M: QuotientManifold, decomp: VoronoiDecomposition):
    net = decomp.net
    X = net.points
    cover = net.maximality_certificate + 2 * net.h
    o = M.basepoint.coords
    reach = 2 * cover + 0.05
    for _ in range(4):
        P, owner, gi = _lifts(M, X, reach)
        D_lift = M.domain_radius + reach
        hull = ConvexHull(P)
        nrm = hull.equations[:, :-1]
        # lower facets whose plane cuts the sheet in a compact circle (timelike normal)
        lower = (nrm[:, 0] < 0) & (np.linalg.norm(nrm[:, 1:], axis=1) < -nrm[:, 0])
        simp = hull.simplices[lower]
        has_id = np.any(gi[simp] == 0, axis=1)
        simp, e = simp[has_id], nrm[lower][has_id]
        m = np.concatenate([-e[:, :1], e[:, 1:]], axis=1)
        c = m / np.sqrt(-minkowski_dot(m, m))[:, None]
        rho = distance_arrays(c, P[simp[:, 0]])
        if np.all(distance_arrays(o, c) + rho <= D_lift):
            break
        reach *= 1.5
    else:
        raise TriangulationError("lifted point set too small to certify the Delaunay triangles")
    tri = np.sort(owner[simp], axis=1)
    if np.any(tri[:, 0] == tri[:, 1]) or np.any(tri[:, 1] == tri[:, 2]):
        raise TriangulationError("a Delaunay triangle uses two lifts of one net point; decrease R")
    return np.unique(tri, axis=0)


def _check_surface(tris: np.ndarray, N: int, chi: int | None):
    e = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [0, 2]]])
    edges, mult = np.unique(e, axis=0, return_counts=True)
    if np.any(mult != 2):
        bad = edges[mult != 2][:3].tolist()
        raise TriangulationError(f"edges not in exactly two triangles, e.g. {bad}")
    used = np.unique(tris)
    if len(used) != N:
        raise TriangulationError(f"only {len(used)} of {N} cells appear in the dual complex")
    euler = N - len(edges) + len(tris)
    if chi is not None and euler != chi:
        raise TriangulationError(
            f"Euler check failed: V - E + F = {N} - {len(edges)} + {len(tris)} = {euler} != {chi}"
        )
    return edges, euler


def dual_triangulation(
    M: QuotientManifold, decomp: VoronoiDecomposition, inj: float | None = None
) -> Triangulation:
    """Dual complex of the Voronoi decomposition.

    n = 2: the exact Delaunay triangulation of the net, read off the lower
    convex hull of the lifted net points on the hyperboloid; every triangle
    with a vertex in F is certified empty.  n >= 3: a counted estimate,
    sum over cells of max(degree, 1) * (n-1)!.
    """
    net = decomp.net
    N = decomp.cell_count
    if N > 1:
        A = coo_matrix(
            (np.ones(len(decomp.adjacency)), (decomp.adjacency[:, 0], decomp.adjacency[:, 1])),
            shape=(N, N),
        )
        ncomp, _ = connected_components(A, directed=False)
        if ncomp != 1:
            raise TriangulationError(f"adjacency graph has {ncomp} components")
    n = M.dimension
    if n >= 3:
        t = int(np.sum(np.maximum(decomp.degrees(), 1)) * bounds.cone_factor(n))
        return Triangulation(
            dimension=n,
            vertices=np.arange(N),
            edges=decomp.adjacency,
            simplices=np.zeros((0, n + 1), dtype=int),
            simplex_count=t,
            is_estimate=True,
            euler_characteristic=None,
            manifold_name=M.name,
            R=net.R,
            h=net.h,
        )
    if inj is None:
        inj = M.injectivity_radius or systole(M, L=12).inj
    if net.R > inj / 2 * (1 + 1e-9):
        raise TriangulationError(f"R = {net.R:g} exceeds inj/2 = {inj / 2:g}; the dual need not be simplicial")
    chi = M.euler_characteristic
    if chi is None:
        chi = int(round(-M.volume / (2 * math.pi)))
    tris = _delaunay_2d(M, decomp)
    edges, euler = _check_surface(tris, N, chi)
    recall = None
    if len(edges):
        sampled = {tuple(e) for e in decomp.adjacency.tolist()}
        recall = sum(tuple(e) in sampled for e in edges.tolist()) / len(edges)
    return Triangulation(
        dimension=2,
        vertices=np.arange(N),
        edges=edges,
        simplices=tris,
        simplex_count=len(tris),
        is_estimate=False,
        euler_characteristic=euler,
        manifold_name=M.name,
        R=net.R,
        h=net.h,
        sampled_edge_recall=recall,
    )


def export_triangulation(tri: Triangulation, path) -> None:
    V, E, T = tri.counts
    lines = [
        f"# hypnet {__version__} triangulation",
        f"# manifold {tri.manifold_name}",
        f"# dimension {tri.dimension}",
        f"# R {tri.R!r}",
        f"# h {tri.h!r}",
        f"# V {V}",
        f"# E {E}",
        f"# {'F' if tri.dimension == 2 else 'T'} {T}",
        f"# estimate {'true' if tri.is_estimate else 'false'}",
    ]
    lines += [" ".join(str(int(v)) for v in s) for s in tri.simplices]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_triangulation(path) -> tuple[dict[str, str], np.ndarray]:
    header: dict[str, str] = {}
    rows = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.startswith("#"):
            parts = line[1:].split(None, 1)
            if len(parts) == 2:
                header[parts[0]] = parts[1]
        elif line.strip():
            rows.append([int(x) for x in line.split()])
    return header, np.array(rows, dtype=int)


# -- pipeline ------------------------------------------------------------------------


@dataclass(frozen=True)
class PipelineConfig:
    regime: str = "jt3"
    R: float | None = None
    h: float | None = None
    seed: int = 0
    L: int = 12
    a0: float | None = None

    def __post_init__(self) -> None:
        if self.regime not in REGIMES:
            raise NetError(f"unknown regime {self.regime!r}; choose from {REGIMES}")
        if self.regime == "free" and self.R is None:
            raise NetError("regime 'free' needs an explicit R")
        if self.regime != "free" and self.R is not None:
            raise NetError(f"regime {self.regime!r} derives R from the injectivity radius; drop R")
        if self.a0 is not None and not self.a0 > 0:
            raise NetError("injectivity floor a0 must be positive")


@dataclass(frozen=True, eq=False)
class PipelineResult:
    manifold: QuotientManifold
    config: PipelineConfig
    inj: float
    sys: float | None
    R: float
    h: float
    net: Net
    decomposition: VoronoiDecomposition
    counts: CountBound
    faces: FaceCountBound
    triangulation: Triangulation
    K: float
    a0: float

    @property
    def t(self) -> int:
        return self.triangulation.simplex_count

    @property
    def jt_holds(self) -> bool:
        return self.t <= self.K * self.manifold.volume


def regime_radius(regime: str, inj: float) -> float:
    return REGIME_FRACTION[regime] * inj


@contextmanager
def _stage(name: str):
    try:
        yield
    except Exception as exc:
        if not hasattr(exc, "stage"):
            exc.stage = name
        raise


def jt_pipeline(M: QuotientManifold, config: PipelineConfig = PipelineConfig()) -> PipelineResult:
    """Net -> Voronoi -> dual triangulation, checked against t <= K * vol.

    Exceptions carry a ``stage`` attribute naming the step that raised.
    """
    sys_val = None
    if config.a0 is not None:
        inj = config.a0
    else:
        with _stage("systole"):
            res = systole(M, L=config.L)
        inj, sys_val = res.inj, res.sys
    R = config.R if config.regime == "free" else regime_radius(config.regime, inj)
    h = config.h if config.h is not None else R / 20
    with _stage("net"):
        net = build_net(M, R, h, seed=config.seed)
    with _stage("voronoi"):
        decomp = voronoi(M, net)
        counts = count_bound(M, net)
        faces = face_count_bound(M, decomp)
    with _stage("triangulation"):
        tri = dual_triangulation(M, decomp, inj=inj)
    with _stage("bounds"):
        K = bounds.jt_constant(inj, M.dimension)
    return PipelineResult(
        manifold=M,
        config=config,
        inj=inj,
        sys=sys_val,
        R=R,
        h=h,
        net=net,
        decomposition=decomp,
        counts=counts,
        faces=faces,
        triangulation=tri,
        K=K,
        a0=inj,
    )
