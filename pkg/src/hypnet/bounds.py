"""Inequality chain relating triangulation counts, volume, and systolic/embolic volume.

Every constant that the underlying estimates leave abstract lives in a
`ConstantLedger` entry tagged ``configured``, ``computed`` or
``placeholder``.  Reports list every placeholder they touched so that no
bound silently rests on an invented value.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .hypgeom import (
    UnsupportedDimensionError,
    ball_volume,
    euclidean_ball_volume,
    exp_bound_constant,
)

TAGS = ("configured", "computed", "placeholder")
MAX_TETRAHEDRON_VOLUME = 1.01494160640965362502


class BoundsError(ValueError):
    pass


class RegimeError(BoundsError):
    pass


class ConfigurationError(BoundsError):
    pass


class HypothesisViolation(BoundsError):
    pass


@dataclass
class Constant:
    value: float
    tag: str
    note: str = ""
    inputs: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.tag not in TAGS:
            raise BoundsError(f"unknown provenance tag {self.tag!r}")
        if not (self.value > 0 and math.isfinite(self.value)):
            raise BoundsError(f"constants must be positive and finite, got {self.value}")


def _default_constant(kind: str, n: int) -> Constant:
    if kind == "nu":
        if n == 2:
            return Constant(math.pi, "configured", "area of the ideal triangle")
        if n == 3:
            return Constant(MAX_TETRAHEDRON_VOLUME, "configured", "volume of the regular ideal tetrahedron")
        return Constant(1.0, "placeholder", "simplicial-volume proportionality; no value supplied")
    if kind in ("C", "C_prime"):
        return Constant(1.0, "placeholder", "Gromov constant; no value supplied")
    if kind == "alpha":
        return Constant(
            euclidean_ball_volume(n), "configured", "Euclidean unit-ball volume (comparison bound)"
        )
    raise KeyError(kind)


class ConstantLedger:
    """Named constants with provenance; per-dimension names look like ``nu_3``."""

    def __init__(self, entries: dict[str, Constant] | None = None) -> None:
        self.entries: dict[str, Constant] = dict(entries or {})
        self.touched: set[str] = set()

    def get(self, kind: str, n: int | None = None) -> Constant:
        name = kind if n is None else f"{kind}_{n}"
        if name not in self.entries:
            if n is None:
                raise ConfigurationError(f"ledger has no entry {name!r}")
            self.entries[name] = _default_constant(kind, n)
        self.touched.add(name)
        return self.entries[name]

    def value(self, kind: str, n: int | None = None) -> float:
        return self.get(kind, n).value

    def has(self, name: str) -> bool:
        return name in self.entries

    def set(self, name: str, value: float, tag: str = "configured", note: str = "", **inputs) -> None:
        self.entries[name] = Constant(float(value), tag, note, dict(inputs))

    def record(self, name: str, value: float, note: str = "", **inputs) -> float:
        self.entries[name] = Constant(float(value), "computed", note, dict(inputs))
        self.touched.add(name)
        return value

    def placeholders(self, only_touched: bool = True) -> list[str]:
        names = self.touched if only_touched else self.entries
        return sorted(n for n in names if self.entries[n].tag == "placeholder")

    def to_dict(self) -> dict:
        return {k: asdict(v) for k, v in sorted(self.entries.items())}

    @classmethod
    def from_dict(cls, data: dict) -> ConstantLedger:
        entries = {}
        for name, e in data.items():
            if isinstance(e, (int, float)):
                entries[name] = Constant(float(e), "configured")
            else:
                entries[name] = Constant(
                    float(e["value"]), e.get("tag", "configured"), e.get("note", ""), e.get("inputs", {})
                )
        return cls(entries)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> ConstantLedger:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _check_dim(n: int) -> None:
    if int(n) != n or n < 2:
        raise UnsupportedDimensionError(f"dimension must be an integer >= 2, got {n}")


# -- Jorgensen-Thurston constant ------------------------------------------------------


def cone_factor(n: int) -> int:
    """Simplices contributed per cell face when coning: (n-1)!."""
    return math.factorial(n - 1)


def jt_terms(a0: float, n: int, regime: str | None = None, method: str = "auto") -> dict:
    """Intermediate terms of K(a0, n) = F_max * cone_factor / vol(B(R/2)).

    R = a0/2 in the three-dimensional regime (used for n <= 3) and R = a0
    for n >= 4; ``regime`` ("jt3" or "jtn") overrides the default.
    """
    _check_dim(n)
    if not a0 > 0:
        raise BoundsError(f"injectivity floor must be positive, got {a0}")
    if regime is None:
        regime = "jt3" if n <= 3 else "jtn"
    if regime not in ("jt3", "jtn"):
        raise RegimeError(f"jt constant is defined for regimes jt3/jtn, got {regime!r}")
    R = a0 / 2 if regime == "jt3" else a0
    small = ball_volume(n, R / 2, method=method)
    F_max = ball_volume(n, 2.5 * R, method=method) / small
    cone = cone_factor(n)
    return {"R": R, "F_max": F_max, "cone_factor": cone, "ball_R_half": small, "K": F_max * cone / small}


def jt_constant(a0: float, n: int, regime: str | None = None, method: str = "auto") -> float:
    return jt_terms(a0, n, regime, method)["K"]


# -- Gromov's inequality and its inversion ---------------------------------------------


def gromov_guard(Cp: float = 1.0) -> float:
    """Smallest s with log(C' s) >= 1; below it the forward map is not used."""
    return math.e / Cp


def gromov_forward(s: float, n: int, C: float = 1.0, Cp: float = 1.0) -> float:
    """f(s) = C s log^n(C' s), the simplicial-volume bound for systolic volume s."""
    if n < 1:
        raise UnsupportedDimensionError(f"exponent must be >= 1, got {n}")
    if s < gromov_guard(Cp) * (1 - 1e-15):
        raise RegimeError(f"s = {s:g} is below the monotone regime s >= e/C' = {gromov_guard(Cp):g}")
    return C * s * math.log(Cp * s) ** n


@dataclass(frozen=True)
class Inversion:
    value: float
    y: float
    n: int
    residual: float
    comparator: float
    iterations: int


def gromov_invert(y: float, n: int, C: float = 1.0, Cp: float = 1.0, slack: float = 1.0) -> Inversion:
    """Solve f(s) = y on the monotone branch by bisection (relative width 1e-13).

    Also returns the closed-form comparator y / (C log^n(C' y / C)), which is
    a rigorous lower bound for the solution: f(s) >= C s on the branch gives
    s <= y / C, hence log(C' s) <= log(C' y / C).
    """
    lo = gromov_guard(Cp)
    f_lo = gromov_forward(lo, n, C, Cp)
    if y < f_lo * (1 - 1e-15):
        raise RegimeError(f"y = {y:g} is below f(e/C') = {f_lo:g}; no bound on the monotone branch")
    hi = max(lo, y / C)
    it = 0
    while hi - lo > 1e-13 * hi and it < 400:
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if gromov_forward(mid, n, C, Cp) < y:
            lo = mid
        else:
            hi = mid
        it += 1
    s = 0.5 * (lo + hi)
    resid = abs(gromov_forward(s, n, C, Cp) - y) / y
    arg = max(Cp * y / C, math.e)
    comparator = y / (C * math.log(arg) ** n)
    if s < comparator * slack * (1 - 1e-12):
        raise BoundsError(f"bisection value {s:g} fell below the comparator {comparator:g}")
    return Inversion(value=s, y=y, n=n, residual=resid, comparator=comparator, iterations=it)


# -- systolic lower bounds from triangulation counts -----------------------------------


@dataclass(frozen=True)
class BoundConfig:
    s0: float | None = None
    delta0: float | None = None


@dataclass(frozen=True)
class SystolicBound:
    value: float | None
    t: int
    n: int
    K: float
    nu: float
    C: float
    Cp: float
    y: float
    end_to_end_constant: float | None
    illustrative: bool
    note: str = ""


def systolic_bound(
    n: int, t: int, config: BoundConfig, ledger: ConstantLedger | None = None, strict: bool = True
) -> SystolicBound:
    """Lower bound for SR(M) from a triangulation with t top simplices.

    Chain: t <= K(delta0) vol = K nu ||M|| <= K nu C SR log^n(C' SR), so
    SR >= f^{-1}(t / (K nu)).  Three-manifold use needs a configured
    injectivity floor delta0 (and the s0 it belongs to); n = 2 runs are
    flagged as illustrative.  With ``strict=False`` a value below the
    monotone regime is reported as None instead of raising.
    """
    _check_dim(n)
    ledger = ledger or ConstantLedger()
    if config.delta0 is None:
        raise ConfigurationError("injectivity floor delta0 is required; finiteness gives existence only")
    if n == 3 and config.s0 is None:
        raise ConfigurationError("the three-dimensional bound needs s0 alongside delta0")
    if t < 1:
        raise BoundsError("simplex count must be >= 1")
    K = ledger.record(f"K_{n}", jt_constant(config.delta0, n), "jt constant", a0=config.delta0, n=n)
    nu = ledger.value("nu", n)
    C = ledger.value("C", n)
    Cp = ledger.value("C_prime", n)
    y = t / (K * nu)
    try:
        inv = gromov_invert(y, n, C, Cp)
    except RegimeError as exc:
        if strict:
            raise
        return SystolicBound(None, t, n, K, nu, C, Cp, y, None, n == 2, str(exc))
    end = inv.value * math.log(t) ** n / t if t > 1 else None
    return SystolicBound(inv.value, t, n, K, nu, C, Cp, y, end, n == 2)


# -- Croke / comparison checks -----------------------------------------------------------


@dataclass(frozen=True)
class CrokeRow:
    r: float
    volume: float
    lower: float
    ratio: float
    holds: bool


def croke_check(n: int, inj: float, radii, alpha: float | None = None) -> list[CrokeRow]:
    """vol(B(r)) >= alpha_n r^n for r <= inj/2 (balls there are embedded model balls)."""
    _check_dim(n)
    if alpha is None:
        alpha = euclidean_ball_volume(n)
    rows = []
    for r in radii:
        if r <= 0:
            raise HypothesisViolation(f"radius must be positive, got {r}")
        if r > inj / 2 * (1 + 1e-12):
            raise HypothesisViolation(f"r = {r:g} exceeds inj/2 = {inj / 2:g}")
        v = ball_volume(n, r)
        rows.append(CrokeRow(r, v, alpha * r**n, v / r**n, v >= alpha * r**n))
    return rows


# -- embolic bound ---------------------------------------------------------------------------


def embolic_T_factor(n: int, alpha: float | None = None) -> float:
    """Per-cell simplex budget divided by vol/inj^n.

    T <= cone * vol(M) / vol(B(R/2)) <= cone * 2^n vol / (alpha R^n) with R = inj/5.
    """
    alpha = euclidean_ball_volume(n) if alpha is None else alpha
    return cone_factor(n) * 50.0**n / alpha


def embolic_beta(n: int, alpha: float | None = None) -> float:
    alpha = euclidean_ball_volume(n) if alpha is None else alpha
    return 2.0**n * embolic_T_factor(n, alpha) / alpha


@dataclass(frozen=True)
class EmbolicBound:
    sigma_upper: int
    beta: float
    T_factor: float
    alpha: float
    emb_lower: float
    emb_upper: float
    sandwich_holds: bool


def embolic_lower(sigma_upper: float, beta: float) -> float:
    return math.sqrt(sigma_upper / beta)


def embolic_bound(n: int, volume: float, inj: float, R: float, sigma_upper: int,
                  ledger: ConstantLedger | None = None) -> EmbolicBound:
    """Embolic lower bound sqrt(sigma / beta_n) against the hyperbolic metric's vol / inj^n."""
    _check_dim(n)
    if abs(R - inj / 5) > 1e-9 * inj:
        raise RegimeError(f"embolic bound needs R = inj/5 = {inj / 5:g}, got R = {R:g}")
    ledger = ledger or ConstantLedger()
    alpha = ledger.value("alpha", n)
    T = ledger.record(f"T_factor_{n}", embolic_T_factor(n, alpha), "cone * 50^n / alpha", n=n, alpha=alpha)
    beta = ledger.record(f"beta_{n}", 2.0**n * T / alpha, "2^n T_factor / alpha", n=n, alpha=alpha)
    lo = embolic_lower(sigma_upper, beta)
    hi = volume / inj**n
    return EmbolicBound(sigma_upper, beta, T, alpha, lo, hi, lo <= hi)


# -- reports ---------------------------------------------------------------------------------

CSV_COLUMNS = ("manifold", "n", "regime", "R", "h", "N", "N_bound", "t", "K", "vol", "sys", "inj", "bound_thm", "value")


@dataclass
class BoundReport:
    manifold: str
    n: int
    regime: str
    R: float
    h: float
    N: int
    N_bound: float
    N_exp_bound: float
    t: int
    t_is_estimate: bool
    K: float
    volume: float
    sys: float | None
    inj: float
    simplicial_volume_estimate: float
    jt_holds: bool
    packing_holds: bool
    systolic: dict | None = None
    embolic: dict | None = None
    croke: list = field(default_factory=list)
    constants: dict = field(default_factory=dict)
    placeholders: list = field(default_factory=list)
    flags: list = field(default_factory=list)
    version: str = ""

    def bound_rows(self) -> list[tuple[str, float | None]]:
        rows = [("packing", self.N_bound), ("jt", self.K * self.volume)]
        if self.systolic is not None:
            rows.append(("systolic", self.systolic.get("value")))
        if self.embolic is not None:
            rows.append(("embolic", self.embolic["emb_lower"]))
        return rows

    def csv_rows(self) -> list[dict]:
        base = {
            "manifold": self.manifold, "n": self.n, "regime": self.regime, "R": repr(self.R),
            "h": repr(self.h), "N": self.N, "N_bound": repr(self.N_bound), "t": self.t,
            "K": repr(self.K), "vol": repr(self.volume),
            "sys": "" if self.sys is None else repr(self.sys), "inj": repr(self.inj),
        }
        return [
            {**base, "bound_thm": name, "value": "" if v is None else repr(v)}
            for name, v in self.bound_rows()
        ]

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True, default=float) + "\n"


def write_csv(rows: list[dict], path=None, version: str = "") -> str:
    buf = io.StringIO()
    if version:
        buf.write(f"# hypnet {version}\n")
    w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def build_report(result, ledger: ConstantLedger | None = None, config: BoundConfig | None = None,
                 croke_radii=None) -> BoundReport:
    """Aggregate a pipeline run into a BoundReport, evaluating every applicable route."""
    from . import __version__

    ledger = ledger or ConstantLedger()
    M = result.manifold
    n = M.dimension
    regime = result.config.regime
    tri = result.triangulation
    decomp = result.decomposition
    nu = ledger.value("nu", n)
    terms = jt_terms(result.a0, n)
    ledger.record(f"K_{n}", terms["K"], "F_max * cone / vol(B(R/2))", a0=result.a0, R=terms["R"])
    ledger.record(f"F_max_{n}", terms["F_max"], "vol(B(5R/2)) / vol(B(R/2))", R=terms["R"])
    ledger.record(f"cone_factor_{n}", terms["cone_factor"], "(n-1)!", n=n)
    ledger.record(f"c1_{n}", exp_bound_constant(n), "0.9 * grid min of vol(B(R/2)) e^{-(n-1)R/2}, R in [0.1, 5]")
    flags = []
    if tri.is_estimate:
        flags.append("simplex count is an upper-bound estimate, not a verified complex")
    if n == 2:
        flags.append("illustrative: surface analogue of the three-dimensional chain")

    systolic = None
    if config is not None and config.delta0 is not None:
        sb = systolic_bound(n, tri.simplex_count, config, ledger, strict=False)
        systolic = asdict(sb)
        if sb.value is None:
            flags.append(f"systolic route below monotone regime: {sb.note}")
    elif n >= 4:
        sb = systolic_bound(n, tri.simplex_count, BoundConfig(delta0=result.a0), ledger, strict=False)
        systolic = asdict(sb)

    embolic = None
    if regime == "embolic":
        eb = embolic_bound(n, M.volume, result.inj, result.R, tri.simplex_count, ledger)
        embolic = asdict(eb)

    croke = []
    if croke_radii is None:
        croke_radii = [result.inj / 2 * k / 4 for k in range(1, 5)]
    alpha = ledger.value("alpha", n)
    croke = [asdict(r) for r in croke_check(n, result.inj, croke_radii, alpha)]

    return BoundReport(
        manifold=M.name,
        n=n,
        regime=regime,
        R=result.R,
        h=result.h,
        N=result.counts.N_actual,
        N_bound=result.counts.N_bound,
        N_exp_bound=result.counts.N_exp_bound,
        t=tri.simplex_count,
        t_is_estimate=tri.is_estimate,
        K=terms["K"],
        volume=M.volume,
        sys=result.sys,
        inj=result.inj,
        simplicial_volume_estimate=M.volume / nu,
        jt_holds=tri.simplex_count <= terms["K"] * M.volume,
        packing_holds=decomp.packing_holds,
        systolic=systolic,
        embolic=embolic,
        croke=croke,
        constants=ledger.to_dict(),
        placeholders=ledger.placeholders(),
        flags=flags,
        version=__version__,
    )
