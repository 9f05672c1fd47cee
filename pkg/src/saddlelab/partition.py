"""Strip decompositions, cap families with multiplicity, ragged strips.

Also hosts an executable form of the covering lemma for families of caps
that contain no strongly separated pair.

Conventions
-----------
All rectangles are ``(x0, y0, x1, y1)`` rows. Membership is half-open,
``[x0, x1) x [y0, y1)``, except that the right and top edges of the unit
square are closed, so every point of the square lies in exactly one strip of
each kind.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import Cap, Surface, separation_threshold, t_form

LOGGER = logging.getLogger(__name__)

KINDS = ("long_horizontal", "long_vertical", "short_vertical")
_EPS = 1e-12


class PreconditionError(ValueError):
    """The input violates a stated precondition (e.g. contains a separated pair)."""


class CounterexampleError(RuntimeError):
    """A family for which no cover within the stated bounds was found."""

    def __init__(self, msg, report=None):
        super().__init__(msg)
        self.report = report


def _count(v: float) -> int:
    # ceil that forgives rounding, so 16**0.25 gives 2 and not 3
    return int(np.ceil(v - 1e-9))


def gamma_scale(gamma: float, K: float) -> float:
    """The case parameter ``|gamma| * K**0.5``."""
    return abs(gamma) * np.sqrt(K)


def vertical_allowed(gamma: float, K: float, strict: bool = True) -> bool:
    """Whether vertical strips are in play.

    ``strict=True`` is the strip rule ``|gamma| K^(1/2) < 1``; ``strict=False``
    is the ragged/rescaling rule ``<= 1``. A relative slack of 1e-12 absorbs
    rounding when ``gamma`` is given as ``K**-0.5``.
    """
    s = gamma_scale(gamma, K)
    if strict:
        return s < 1.0 - _EPS
    return s <= 1.0 + _EPS


@dataclass(frozen=True)
class StripSet:
    """One kind of strip decomposition of the unit square."""

    kind: str
    rects: np.ndarray
    K: float

    def __len__(self):
        return len(self.rects)

    @property
    def areas(self) -> np.ndarray:
        r = self.rects
        return (r[:, 2] - r[:, 0]) * (r[:, 3] - r[:, 1])

    def index_of(self, pts) -> np.ndarray:
        """Index of the strip holding each point, -1 outside the square."""
        return _locate(self.rects, pts)

    def masks(self, x, y):
        """Boolean membership grids for points ``(x[i], y[j])``; shape ``(n, len(x), len(y))``."""
        X, Y = np.meshgrid(np.asarray(x, float), np.asarray(y, float), indexing="ij")
        idx = self.index_of(np.stack([X, Y], axis=-1))
        return np.stack([idx == k for k in range(len(self))])


def _edges(n: int, width: float) -> np.ndarray:
    e = np.minimum(np.arange(n + 1) * width, 1.0)
    e[-1] = 1.0
    return e


def _half_open(v, lo, hi):
    # [lo, hi), closing the far edge of the unit square
    return (v >= lo) & ((v < hi) | ((hi >= 1.0) & (v <= 1.0)))


def _locate(rects: np.ndarray, pts) -> np.ndarray:
    pts = np.asarray(pts, dtype=float)
    x, y = pts[..., 0], pts[..., 1]
    out = np.full(x.shape, -1, dtype=int)
    # reversed so the lowest index wins if rectangles ever overlap
    for k in range(len(rects) - 1, -1, -1):
        x0, y0, x1, y1 = rects[k]
        hit = _half_open(x, x0, x1) & _half_open(y, y0, y1)
        out[hit] = k
    return out


def make_strips(K: float, gamma: float) -> dict:
    """Build the strip decompositions at scale `K`.

    Parameters
    ----------
    K : float
        Decomposition scale, ``K >= 1``.
    gamma : float
        Perturbation parameter.

    Returns
    -------
    dict of str to StripSet
        Always ``long_horizontal``; ``long_vertical`` and ``short_vertical``
        only when ``|gamma| K^(1/2) < 1``.

    Examples
    --------
    >>> {k: len(v) for k, v in make_strips(16, 0.0).items()}
    {'long_horizontal': 2, 'long_vertical': 4, 'short_vertical': 8}
    """
    if not K >= 1:
        raise ValueError(f"K must be at least 1, got {K}")
    nh = _count(K**0.25)
    ye = _edges(nh, K**-0.25)
    out = {
        "long_horizontal": StripSet(
            "long_horizontal",
            np.array([[0.0, ye[i], 1.0, ye[i + 1]] for i in range(nh)]),
            K,
        )
    }
    if vertical_allowed(gamma, K, strict=True):
        nv = _count(K**0.5)
        xe = _edges(nv, K**-0.5)
        out["long_vertical"] = StripSet(
            "long_vertical", np.array([[xe[j], 0.0, xe[j + 1], 1.0] for j in range(nv)]), K
        )
        out["short_vertical"] = StripSet(
            "short_vertical",
            np.array([[xe[j], ye[i], xe[j + 1], ye[i + 1]] for i in range(nh) for j in range(nv)]),
            K,
        )
    return out


@dataclass(frozen=True)
class CapFamily:
    """Square caps on the ``1/K`` grid, possibly overlapping.

    Attributes
    ----------
    centers : (n, 2) ndarray
    sides : (n,) ndarray
        Untruncated side lengths.
    bounds : (n, 4) ndarray
        Rectangles after truncation to the unit square.
    K, mu : float
    """

    centers: np.ndarray
    sides: np.ndarray
    bounds: np.ndarray
    K: float
    mu: float

    def __len__(self):
        return len(self.centers)

    def cap(self, i: int) -> Cap:
        return Cap(tuple(self.centers[i]), float(self.sides[i]), tuple(self.bounds[i]))

    @property
    def caps(self) -> list:
        return [self.cap(i) for i in range(len(self))]

    def multiplicity(self, pts) -> np.ndarray:
        """Number of caps whose open interior contains each point."""
        pts = np.asarray(pts, dtype=float)
        flat = pts.reshape(-1, 2)
        b = self.bounds
        cnt = np.zeros(len(flat), dtype=int)
        for start in range(0, len(flat), 4096):
            p = flat[start:start + 4096]
            inside = ((p[:, None, 0] > b[None, :, 0]) & (p[:, None, 0] < b[None, :, 2])
                      & (p[:, None, 1] > b[None, :, 1]) & (p[:, None, 1] < b[None, :, 3]))
            cnt[start:start + 4096] = inside.sum(axis=1)
        return cnt.reshape(pts.shape[:-1])


def make_caps(K: float, mu: float = 1.0) -> CapFamily:
    """Caps with centers ``((i + 1/2)/K, (j + 1/2)/K)`` and side ``floor(mu**0.5)/K``.

    The side is the largest multiple of ``1/K`` not exceeding ``mu**0.5/K``,
    which keeps the overlap multiplicity at ``floor(mu**0.5)**2 <= mu``.

    Examples
    --------
    >>> fam = make_caps(16, 4)
    >>> len(fam), float(fam.sides[0] * 16)
    (256, 2.0)
    """
    if mu < 1:
        raise ValueError(f"mu must be at least 1, got {mu}")
    if K < 1:
        raise ValueError(f"K must be at least 1, got {K}")
    Ki = int(round(K))
    if abs(Ki - K) > 1e-9:
        raise ValueError(f"K must be an integer to place centers on the 1/K grid, got {K}")
    if mu > Ki * Ki:
        raise ValueError("mu may not exceed K**2")
    m = int(np.floor(np.sqrt(mu) + 1e-12))
    side = m / Ki
    c = (np.arange(Ki) + 0.5) / Ki
    X, Y = np.meshgrid(c, c, indexing="ij")
    centers = np.stack([X.ravel(), Y.ravel()], axis=1)
    h = 0.5 * side
    bounds = np.clip(np.concatenate([centers - h, centers + h], axis=1), 0.0, 1.0)
    return CapFamily(centers, np.full(len(centers), side), bounds, float(Ki), float(mu))


@dataclass(frozen=True)
class RaggedStrips:
    """Greedy band assignment of caps.

    Attributes
    ----------
    horizontal : (n_caps,) int ndarray
        Horizontal family index of every cap.
    vertical : (n_caps,) int ndarray or None
        Vertical family index, present only when ``|gamma| K^(1/2) <= 1``.
    h_width, v_width : float
        Nominal band widths ``mu^(1/2) K^(-1/4)`` and ``mu^(1/2) K^(-1/2)``.
    """

    caps: CapFamily
    gamma: float
    horizontal: np.ndarray
    vertical: np.ndarray | None
    h_width: float
    v_width: float
    n_h: int
    n_v: int

    @property
    def has_vertical(self) -> bool:
        return self.vertical is not None

    def families(self, kind: str = "horizontal") -> list:
        """Cap index arrays, one per family, in band order."""
        if kind == "horizontal":
            lab, n = self.horizontal, self.n_h
        elif kind == "vertical":
            if self.vertical is None:
                return []
            lab, n = self.vertical, self.n_v
        elif kind == "short":
            if self.vertical is None:
                return []
            lab = self.horizontal * self.n_v + self.vertical
            n = self.n_h * self.n_v
        else:
            raise ValueError(kind)
        order = np.argsort(lab, kind="stable")
        cuts = np.searchsorted(lab[order], np.arange(n + 1))
        return [order[cuts[i]:cuts[i + 1]] for i in range(n)]

    def kinds(self) -> list:
        """Kinds of ragged strips present."""
        return ["horizontal", "vertical", "short"] if self.has_vertical else ["horizontal"]

    def footprint_bounds(self, kind: str = "horizontal") -> np.ndarray:
        """Bounding rectangle of each footprint ``S_l``; NaN rows for empty families."""
        out = np.full((0, 4), np.nan)
        rows = []
        for idx in self.families(kind):
            if len(idx) == 0:
                rows.append([np.nan] * 4)
                continue
            b = self.caps.bounds[idx]
            rows.append([b[:, 0].min(), b[:, 1].min(), b[:, 2].max(), b[:, 3].max()])
        return np.array(rows) if rows else out

    def footprint_masks(self, x, y, kind: str = "horizontal"):
        """Membership grids for the footprints ``S_l`` (union of closed caps).

        Footprints of a ragged family may overlap along shared cap edges and,
        when ``mu > 1``, on overlapping caps. Each sample point is therefore
        assigned to the first footprint that contains it, which keeps
        ``sum_l f chi_{S_l} = f``.
        """
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        owner = self.sample_owner(x, y, kind)
        n = len(self.families(kind))
        return np.stack([owner == k for k in range(n)])

    def sample_owner(self, x, y, kind: str = "horizontal") -> np.ndarray:
        """Family index owning each grid sample ``(x[i], y[j])``.

        A sample is owned by the family of the cap whose center is nearest,
        ties to the lower cap index. That cap contains the sample, so the
        owner's footprint does too.
        """
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        lab = {"horizontal": self.horizontal, "vertical": self.vertical}.get(kind)
        if kind == "short":
            lab = self.horizontal * self.n_v + self.vertical
        if lab is None:
            raise ValueError(f"no {kind} ragged strips for this family")
        ci = nearest_cap(self.caps, x, y)
        return lab[ci]


def nearest_cap(caps: CapFamily, x, y) -> np.ndarray:
    """Index of the cap with nearest center for each grid sample ``(x[i], y[j])``.

    Uses the ``1/K`` lattice of centers, so the lookup is a floor.
    """
    K = int(caps.K)
    ix = np.clip(np.floor(np.asarray(x) * K).astype(int), 0, K - 1)
    iy = np.clip(np.floor(np.asarray(y) * K).astype(int), 0, K - 1)
    return ix[:, None] * K + iy[None, :]


def make_ragged(caps: CapFamily, gamma: float) -> RaggedStrips:
    """Assign caps to bands in order.

    Band ``l`` (1-based) takes every cap not yet assigned whose open interior
    meets ``[0, 1] x [(l-1) w, l w]`` with ``w = mu^(1/2) K^(-1/4)``. Vertical
    bands of width ``mu^(1/2) K^(-1/2)`` follow the same rule in ``x`` when
    ``|gamma| K^(1/2) <= 1``; short families are the pairwise intersections.
    """
    K, mu = caps.K, caps.mu
    hw = np.sqrt(mu) * K**-0.25
    vw = np.sqrt(mu) * K**-0.5
    n_h = _count(1.0 / hw)
    n_v = _count(1.0 / vw)

    def assign(lo, hi, width, n):
        # first band l with open (lo, hi) meeting [l w, (l+1) w] is floor(lo / w)
        lab = np.floor(np.maximum(lo, 0.0) / width + 1e-12).astype(int)
        lab = np.minimum(lab, n - 1)
        return lab

    horiz = assign(caps.bounds[:, 1], caps.bounds[:, 3], hw, n_h)
    vert = None
    if vertical_allowed(gamma, K, strict=False):
        vert = assign(caps.bounds[:, 0], caps.bounds[:, 2], vw, n_v)
    return RaggedStrips(caps, float(gamma), horiz, vert, hw, vw, n_h, n_v)


@dataclass
class CoverReport:
    case: str
    strip_count: int
    witness: list
    kind: str
    horizontal_count: int
    vertical_count: int | None
    claims: dict = field(default_factory=dict)

    def as_row(self) -> dict:
        return {"case": self.case, "kind": self.kind, "strip_count": self.strip_count,
                "horizontal_count": self.horizontal_count,
                "vertical_count": -1 if self.vertical_count is None else self.vertical_count}


def _pair_separated(gamma, centers, mu, K):
    c = np.asarray(centers, float)
    c1 = c[:, None, :]
    c2 = c[None, :, :]
    dy = np.abs(c2[..., 1] - c1[..., 1])
    t1 = np.abs(t_form(gamma, np.broadcast_to(c1, dy.shape + (2,)), c1, c2))
    t2 = np.abs(t_form(gamma, np.broadcast_to(c2, dy.shape + (2,)), c1, c2))
    sep = np.minimum(dy, np.maximum(t1, t2)) >= separation_threshold(mu, K)
    np.fill_diagonal(sep, False)
    return sep


def geometric_lemma_check(subfamily, surface, K: float, mu: float, ragged: RaggedStrips,
                          check_precondition: bool = True) -> CoverReport:
    """Certify a ragged-strip cover of a family with no strongly separated pair.

    Parameters
    ----------
    subfamily : sequence of int
        Indices into ``ragged.caps``.
    surface : Surface or float
    K, mu : float
    ragged : RaggedStrips
        Built from the same caps and gamma.

    Returns
    -------
    CoverReport
        Case ``"a"`` when ``|gamma| K^(1/2) > 1`` (at most 40 horizontal
        families), else case ``"b"`` (at most 3 horizontal or at most 40
        vertical). The ``claims`` field carries the intermediate distance
        bounds used to derive the cover.

    Raises
    ------
    PreconditionError
        ``K < 20`` or a strongly separated pair is present.
    CounterexampleError
        No cover within the bounds.
    """
    gamma = surface.gamma if isinstance(surface, Surface) else float(surface)
    if K < 20:
        raise PreconditionError(f"the covering bound assumes K >= 20, got {K}")
    idx = np.asarray(subfamily, dtype=int)
    if idx.size == 0:
        raise PreconditionError("empty family")
    centers = ragged.caps.centers[idx]
    if check_precondition and np.any(_pair_separated(gamma, centers, mu, K)):
        raise PreconditionError("family contains a strongly separated pair")

    hfam = np.unique(ragged.horizontal[idx])
    vfam = np.unique(ragged.vertical[idx]) if ragged.has_vertical else None
    claims = _distance_claims(gamma, centers, mu, K)
    case_a = not vertical_allowed(gamma, K, strict=False)
    if case_a:
        ok = len(hfam) <= 40
        rep = CoverReport("a", len(hfam), hfam.tolist(), "horizontal", len(hfam), None, claims)
    else:
        if vfam is None:
            raise PreconditionError("case b needs vertical ragged strips")
        if len(hfam) <= 3:
            rep = CoverReport("b", len(hfam), hfam.tolist(), "horizontal", len(hfam), len(vfam), claims)
        else:
            rep = CoverReport("b", len(vfam), vfam.tolist(), "vertical", len(hfam), len(vfam), claims)
        ok = len(hfam) <= 3 or len(vfam) <= 40
    if not ok:
        raise CounterexampleError(f"no cover within bounds: {rep.as_row()}", rep)
    return rep


def _distance_claims(gamma, centers, mu, K) -> dict:
    """Evaluate the two-case distance bounds for a family.

    Case 1: all pairwise ``|dy| <= 10 mu^(1/2)/K``. Otherwise, with the extreme
    pair in ``y`` labelled 1 and 2, every center satisfies
    ``|y_k - y_1| <= (20 mu^(1/2) / (|gamma| K))^(1/2)`` and
    ``|x_k - x_1| <= 15 mu^(1/2) K^(-1/2)``.

    The x-bound is only guaranteed when the y-spread exceeds twice the
    separation threshold; ``wide`` records whether that is the case.
    """
    thr = separation_threshold(mu, K)
    y = centers[:, 1]
    i1, i2 = int(np.argmin(y)), int(np.argmax(y))
    spread = y[i2] - y[i1]
    if spread <= thr:
        return {"case": 1, "y_spread": float(spread), "holds": True}
    dy = np.abs(y - y[i1])
    dx = np.abs(centers[:, 0] - centers[i1, 0])
    b1 = np.inf if gamma == 0 else np.sqrt(20.0 * np.sqrt(mu) / (abs(gamma) * K))
    b2 = 15.0 * np.sqrt(mu) / np.sqrt(K)
    d1 = bool(np.all(dy <= b1 * (1 + 1e-12)))
    d2 = bool(np.all(dx <= b2 * (1 + 1e-12)))
    # with y-spread at most twice the threshold a middle cap can be compatible
    # with both extremes through dy alone, and the x-bound need not hold
    wide = spread > 2.0 * thr
    return {"case": 2, "y_spread": float(spread), "dist1": d1, "dist2": d2, "wide": bool(wide),
            "max_dy": float(dy.max()), "max_dx": float(dx.max()), "holds": d1 and d2}


def random_family(ragged: RaggedStrips, mu: float, K: float, rng, max_size: int = 40,
                  pool_size: int = 1024) -> np.ndarray:
    """Grow a random family with no strongly separated pair.

    Starts from a random cap and adds caps from a random candidate pool that
    are compatible with everything chosen so far. Half of the pool is drawn
    near the seed cap so the families are not dominated by singletons.
    """
    gamma = ragged.gamma
    n = len(ragged.caps)
    C = ragged.caps.centers
    thr = separation_threshold(mu, K)
    first = int(rng.integers(n))
    near = np.flatnonzero(np.abs(C[:, 1] - C[first, 1]) <= 3 * thr)
    pool = np.concatenate([rng.choice(near, min(len(near), pool_size // 2), replace=False),
                           rng.choice(n, min(n, pool_size // 2), replace=False)])
    pool = np.unique(pool[pool != first])
    rng.shuffle(pool)
    ok = np.ones(len(pool), dtype=bool)
    chosen = [first]
    target = int(rng.integers(1, max_size + 1))
    P = C[pool]
    while len(chosen) < target:
        c = C[chosen[-1]]
        dy = np.abs(P[:, 1] - c[1])
        t1 = np.abs(t_form(gamma, c, c, P))
        t2 = np.abs(t_form(gamma, P, c, P))
        ok &= np.minimum(dy, np.maximum(t1, t2)) < thr
        cand = np.flatnonzero(ok)
        if cand.size == 0:
            break
        j = int(cand[rng.integers(cand.size)])
        chosen.append(int(pool[j]))
        ok[j] = False
    return np.array(chosen, dtype=int)


def fuzz_geometric_lemma(n_families: int, K: float, gamma: float, mu: float, seed=None,
                         max_size: int = 40) -> dict:
    """Run :func:`geometric_lemma_check` over random compatible families.

    Returns
    -------
    dict
        Trial count, number covered, worst strip counts per kind, and how
        often the intermediate distance bounds held.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    caps = make_caps(K, mu)
    ragged = make_ragged(caps, gamma)
    covered = 0
    worst_h = worst_v = 0
    claims_ok = claims_n = 0
    dist1_ok = wide_n = wide_ok = 0
    failures = []
    for _ in range(n_families):
        fam = random_family(ragged, mu, K, rng, max_size=max_size)
        try:
            # families are built pairwise-compatible, so skip the quadratic recheck
            rep = geometric_lemma_check(fam, gamma, K, mu, ragged, check_precondition=False)
        except CounterexampleError as exc:
            failures.append(exc.report.as_row())
            continue
        covered += 1
        worst_h = max(worst_h, rep.horizontal_count)
        if rep.vertical_count is not None:
            worst_v = max(worst_v, rep.vertical_count)
        if rep.claims.get("case") == 2:
            claims_n += 1
            claims_ok += rep.claims["holds"]
            dist1_ok += rep.claims["dist1"]
            if rep.claims["wide"]:
                wide_n += 1
                wide_ok += rep.claims["dist2"]
    return {"K": K, "gamma": gamma, "mu": mu, "trials": n_families, "covered": covered,
            "max_horizontal": worst_h, "max_vertical": worst_v,
            "case2_trials": claims_n, "case2_bounds_held": claims_ok, "case2_dist1_held": dist1_ok,
            "case2_wide_trials": wide_n, "case2_wide_dist2_held": wide_ok, "failures": failures}


def write_rects(path, rows) -> None:
    """Write ``(kind, x0, y0, x1, y1)`` rows, one rectangle per line."""
    with open(path, "w") as fh:
        fh.write("# kind, x0, y0, x1, y1\n")
        for kind, x0, y0, x1, y1 in rows:
            fh.write(f"{kind}, {x0!r}, {y0!r}, {x1!r}, {y1!r}\n")


def read_rects(path) -> list:
    rows = []
    for ln, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 5:
            raise ValueError(f"{path}:{ln}: expected 5 fields, got {len(parts)}")
        rows.append((parts[0], *map(float, parts[1:])))
    return rows


def strip_rows(strips: dict) -> list:
    return [(k, *map(float, r)) for k, s in strips.items() for r in s.rects]


def cap_rows(caps: CapFamily) -> list:
    return [("cap", *map(float, b)) for b in caps.bounds]
