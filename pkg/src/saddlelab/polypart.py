"""Polynomial partitioning of ``B_R = [-R, R]^3`` at desk scale.

Polynomials are stored in the normalized coordinate ``u = xi / R`` so that
coefficients stay O(1); gradients are returned with respect to ``xi``.
The partitioning polynomial is a product of bisecting factors, each chosen
from the lowest-degree polynomial space that can halve every current piece
at once, so all factors are generically nonsingular.
"""
from __future__ import annotations

import csv
import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage, optimize
from scipy.spatial import cKDTree

LOGGER = logging.getLogger(__name__)

__all__ = [
    "Poly3",
    "CellDecomposition",
    "TubeClassification",
    "monomials",
    "veronese_dim",
    "bisection_degrees",
    "grid_points",
    "ham_sandwich_partition",
    "distance_estimate",
    "wall",
    "cells",
    "sign_codes",
    "tube_cell_incidence",
    "classify_tubes",
    "ball_cover",
    "write_poly",
    "read_poly",
    "smooth_weights",
]


def monomials(d: int) -> np.ndarray:
    """Exponent triples of total degree ``<= d``, graded order."""
    out = [e for t in range(d + 1) for e in itertools.product(range(t + 1), repeat=3) if sum(e) == t]
    return np.array(out, dtype=int).reshape(-1, 3)


def veronese_dim(d: int) -> int:
    return math.comb(d + 3, 3)


def bisection_degrees(D: int) -> list:
    """Minimal factor degrees for successive bisections whose sum stays ``<= D``.

    Step ``j`` must halve ``2^j`` pieces, which needs ``C(d+3, 3) > 2^j``.

    Examples
    --------
    >>> bisection_degrees(4)
    [1, 1, 2]
    """
    degs, total, j = [], 0, 0
    while True:
        d = 1
        while veronese_dim(d) <= 2**j:
            d += 1
        if total + d > D:
            return degs
        degs.append(d)
        total += d
        j += 1


@dataclass
class Poly3:
    """Product of factors ``sum_m c_m u^m`` with ``u = xi / R``."""

    factors: list  # of (exps (n, 3) int, coeffs (n,) float)
    R: float

    @property
    def degree(self) -> int:
        return int(sum(int(e.sum(axis=1).max()) if len(e) else 0 for e, _ in self.factors))

    def _u(self, xi):
        return np.asarray(xi, dtype=float) / self.R

    @staticmethod
    def _eval(exps, coeffs, u):
        v = np.zeros(u.shape[:-1])
        for e, c in zip(exps, coeffs):
            v = v + c * u[..., 0] ** e[0] * u[..., 1] ** e[1] * u[..., 2] ** e[2]
        return v

    @staticmethod
    def _grad(exps, coeffs, u):
        g = np.zeros(u.shape)
        for e, c in zip(exps, coeffs):
            for a in range(3):
                if e[a] == 0:
                    continue
                ee = e.copy()
                ee[a] -= 1
                g[..., a] += c * e[a] * u[..., 0] ** ee[0] * u[..., 1] ** ee[1] * u[..., 2] ** ee[2]
        return g

    def factor_values(self, xi) -> list:
        u = self._u(xi)
        return [self._eval(e, c, u) for e, c in self.factors]

    def factor_gradients(self, xi) -> list:
        u = self._u(xi)
        return [self._grad(e, c, u) / self.R for e, c in self.factors]

    def __call__(self, xi) -> np.ndarray:
        out = None
        for v in self.factor_values(xi):
            out = v if out is None else out * v
        return out

    def gradient(self, xi) -> np.ndarray:
        vals = self.factor_values(xi)
        grads = self.factor_gradients(xi)
        total = np.zeros(np.asarray(xi).shape)
        for i, g in enumerate(grads):
            other = np.ones(g.shape[:-1])
            for j, v in enumerate(vals):
                if j != i:
                    other = other * v
            total = total + other[..., None] * g
        return total

    def singular_points(self, xi, tol: float = 1e-8) -> int:
        """Points where some factor has ``|P_i|`` and ``|grad_u P_i|`` below ``tol * scale``."""
        u = self._u(xi)
        n = 0
        for e, c in self.factors:
            scale = float(np.abs(c).sum())
            v = np.abs(self._eval(e, c, u))
            g = np.linalg.norm(self._grad(e, c, u), axis=-1)
            n += int(np.sum((v < tol * scale) & (g < tol * scale)))
        return n

    @classmethod
    def from_terms(cls, terms: list, R: float):
        """Build from a list of factors given as ``{(i, j, k): coeff}`` dicts."""
        fs = []
        for t in terms:
            e = np.array(list(t.keys()), dtype=int).reshape(-1, 3)
            c = np.array(list(t.values()), dtype=float)
            fs.append((e, c))
        return cls(fs, float(R))


def write_poly(path, P: Poly3) -> None:
    """CSV rows ``factor, i, j, k, coeff`` (exponents of ``u = xi / R``)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["factor", "i", "j", "k", "coeff", "R"])
        for fi, (e, c) in enumerate(P.factors):
            for (a, b, d), v in zip(e, c):
                w.writerow([fi, int(a), int(b), int(d), repr(float(v)), repr(P.R)])


def read_poly(path) -> Poly3:
    terms: dict = {}
    R = None
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.DictReader(fh), start=2):
            try:
                fi = int(row["factor"])
                terms.setdefault(fi, {})[(int(row["i"]), int(row["j"]), int(row["k"]))] = float(row["coeff"])
                R = float(row["R"])
            except (KeyError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: bad polynomial row ({exc})") from None
    if R is None:
        raise ValueError(f"{path}: no polynomial rows")
    return Poly3.from_terms([terms[k] for k in sorted(terms)], R)


# -- grids -------------------------------------------------------------------------

def grid_points(R: float, M: int) -> np.ndarray:
    """Cell-centred ``M^3`` grid of ``[-R, R]^3``, shape ``(M, M, M, 3)``."""
    ax = -R + (np.arange(M) + 0.5) * (2.0 * R / M)
    return np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), axis=-1)


def smooth_weights(M: int, seed=None, sigma: float = 4.0) -> np.ndarray:
    """Positive smooth random weights: exp of a Gaussian-filtered normal field."""
    rng = np.random.default_rng(seed)
    g = ndimage.gaussian_filter(rng.standard_normal((M, M, M)), sigma, mode="wrap")
    g /= g.std()
    return np.exp(g)


# -- distance to the zero set and the wall ---------------------------------------

def distance_estimate(P: Poly3, xi, cap: float, n_scan: int = 16, n_bisect: int = 30) -> np.ndarray:
    """Upper estimate of ``dist(xi, Z(P))`` along gradient rays, ``inf`` beyond `cap`.

    For each factor the ray ``xi - sign(P_i) t grad P_i / |grad P_i|`` is
    scanned on ``[0, cap]`` (plus the first-order step ``|P_i| / |grad P_i|``);
    the first sign change is refined by bisection. Exact for planes and for
    spheres centred anywhere.
    """
    xi = np.asarray(xi, dtype=float)
    flat = xi.reshape(-1, 3)
    best = np.full(len(flat), np.inf)
    for e, c in P.factors:
        single = Poly3([(e, c)], P.R)
        v = single(flat)
        g = single.gradient(flat)
        gn = np.linalg.norm(g, axis=1)
        zero = v == 0
        best[zero] = 0.0
        ok = (~zero) & (gn > 0)
        d = np.zeros_like(flat)
        d[ok] = -np.sign(v[ok])[:, None] * g[ok] / gn[ok][:, None]
        fo = np.where(ok, np.abs(v) / np.where(gn > 0, gn, 1.0), np.inf)
        ts = np.linspace(0.0, cap, n_scan + 1)[1:]
        lo = np.zeros(len(flat))
        hi = np.full(len(flat), np.inf)
        # first-order step first: often brackets the root immediately
        cand = np.where(fo <= cap, fo, np.inf)
        for t in np.concatenate([[np.nan], ts]):
            tt = cand if np.isnan(t) else np.full(len(flat), t)
            todo = ok & np.isinf(hi) & np.isfinite(tt)
            if not todo.any():
                continue
            w = single(flat[todo] + tt[todo][:, None] * d[todo])
            flip = np.sign(w) != np.sign(v[todo])
            idx = np.flatnonzero(todo)[flip]
            hi[idx] = tt[idx]
        # the scan may have skipped past an earlier root: bisect from 0
        found = np.isfinite(hi)
        idx = np.flatnonzero(found)
        a, b = lo[idx], hi[idx]
        s0 = np.sign(v[idx])
        for _ in range(n_bisect):
            m = 0.5 * (a + b)
            w = single(flat[idx] + m[:, None] * d[idx])
            same = np.sign(w) == s0
            a = np.where(same, m, a)
            b = np.where(same, b, m)
        best[idx] = np.minimum(best[idx], b)
    return best.reshape(xi.shape[:-1])


def wall(P: Poly3, R: float, delta: float, grid) -> np.ndarray:
    """Mask of grid points within ``R^(1/2 + delta)`` of ``Z(P)``.

    `grid` is either ``M`` or an array of points with trailing axis 3.
    """
    pts = grid_points(R, int(grid)) if np.isscalar(grid) else np.asarray(grid, dtype=float)
    r = R ** (0.5 + delta)
    return distance_estimate(P, pts, cap=r * (1 + 1e-12)) <= r


# -- cells -------------------------------------------------------------------------

_SIX = ndimage.generate_binary_structure(3, 1)


def sign_codes(P: Poly3, pts) -> np.ndarray:
    """Sign pattern of the factors as an integer code (``P_i >= 0`` is bit 1)."""
    codes = np.zeros(np.asarray(pts).shape[:-1], dtype=np.int64)
    for v in P.factor_values(pts):
        codes = codes * 2 + (v >= 0)
    return codes


@dataclass
class CellDecomposition:
    """Cells ``O_i`` of the complement of ``Z(P)`` on the grid, and ``O_i' = O_i minus W``.

    ``full_labels`` numbers the ``O_i`` (6-connected components of constant
    factor signs); ``labels`` is the same numbering with the wall set to 0.
    ``components`` labels the 6-connected components of the grid minus the
    wall, which can split an ``O_i`` where the wall pinches it.
    """

    full_labels: np.ndarray
    wall: np.ndarray
    R: float
    delta: float
    pieces: np.ndarray | None = None   # sign-pattern code per grid point
    info: dict = field(default_factory=dict)

    @property
    def labels(self) -> np.ndarray:
        return np.where(self.wall, 0, self.full_labels)

    @property
    def components(self) -> np.ndarray:
        lab, _ = ndimage.label(~self.wall, structure=_SIX)
        return lab

    @property
    def M(self) -> int:
        return self.full_labels.shape[0]

    @property
    def h(self) -> float:
        return 2.0 * self.R / self.M

    @property
    def n_cells(self) -> int:
        return int(self.full_labels.max())

    def points(self) -> np.ndarray:
        return grid_points(self.R, self.M)

    def masses(self, weights, off_wall: bool = False) -> np.ndarray:
        """Masses of ``O_i cap B_R`` (or of ``O_i'`` with ``off_wall``), index ``i - 1``."""
        lab = self.labels if off_wall else self.full_labels
        return ndimage.sum_labels(np.asarray(weights, float), lab, index=np.arange(1, self.n_cells + 1))

    def piece_masses(self, weights) -> np.ndarray:
        if self.pieces is None:
            raise ValueError("no sign pieces recorded")
        n = int(self.pieces.max()) + 1
        return np.bincount(self.pieces.ravel(), weights=np.asarray(weights, float).ravel(), minlength=n)

    def consistent(self) -> bool:
        """Off-wall points carry a cell label and off-wall 6-neighbours share it."""
        L = self.labels
        if np.any(L[self.wall] != 0) or np.any(L[~self.wall] == 0):
            return False
        for ax in range(3):
            a = np.moveaxis(L, ax, 0)
            x, y = a[:-1], a[1:]
            both = (x > 0) & (y > 0)
            if np.any(x[both] != y[both]):
                return False
        return True


def cells(P: Poly3, grid, wall_mask) -> CellDecomposition:
    """Flood-fill the sign regions of `P` on the ``M^3`` grid of ``[-P.R, P.R]^3``.

    Parameters
    ----------
    P : Poly3
    grid : int
        Grid size ``M``.
    wall_mask : (M, M, M) bool
    """
    M = int(grid)
    wall_mask = np.asarray(wall_mask, dtype=bool)
    if wall_mask.shape != (M,) * 3:
        raise ValueError(f"wall mask shape {wall_mask.shape} does not match grid {grid}")
    codes = sign_codes(P, grid_points(P.R, M))
    full = np.zeros((M,) * 3, dtype=np.int32)
    nxt = 0
    for c in np.unique(codes):
        lab, n = ndimage.label(codes == c, structure=_SIX)
        full[lab > 0] = lab[lab > 0] + nxt
        nxt += n
    return CellDecomposition(full, wall_mask, P.R, float("nan"), pieces=codes)


# -- ham sandwich ------------------------------------------------------------------

def _features(u, exps):
    return np.stack([u[:, 0] ** a * u[:, 1] ** b * u[:, 2] ** c for a, b, c in exps], axis=1)


def _imbalance(sig_pos, w, codes, n):
    tot = np.bincount(codes, weights=w, minlength=n)
    pos = np.bincount(codes, weights=w * sig_pos, minlength=n)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(tot > 0, np.abs(pos / tot - 0.5), 0.0)


def _bisect_step(u, w, codes, n, d, rng, restarts, tol, quality=None):
    exps = monomials(d)
    Phi = _features(u, exps)
    Phi = Phi / np.maximum(np.sqrt(np.average(Phi**2, axis=0, weights=w)), 1e-300)
    tot = np.bincount(codes, weights=w, minlength=n)
    live = tot > 0
    W = w / tot[codes]

    def smooth_obj(c, tau):
        nc = np.linalg.norm(c)
        v = Phi @ (c / nc)
        t = np.tanh(v / tau)
        b = np.bincount(codes, weights=W * t, minlength=n)
        dt = (1 - t**2) / tau
        # d b_i / d c  through v = Phi c / |c|
        gv = 2 * b[codes] * W * dt
        g = Phi.T @ gv
        g = (g - (g @ (c / nc)) * (c / nc)) / nc
        return float(np.sum(b[live] ** 2)), g

    scale = np.sqrt(np.average(_features(u, exps) ** 2, axis=0, weights=w))

    def raw(c):
        # undo the feature normalization so that the factor acts on raw monomials
        cc = c / np.maximum(scale, 1e-300)
        return cc / np.abs(cc).max()

    best, best_key = None, None
    for _ in range(restarts):
        c = rng.standard_normal(len(exps))
        for tau in (0.3, 0.1, 0.03, 0.01, 0.003):
            res = optimize.minimize(smooth_obj, c, args=(tau,), jac=True, method="L-BFGS-B",
                                    options={"maxiter": 200})
            c = res.x / np.linalg.norm(res.x)
        err = float(_imbalance((Phi @ c) >= 0, w, codes, n)[live].max())
        q = quality(exps, raw(c)) if (quality is not None and err <= tol) else 0.0
        key = (err > tol, q if err <= tol else err)
        if best_key is None or key < best_key:
            best, best_key, best_err = c, key, err
        if err <= tol and q == 0.0:
            break
    return exps, raw(best), best_err


def ham_sandwich_partition(weights, D: int, R: float, delta: float, seed=0, restarts: int = 8,
                           tol: float = 0.02, first_direction=None,
                           attempts: int = 6):
    """Partitioning polynomial and its cells for a nonnegative weight grid.

    Parameters
    ----------
    weights : (M, M, M) array
        Nonnegative weights on the cell-centred grid of ``[-R, R]^3``.
    D : int
        Degree budget; see :func:`bisection_degrees` for the factor degrees.
    first_direction : 3-vector, optional
        Normal of the first (linear, exact weighted-median) bisector; random
        by default.
    tol : float
        Accepted per-piece imbalance ``|m_+ / m - 1/2|``.
    attempts : int
        Independent searches; the first whose nonempty cells all lie within
        a factor 8 of the mean cell mass is kept, otherwise the one with the
        smallest max/min cell mass ratio. Grid-scale slivers of the zero set
        can cut off tiny cells, and a different bisector avoids them.

    Returns
    -------
    (Poly3, CellDecomposition)
        ``dec.info`` holds per-step imbalances, ``best_effort``, the
        degree list and the cell mass ratios.
    """
    if D not in (2, 4, 8, 16):
        raise ValueError(f"D must be one of 2, 4, 8, 16, got {D}")
    w = np.asarray(weights, dtype=float)
    if w.ndim != 3 or len(set(w.shape)) != 1:
        raise ValueError("weights must be an M x M x M grid")
    if np.any(w < 0) or not np.isfinite(w).all():
        raise ValueError("weights must be finite and nonnegative")
    if w.sum() <= 0:
        raise ValueError("weights are all zero")
    rng = np.random.default_rng(seed)
    best = None
    for attempt in range(attempts):
        P, dec = _partition_once(w, D, R, delta, rng, restarts, tol, first_direction)
        m = dec.masses(w)
        m = m[m > 0]
        ratio = float(m.max() / m.min()) if len(m) else np.inf
        spread = float(max(m.max() / m.mean(), m.mean() / m.min())) if len(m) else np.inf
        dec.info.update({"cell_ratio": ratio, "mean_spread": spread, "attempt": attempt})
        key = (dec.info["best_effort"], ratio)
        if best is None or key < best[0]:
            best = (key, P, dec)
        if not dec.info["best_effort"] and spread <= 8:
            break
    return best[1], best[2]


def _partition_once(w, D, R, delta, rng, restarts, tol, first_direction):
    M = w.shape[0]
    pts = grid_points(R, M).reshape(-1, 3)
    wf = w.ravel()
    live = wf > 0
    u = pts[live] / R
    wl = wf[live]
    degs = bisection_degrees(D)
    codes = np.zeros(len(u), dtype=np.int64)
    full_codes = np.zeros(len(pts), dtype=np.int64)

    def _fragmentation(prev, e, c):
        # spread of the sign-component masses after adding factor (e, c); 0 if within 8x of the mean
        new = (prev * 2 + (Poly3._eval(e, c, pts / R) >= 0)).reshape(M, M, M)
        masses = []
        for v in np.unique(new):
            lab, k = ndimage.label(new == v, structure=_SIX)
            masses.extend(ndimage.sum_labels(w, lab, index=np.arange(1, k + 1)))
        m = np.array(masses)
        m = m[m > 0]
        spread = max(m.max() / m.mean(), m.mean() / m.min())
        return 0.0 if spread <= 8 else float(spread)

    factors, errs = [], []
    best_effort = bool(np.count_nonzero(live) < 8 * 2 ** len(degs))
    for j, d in enumerate(degs):
        n = 2**j
        if j == 0:
            nrm = rng.standard_normal(3) if first_direction is None else np.asarray(first_direction, float)
            nrm = nrm / np.linalg.norm(nrm)
            proj = u @ nrm
            order = np.argsort(proj, kind="stable")
            cw = np.cumsum(wl[order])
            k = int(np.searchsorted(cw, cw[-1] / 2))
            k = min(k, len(order) - 2)
            thr = 0.5 * (proj[order[k]] + proj[order[k + 1]])
            exps = monomials(1)
            coeffs = np.concatenate([[-thr], [nrm[np.flatnonzero(e)[0]] for e in exps[1:]]])
            err = float(_imbalance(proj >= thr, wl, codes, n)[0])
        else:
            exps, coeffs, err = _bisect_step(u, wl, codes, n, d, rng, restarts, tol,
                                             quality=lambda e, c: _fragmentation(full_codes, e, c))
        factors.append((exps, coeffs))
        errs.append(err)
        val = Poly3._eval(exps, coeffs, u)
        codes = codes * 2 + (val >= 0)
        full_codes = full_codes * 2 + (Poly3._eval(exps, coeffs, pts / R) >= 0)
        if err > tol:
            best_effort = True
            LOGGER.warning("bisection step %d left imbalance %.3g > %.3g", j, err, tol)
    P = Poly3(factors, float(R))
    wm = wall(P, R, delta, M)
    dec = cells(P, M, wm)
    dec.delta = float(delta)
    dec.info = {"degrees": degs, "imbalance": errs, "best_effort": best_effort,
                "singular_points": P.singular_points(pts)}
    return P, dec


# -- tubes against the partition -------------------------------------------------

def _tube_mask(tube, pts):
    return tube.contains(pts)


def tube_cell_incidence(tubes, dec: CellDecomposition, D: int | None = None):
    """``T_i`` per cell and the number of cells each tube meets.

    Returns
    -------
    incidence : dict
        Cell label to list of tube positions in `tubes`.
    counts : ndarray
        Cells met by each tube.
    grazing : list
        Tubes above ``D + 1`` cells whose surplus comes from cells met in at
        most two grid points (resolution caveat; only with `D`).
    """
    pts = dec.points().reshape(-1, 3)
    lab = dec.labels.ravel()
    inc: dict = {}
    counts = np.zeros(len(tubes), dtype=int)
    grazing = []
    for i, t in enumerate(tubes):
        m = _tube_mask(t, pts)
        ls = lab[m]
        ls = ls[ls > 0]
        u, cnt = np.unique(ls, return_counts=True)
        counts[i] = len(u)
        for c in u:
            inc.setdefault(int(c), []).append(i)
        if D is not None and len(u) > D + 1 and np.sum(cnt > 2) <= D + 1:
            grazing.append(i)
    if grazing:
        LOGGER.info("%d tubes exceed D+1 cells only through cells met in <= 2 grid points", len(grazing))
    return inc, counts, grazing


def ball_cover(R: float, delta: float) -> np.ndarray:
    """Centres of balls of radius ``R^(1-delta)`` covering ``[-R, R]^3`` (cubic lattice)."""
    rho = R ** (1.0 - delta)
    step = 2.0 * rho / math.sqrt(3.0)
    n = max(1, int(math.ceil(2.0 * R / step)))
    ax = -R + (np.arange(n) + 0.5) * (2.0 * R / n)
    return np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), axis=-1).reshape(-1, 3)


@dataclass
class TubeClassification:
    centers: np.ndarray
    radius: float
    threshold: float
    tang: list            # per ball: list of tube positions
    trans: list
    unclassified: list

    def tangential_thetas(self, tubes) -> set:
        return {tubes[i].theta for s in self.tang for i in s}

    def trans_multiplicity(self, n_tubes: int) -> np.ndarray:
        c = np.zeros(n_tubes, dtype=int)
        for s in self.trans:
            c[list(s)] += 1
        return c


def _perp_basis(nu):
    """Orthonormal 3x2 basis of the plane orthogonal to `nu`."""
    nu = np.asarray(nu, dtype=float)
    e = np.eye(3)[int(np.argmin(np.abs(nu)))]
    b1 = np.cross(nu, e)
    b1 /= np.linalg.norm(b1)
    return np.stack([b1, np.cross(nu, b1)], axis=1)


def classify_tubes(tubes, P: Poly3, R: float, delta: float, M: int = 64, n_samples: int = 20_000,
                   seed=0, wall_mask=None) -> TubeClassification:
    """Tangential/transversal dichotomy per ball ``B_j`` of radius ``R^(1-delta)``.

    A tube counts for ball ``j`` when it meets ``W cap B_j``. Zero-set samples
    are wall points moved by one projected root step onto the nearest factor
    and kept when that factor is nonsingular there; the angle between the
    tube and the tangent plane is ``asin |nu . n|``. Tangential iff every
    sample in ``2 B_j cap 10 T`` is within ``R^(-1/2 + 2 delta)``, transversal
    iff some sample exceeds it; tubes with no sample stay unclassified.
    """
    rng = np.random.default_rng(seed)
    pts = grid_points(R, M).reshape(-1, 3)
    wm = (wall(P, R, delta, M) if wall_mask is None else np.asarray(wall_mask)).ravel()
    W = pts[wm]
    # zero-set samples
    Z = W if len(W) <= n_samples else W[rng.choice(len(W), n_samples, replace=False)]
    vals = P.factor_values(Z)
    grads = P.factor_gradients(Z)
    steps = np.stack([np.abs(v) / np.maximum(np.linalg.norm(g, axis=1), 1e-300) for v, g in zip(vals, grads)])
    which = np.argmin(steps, axis=0)
    Zr = Z.copy()
    normals = np.zeros_like(Z)
    good = np.zeros(len(Z), dtype=bool)
    for fi, (v, g) in enumerate(zip(vals, grads)):
        sel = which == fi
        gn2 = np.sum(g[sel] ** 2, axis=1)
        Zr[sel] = Z[sel] - (v[sel] / np.maximum(gn2, 1e-300))[:, None] * g[sel]
        gz = Poly3([P.factors[fi]], R).gradient(Zr[sel])
        gzn = np.linalg.norm(gz, axis=1)
        normals[sel] = gz / np.maximum(gzn, 1e-300)[:, None]
        scale = float(np.abs(P.factors[fi][1]).sum()) / R
        good[sel] = gzn > 1e-8 * scale
    Zr, normals = Zr[good], normals[good]
    centers = ball_cover(R, delta)
    rho = R ** (1.0 - delta)
    thr = R ** (-0.5 + 2 * delta)
    tang = [set() for _ in centers]
    trans = [set() for _ in centers]
    uncl = [set() for _ in centers]
    by_dir: dict = {}
    for i, t in enumerate(tubes):
        by_dir.setdefault(t.direction, []).append(i)
    for direction, idx in by_dir.items():
        nu = np.asarray(direction)
        nu = nu / np.linalg.norm(nu)
        B = _perp_basis(nu)
        base = np.array([[tubes[i].base[0], tubes[i].base[1], 0.0] for i in idx]) @ B
        r = tubes[idx[0]].radius
        qW = W @ B
        qZ = Zr @ B
        steep = np.arcsin(np.clip(np.abs(normals @ nu), 0, 1)) > thr
        for j, c in enumerate(centers):
            inb = np.linalg.norm(W - c, axis=1) <= rho
            if not inb.any():
                continue
            meets = cKDTree(qW[inb]).query(base, distance_upper_bound=r * (1 + 1e-12))[0] <= r
            if not meets.any():
                continue
            in2 = np.linalg.norm(Zr - c, axis=1) <= 2 * rho
            nb = base[meets]
            any_d = cKDTree(qZ[in2]).query(nb)[0] if in2.any() else np.full(len(nb), np.inf)
            st = in2 & steep
            steep_d = cKDTree(qZ[st]).query(nb)[0] if st.any() else np.full(len(nb), np.inf)
            for pos, da, ds in zip(np.flatnonzero(meets), any_d, steep_d):
                ti = idx[pos]
                if da > 10 * r:
                    uncl[j].add(ti)
                elif ds <= 10 * r:
                    trans[j].add(ti)
                else:
                    tang[j].add(ti)
    n_uncl = sum(len(s) for s in uncl)
    if n_uncl:
        LOGGER.info("%d (tube, ball) pairs had no zero-set sample", n_uncl)
    return TubeClassification(centers, rho, thr, [sorted(s) for s in tang], [sorted(s) for s in trans],
                              [sorted(s) for s in uncl])
