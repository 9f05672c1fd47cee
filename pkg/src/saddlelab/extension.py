"""Evaluation of the extension operator on grids over the cube ``B_R``.

.. math:: E f(\\xi) = \\int_\\Sigma f(x, y)\\, e^{i(\\xi_1 x + \\xi_2 y + \\xi_3 \\phi_\\gamma(x, y))}\\,dx\\,dy

`f` is sampled at cell midpoints ``((i + 1/2)/N, (j + 1/2)/N)`` of the unit
square with axis 0 running along ``x``. The frequency grid is cell-centred,
``xi_k = -R + (k + 1/2) h`` with ``h = 2R/M``, so it is symmetric under
``xi -> -xi``. For each ``xi_3`` the integrand ``f e^{i xi_3 phi}`` is
transformed along both axes. Two interchangeable transforms are offered:

``"fft"``
    chirp-z transform (Bluestein, FFT based) along each axis.
``"dense"``
    the same sums as two matrix products, which is faster on a single core
    for the sizes used here and lets strip-restricted pieces reuse one
    modulated slice.

Both compute exactly the midpoint sum, and :func:`direct_extension` is the
slow pointwise oracle for that sum.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import CZT

from .geometry import Surface
from .partition import _half_open, make_caps, make_ragged, make_strips

LOGGER = logging.getLogger(__name__)

__all__ = [
    "SampledFunction",
    "ScaleParams",
    "Field3",
    "BroadMask",
    "SamplingError",
    "sample_points",
    "xi_axis",
    "phase_bandwidth",
    "required_grid",
    "default_grid",
    "SliceEngine",
    "evaluate_extension",
    "direct_extension",
    "restrict",
    "lp_norm",
    "strip_pieces",
    "broad_mask",
    "classify_points",
    "knapp",
    "random_function",
    "freq_tile_audit",
    "stream_norms",
    "broad_norms",
]


class SamplingError(ValueError):
    """Grid too coarse for the sampling rule; carries the minimum sizes."""

    def __init__(self, msg, N_min=None, M_min=None):
        super().__init__(msg)
        self.N_min = N_min
        self.M_min = M_min


def sample_points(N: int) -> np.ndarray:
    return (np.arange(N) + 0.5) / N


def xi_axis(R: float, M: int) -> np.ndarray:
    h = 2.0 * R / M
    return -R + (np.arange(M) + 0.5) * h


@dataclass(frozen=True)
class SampledFunction:
    """Complex samples of `f` at the ``N x N`` cell midpoints of the unit square."""

    values: np.ndarray
    support_mask: np.ndarray | None = None

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2 or v.shape[0] != v.shape[1] or v.shape[0] < 2:
            raise ValueError(f"need an N x N grid with N >= 2, got shape {v.shape}")
        v = v.astype(np.complex128, copy=False)
        if not np.all(np.isfinite(v)):
            raise ValueError("samples must be finite")
        object.__setattr__(self, "values", v)

    @property
    def N(self) -> int:
        return self.values.shape[0]

    @property
    def x(self) -> np.ndarray:
        return sample_points(self.N)

    def norm2(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.values) ** 2)) / self.N)

    def norm_inf(self) -> float:
        return float(np.max(np.abs(self.values)))

    def norm1(self) -> float:
        return float(np.sum(np.abs(self.values)) / self.N**2)

    @classmethod
    def from_callable(cls, fn, N: int):
        x = sample_points(N)
        X, Y = np.meshgrid(x, x, indexing="ij")
        return cls(np.asarray(fn(X, Y), dtype=complex) * np.ones_like(X))

    def __add__(self, other):
        return SampledFunction(self.values + other.values)

    def scale(self, a):
        return SampledFunction(a * self.values)


@dataclass(frozen=True)
class ScaleParams:
    """Scale bundle ``R, K, epsilon, alpha, mu`` and derived exponents.

    ``delta = epsilon**2``, ``delta_deg = epsilon**4``, ``delta_trans =
    epsilon**6`` and the partition degree ``D = R**delta_deg``. At desk scale
    ``K`` is chosen freely rather than as ``exp(epsilon**-10)``;
    ``desk_override`` records that.
    """

    R: float = 64.0
    K: float = 16.0
    epsilon: float = 0.2
    alpha: float | None = None
    mu: float = 1.0

    def __post_init__(self):
        if self.R < 1:
            raise ValueError("R must be at least 1")
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must lie in (0, 1)")
        if self.mu < 1:
            raise ValueError("mu must be at least 1")
        if self.alpha is None:
            object.__setattr__(self, "alpha", float(self.K) ** (-self.epsilon))

    @property
    def delta(self) -> float:
        return self.epsilon**2

    @property
    def delta_deg(self) -> float:
        return self.epsilon**4

    @property
    def delta_trans(self) -> float:
        return self.epsilon**6

    @property
    def D(self) -> float:
        return self.R**self.delta_deg

    @property
    def desk_override(self) -> bool:
        # exp(eps^-10) overflows for every eps that is not tiny
        try:
            return not math.isclose(self.K, math.exp(self.epsilon**-10))
        except OverflowError:
            return True


@dataclass
class Field3:
    """Complex grid over ``B_R = [-R, R]^3``; axes are ``(xi_1, xi_2, xi_3)``."""

    values: np.ndarray
    R: float
    gamma: float = 0.0

    @property
    def M(self) -> int:
        return self.values.shape[0]

    @property
    def h(self) -> float:
        return 2.0 * self.R / self.M

    @property
    def axis(self) -> np.ndarray:
        return xi_axis(self.R, self.M)

    def point(self, idx) -> np.ndarray:
        a = self.axis
        return np.array([a[idx[0]], a[idx[1]], a[idx[2]]])


@dataclass
class BroadMask:
    """Broad points of a field; ``mask`` aligned with ``field.values``."""

    mask: np.ndarray
    alpha: float
    mode: str
    field: Field3
    strip_max: np.ndarray | None = None

    def broad_part(self) -> np.ndarray:
        return np.abs(self.field.values) * self.mask


def phase_bandwidth(gamma: float) -> float:
    """``sup |(x, y, phi(x, y))|`` over the unit square."""
    return math.sqrt(2.0 + (1.0 + gamma / 3.0) ** 2)


def required_grid(gamma: float, R: float) -> tuple:
    """Minimum ``(N, M)`` for the sampling rule.

    ``N >= 8R/pi`` keeps the phase below two samples per oscillation for
    ``|xi| <= R``, and ``h = 2R/M <= pi / sup|(x, y, phi)|`` samples ``E f``
    at its Nyquist rate.
    """
    N_min = int(math.ceil(8.0 * R / math.pi))
    m = 2.0 * R * phase_bandwidth(gamma) / math.pi
    M_min = 1 << max(0, int(math.ceil(math.log2(max(m, 1.0)) - 1e-12)))
    return N_min, M_min


def default_grid(R: float) -> tuple:
    """Default ``(N, M) = (4R, 2R)`` with ``M`` rounded to a power of two."""
    M = 1 << max(1, int(round(math.log2(2.0 * R))))
    return int(round(4 * R)), M


def _check_grid(gamma, R, N, M):
    N_min, M_min = required_grid(gamma, R)
    if M & (M - 1):
        raise SamplingError(f"M must be a power of two, got {M}", N_min, M_min)
    if N < N_min or M < M_min:
        raise SamplingError(
            f"grid too coarse for R={R}: need N >= {N_min} and M >= {M_min}, got N={N}, M={M}",
            N_min, M_min)


class SliceEngine:
    """Evaluate ``E f`` one ``xi_3`` slice at a time.

    Parameters
    ----------
    f : SampledFunction
    gamma, R : float
    M : int
        Frequency grid points per axis.
    method : {"fft", "dense"}
    dtype : numpy complex dtype
        ``complex64`` halves memory and time for the dense path.
    check : bool
        Enforce the sampling rule.
    """

    def __init__(self, f: SampledFunction, gamma: float, R: float, M: int, method: str = "fft",
                 dtype=np.complex128, check: bool = True):
        if method not in ("fft", "dense"):
            raise ValueError(f"unknown method {method!r}")
        self.gamma = Surface(gamma).gamma
        self.R = float(R)
        self.M = int(M)
        self.N = f.N
        if check:
            _check_grid(self.gamma, self.R, self.N, self.M)
        self.method = method
        self.dtype = np.dtype(dtype)
        self.f = f.values.astype(self.dtype)
        self.xi = xi_axis(self.R, self.M)
        self.h = 2.0 * self.R / self.M
        x = sample_points(self.N)
        self.phi = np.outer(x, x) + self.gamma * x[None, :] ** 3 / 3.0
        self._anchor = None
        self._step = None
        if method == "dense":
            self.A = np.exp(1j * np.outer(self.xi, x)).astype(self.dtype)
        else:
            self._czt = {}

    # -- transforms ---------------------------------------------------------
    def _czt_for(self, n: int, i0: int):
        key = (n, i0)
        if key not in self._czt:
            N, xi0, h = self.N, self.xi[0], self.h
            t = CZT(n, self.M, w=np.exp(1j * h / N), a=np.exp(-1j * xi0 / N))
            post = np.exp(1j * self.xi * (i0 + 0.5) / N)
            self._czt[key] = (t, post)
        return self._czt[key]

    def transform(self, G: np.ndarray, ix: slice = slice(None), iy: slice = slice(None)) -> np.ndarray:
        """``sum_ij G[i, j] e^{i(xi_1 x_i + xi_2 y_j)} / N^2`` for a block of samples."""
        i0 = ix.start or 0
        j0 = iy.start or 0
        if self.method == "dense":
            out = self.A[:, ix] @ G.astype(self.dtype, copy=False) @ self.A[:, iy].T
        else:
            tx, px = self._czt_for(G.shape[0], i0)
            ty, py = self._czt_for(G.shape[1], j0)
            out = tx(G, axis=0) * px[:, None]
            out = ty(out, axis=1) * py[None, :]
        return out / self.N**2

    # -- modulation ---------------------------------------------------------
    def modulation(self, k3: int) -> np.ndarray:
        """``e^{i xi_3 phi}`` for slice `k3`.

        Consecutive slices are stepped by one complex multiply and re-anchored
        with an exact exponential every 16 slices.
        """
        if self._anchor is not None and self._anchor[0] == k3 - 1 and (k3 % 16):
            mod = self._anchor[1] * self._step
        else:
            mod = np.exp(1j * self.xi[k3] * self.phi).astype(self.dtype)
            if self._step is None:
                self._step = np.exp(1j * self.h * self.phi).astype(self.dtype)
        self._anchor = (k3, mod)
        return mod

    def slice(self, k3: int, pieces=None, tiling=None):
        """Full slice and, optionally, restricted slices for `pieces`.

        Parameters
        ----------
        k3 : int
        pieces : list of (mask, ix, iy), optional
            Boolean mask over the sample grid with the bounding slices of its
            support, as produced by :func:`strip_pieces`.

        Returns
        -------
        full : (M, M) ndarray
        parts : list of (M, M) ndarray
            Empty when `pieces` is None.
        """
        G = self.f * self.modulation(k3)
        parts = []
        if pieces:
            for mask, ix, iy in pieces:
                blk = G[ix, iy]
                if not mask[ix, iy].all():
                    blk = blk * mask[ix, iy]
                parts.append(self.transform(blk, ix, iy))
        if tiling is not None:
            # the listed pieces partition the support of f, so their sum is E f
            full = parts[tiling[0]].copy()
            for i in tiling[1:]:
                full += parts[i]
            return full, parts
        return self.transform(G), parts

    def iter_slices(self, pieces=None):
        for k3 in range(self.M):
            yield k3, *self.slice(k3, pieces)


def evaluate_extension(f: SampledFunction, gamma: float, R: float, M: int | None = None,
                       method: str = "fft", dtype=np.complex128, check: bool = True) -> Field3:
    """Midpoint-rule ``E f`` on the ``M^3`` grid over ``B_R``.

    Raises
    ------
    SamplingError
        When ``N`` or ``M`` is below :func:`required_grid`.

    Examples
    --------
    >>> f = SampledFunction(np.ones((64, 64)))
    >>> F = evaluate_extension(f, 0.0, 8.0, 16)
    >>> abs(direct_extension(f, 0.0, np.zeros((1, 3)))[0] - 1.0) < 1e-12
    True
    """
    M = default_grid(R)[1] if M is None else int(M)
    eng = SliceEngine(f, gamma, R, M, method=method, dtype=dtype, check=check)
    out = np.empty((M, M, M), dtype=eng.dtype)
    for k3 in range(M):
        out[:, :, k3] = eng.slice(k3)[0]
    return Field3(out, float(R), eng.gamma)


def direct_extension(f: SampledFunction, gamma: float, xis) -> np.ndarray:
    """Pointwise midpoint sum at arbitrary frequencies; the quadrature oracle."""
    xis = np.atleast_2d(np.asarray(xis, dtype=float))
    x = sample_points(f.N)
    X, Y = np.meshgrid(x, x, indexing="ij")
    P = X * Y + gamma * Y**3 / 3.0
    v = f.values.ravel()
    X, Y, P = X.ravel(), Y.ravel(), P.ravel()
    out = np.empty(len(xis), dtype=complex)
    for i, (a, b, c) in enumerate(xis):
        out[i] = np.dot(v, np.exp(1j * (a * X + b * Y + c * P)))
    return out / f.N**2


def restrict(f: SampledFunction, region) -> SampledFunction:
    """``f`` times the indicator of `region` on the sample grid.

    `region` may be a boolean ``N x N`` mask, a Cap, or a rectangle
    ``(x0, y0, x1, y1)`` (half-open, closed at the far edges of the square).
    """
    if isinstance(region, np.ndarray) and region.dtype == bool:
        mask = region
    else:
        b = region.bounds if hasattr(region, "bounds") else tuple(region)
        x = sample_points(f.N)
        mx = _half_open(x, b[0], b[2])
        my = _half_open(x, b[1], b[3])
        mask = mx[:, None] & my[None, :]
    return SampledFunction(np.where(mask, f.values, 0.0))


def lp_norm(field, p: float, region_mask=None, h: float | None = None) -> float:
    """Riemann sum ``(sum |v|^p h^3)^(1/p)`` over the masked points.

    Parameters
    ----------
    field : Field3 or ndarray
        A bare array needs `h`.
    p : float
        In ``[1, inf]``.
    """
    if isinstance(field, Field3):
        v, h = field.values, field.h
    else:
        v = np.asarray(field)
        if h is None:
            raise ValueError("grid spacing h is required for bare arrays")
    if not p >= 1:
        raise ValueError(f"p must be at least 1, got {p}")
    a = np.abs(v)
    if region_mask is not None:
        a = a[region_mask]
    if a.size == 0:
        return 0.0
    if np.isinf(p):
        return float(a.max())
    return float((np.sum(a.astype(np.float64) ** p) * h**3) ** (1.0 / p))


# -- strip pieces -------------------------------------------------------------

def _bbox(mask):
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if rows.size == 0:
        return slice(0, 0), slice(0, 0)
    return slice(rows[0], rows[-1] + 1), slice(cols[0], cols[-1] + 1)


def strip_pieces(N: int, gamma: float, K: float, mode: str = "plain", mu: float = 1.0,
                 f_mask=None) -> dict:
    """Sample-grid masks for every strip (or ragged strip) kind.

    Returns
    -------
    dict of str to list of (mask, ix, iy)
        Keys among ``long_horizontal, long_vertical, short_vertical``. Empty
        pieces (no support of `f_mask`) are kept so indices match the strip
        family, but carry empty slices.
    """
    x = sample_points(N)
    out = {}
    if mode == "plain":
        for kind, s in make_strips(K, gamma).items():
            out[kind] = list(s.masks(x, x))
    elif mode == "ragged":
        rg = make_ragged(make_caps(K, mu), gamma)
        names = {"horizontal": "long_horizontal", "vertical": "long_vertical", "short": "short_vertical"}
        for kind in rg.kinds():
            owner = rg.sample_owner(x, x, kind)
            n = len(rg.families(kind))
            out[names[kind]] = [owner == k for k in range(n)]
    else:
        raise ValueError(f"unknown mode {mode!r}")
    res = {}
    for kind, masks in out.items():
        lst = []
        for m in masks:
            if f_mask is not None:
                m = m & f_mask
            ix, iy = _bbox(m)
            lst.append((m, ix, iy))
        res[kind] = lst
    return res


def _nonempty(pieces):
    return [p for p in pieces if p[1].stop > p[1].start]


def _slice_strip_max(eng, k3, pieces_by_kind):
    """Full slice plus the per-kind max of ``|E f_L|`` for one ``xi_3``."""
    kinds = list(pieces_by_kind)
    flat, owner = [], []
    for kind in kinds:
        for p in _nonempty(pieces_by_kind[kind]):
            flat.append(p)
            owner.append(kind)
    full, parts = eng.slice(k3, flat, tiling=_tiling(owner))
    kmax = {k: np.zeros(full.shape) for k in kinds}
    for kind, v in zip(owner, parts):
        np.maximum(kmax[kind], np.abs(v), out=kmax[kind])
    return full, kmax


def _tiling(owner):
    # horizontal pieces come first and partition the sample grid
    idx = [i for i, k in enumerate(owner) if k == "long_horizontal"]
    return idx or None


def _alpha_list(alpha):
    return np.atleast_1d(np.asarray(alpha, dtype=float))


def broad_mask(f: SampledFunction, surface, params: ScaleParams, mode: str = "plain",
               M: int | None = None, method: str = "dense", dtype=np.complex128) -> BroadMask:
    """Mark the ``alpha``-broad grid points of ``E f``.

    A point is broad when ``max_L |E f_L| <= alpha |E f|`` over the strip
    family in force: long horizontal strips, plus long vertical and short
    strips when ``|gamma| K^(1/2)`` is below 1 (``mode="plain"``), or the
    ragged strips of the cap family with multiplicity ``mu``
    (``mode="ragged"``). Points where ``E f`` vanishes count as broad.
    """
    gamma = surface.gamma if isinstance(surface, Surface) else float(surface)
    R = params.R
    M = default_grid(R)[1] if M is None else int(M)
    eng = SliceEngine(f, gamma, R, M, method=method, dtype=dtype)
    pieces = strip_pieces(f.N, gamma, params.K, mode, params.mu)
    vals = np.empty((M, M, M), dtype=eng.dtype)
    smax = np.empty((M, M, M))
    for k3 in range(M):
        full, kmax = _slice_strip_max(eng, k3, pieces)
        vals[:, :, k3] = full
        smax[:, :, k3] = np.max(np.stack(list(kmax.values())), axis=0)
    mask = _broad_rule(smax, np.abs(vals), params.alpha)
    return BroadMask(mask, params.alpha, mode, Field3(vals, R, gamma), smax)


def _broad_rule(strip_max, absf, alpha):
    # E f = 0 is broad by convention; compare with a hair of slack for rounding
    return (strip_max <= alpha * absf * (1 + _SLACK)) | (absf == 0)


LABELS = {"A": 0, "B": 1, "C": 2, "D": 3}
# relative slack so that E f_L and E f computed by separate transforms tie when equal
_SLACK = 1e-9


def classify_points(f: SampledFunction, surface, params: ScaleParams, M: int | None = None,
                    method: str = "dense", dtype=np.complex128):
    """Label grid points A (broad), B, C, D by which strip kind dominates.

    B: some long horizontal strip has ``|E f_L| > alpha |E f|``. C: not B and
    some long vertical strip does. D: neither, and some short strip does.

    Returns
    -------
    labels : (M, M, M) int8 ndarray
        Codes from ``LABELS``.
    field : Field3
    """
    gamma = surface.gamma if isinstance(surface, Surface) else float(surface)
    R = params.R
    M = default_grid(R)[1] if M is None else int(M)
    eng = SliceEngine(f, gamma, R, M, method=method, dtype=dtype)
    pieces = strip_pieces(f.N, gamma, params.K, "plain")
    labels = np.zeros((M, M, M), dtype=np.int8)
    vals = np.empty((M, M, M), dtype=eng.dtype)
    a = params.alpha
    for k3 in range(M):
        full, kmax = _slice_strip_max(eng, k3, pieces)
        vals[:, :, k3] = full
        absf = np.abs(full)
        lab = np.zeros(full.shape, dtype=np.int8)
        dom_h = kmax["long_horizontal"] > a * absf * (1 + _SLACK)
        taken = dom_h.copy()
        lab[dom_h] = LABELS["B"]
        if "long_vertical" in kmax:
            dom_v = (kmax["long_vertical"] > a * absf * (1 + _SLACK)) & ~taken
            lab[dom_v] = LABELS["C"]
            taken |= dom_v
            dom_s = (kmax["short_vertical"] > a * absf * (1 + _SLACK)) & ~taken
            lab[dom_s] = LABELS["D"]
        labels[:, :, k3] = lab
    return labels, Field3(vals, R, gamma)


# -- streaming reductions for large grids ----------------------------------

def stream_norms(f: SampledFunction, gamma: float, R: float, ps, M: int | None = None,
                 method: str = "dense", dtype=np.complex64) -> dict:
    """``||E f||_{L^p(B_R)}`` for several `p` without storing the field."""
    M = default_grid(R)[1] if M is None else int(M)
    eng = SliceEngine(f, gamma, R, M, method=method, dtype=dtype)
    ps = list(ps)
    acc = {p: 0.0 for p in ps}
    for k3 in range(M):
        a = np.abs(eng.slice(k3)[0]).astype(np.float64)
        for p in ps:
            acc[p] = max(acc[p], a.max()) if np.isinf(p) else acc[p] + float(np.sum(a**p))
    h3 = eng.h**3
    return {p: (v if np.isinf(p) else (v * h3) ** (1.0 / p)) for p, v in acc.items()}


def broad_norms(f: SampledFunction, gamma: float, params: ScaleParams, ps, alphas=None,
                M: int | None = None, mode: str = "plain", method: str = "dense",
                dtype=np.complex64) -> dict:
    """Streaming ``||Br_alpha E f||_p`` and ``||E f||_p`` plus region counts.

    Returns
    -------
    dict
        ``full[p]``, ``broad[(alpha, p)]``, ``counts[alpha]`` (A, B, C, D point
        counts) and ``lp_strips[p]``, the ``l^p`` aggregate
        ``(sum_L ||E f_L||_p^p)^(1/p)`` over long horizontal strips.
    """
    R = params.R
    M = default_grid(R)[1] if M is None else int(M)
    alphas = _alpha_list(params.alpha if alphas is None else alphas)
    eng = SliceEngine(f, gamma, R, M, method=method, dtype=dtype)
    pieces = strip_pieces(f.N, gamma, params.K, mode, params.mu)
    ps = list(ps)
    full = {p: 0.0 for p in ps}
    broad = {(a, p): 0.0 for a in alphas for p in ps}
    lpstrip = {p: 0.0 for p in ps}
    counts = {a: np.zeros(4, dtype=np.int64) for a in alphas}
    nh = len(_nonempty(pieces["long_horizontal"]))
    for k3 in range(M):
        kinds = list(pieces)
        flat, owner = [], []
        for kind in kinds:
            for p in _nonempty(pieces[kind]):
                flat.append(p)
                owner.append(kind)
        Gfull, parts = eng.slice(k3, flat, tiling=_tiling(owner))
        absf = np.abs(Gfull).astype(np.float64)
        kmax = {k: np.zeros(absf.shape) for k in kinds}
        for kind, v in zip(owner, parts):
            av = np.abs(v).astype(np.float64)
            np.maximum(kmax[kind], av, out=kmax[kind])
        for i, (kind, v) in enumerate(zip(owner[:nh], parts[:nh])):
            av = np.abs(v).astype(np.float64)
            for p in ps:
                lpstrip[p] += float(np.sum(av**p))
        allmax = np.max(np.stack(list(kmax.values())), axis=0)
        for p in ps:
            full[p] += float(np.sum(absf**p))
        for a in alphas:
            m = _broad_rule(allmax, absf, a)
            for p in ps:
                broad[(a, p)] += float(np.sum(absf[m] ** p))
            dom_h = kmax["long_horizontal"] > a * absf * (1 + _SLACK)
            taken = dom_h.copy()
            c = counts[a]
            c[1] += int(dom_h.sum())
            if "long_vertical" in kmax:
                dv = (kmax["long_vertical"] > a * absf * (1 + _SLACK)) & ~taken
                taken |= dv
                ds = (kmax["short_vertical"] > a * absf * (1 + _SLACK)) & ~taken
                taken |= ds
                c[2] += int(dv.sum())
                c[3] += int(ds.sum())
            c[0] += int((~taken).sum())
    h3 = eng.h**3

    def fin(v, p):
        return (v * h3) ** (1.0 / p)

    return {
        "full": {p: fin(v, p) for p, v in full.items()},
        "broad": {k: fin(v, k[1]) for k, v in broad.items()},
        "lp_strips": {p: fin(v, p) for p, v in lpstrip.items()},
        "counts": {a: c.tolist() for a, c in counts.items()},
        "M": M,
        "N": f.N,
    }


# -- test functions -------------------------------------------------------------

def knapp(R: float, center=(0.5, 0.5), N: int | None = None) -> SampledFunction:
    """Indicator of the square of side ``R^(-1/2)`` centred at `center`.

    Samples carry the fraction of their cell covered by the square, so that
    ``E f(0)`` equals the area ``1/R`` for every `N`; when the square edges
    fall on cell boundaries this is the plain indicator with
    ``||f||_2 = R^(-1/2)`` and ``||f||_inf = 1``.
    """
    N = default_grid(R)[0] if N is None else int(N)
    s = R**-0.5
    cx, cy = center
    if cx - s / 2 < -1e-12 or cy - s / 2 < -1e-12 or cx + s / 2 > 1 + 1e-12 or cy + s / 2 > 1 + 1e-12:
        raise ValueError("Knapp square must fit in the unit square")
    edges = np.arange(N + 1) / N

    def cover(c):
        lo, hi = c - s / 2, c + s / 2
        return np.clip(np.minimum(edges[1:], hi) - np.maximum(edges[:-1], lo), 0.0, None) * N

    return SampledFunction(np.outer(cover(cx), cover(cy)).astype(complex))


def random_function(N: int, seed=None, support=None) -> SampledFunction:
    """Complex Gaussian samples with the modulus clipped to 1.

    Parameters
    ----------
    N : int
    seed : int or Generator
    support : boolean (N, N) array, optional
        Zero outside.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    v = (rng.standard_normal((N, N)) + 1j * rng.standard_normal((N, N))) / np.sqrt(2.0)
    a = np.abs(v)
    v = np.where(a > 1.0, v / np.maximum(a, 1e-300), v)
    if support is not None:
        v = np.where(support, v, 0.0)
    return SampledFunction(v)


def bump(u):
    """``exp(1 - 1/(1 - u^2))`` on ``|u| < 1``, zero outside."""
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    m = np.abs(u) < 1
    out[m] = np.exp(1.0 - 1.0 / (1.0 - u[m] ** 2))
    return out


def lattice_window(t):
    """1-D partition of unity on the integer lattice built from :func:`bump`.

    ``sum_k lattice_window(t - k) = 1`` for every real ``t``.
    """
    t = np.asarray(t, dtype=float)
    num = bump(t)
    frac = t - np.floor(t)
    # only the two lattice translates nearest to t overlap the support
    den = bump(frac) + bump(frac - 1.0)
    return num / den


@dataclass
class TileAudit:
    R: float
    tiles: int
    pou_residual: float
    tile: tuple
    peak: float
    distances: np.ndarray
    decay: np.ndarray
    fitted_exponent: float
    ratio_at_4R: float
    rows: list = field(default_factory=list)


def freq_tile_audit(f: SampledFunction, gamma: float, R: float, n_dirs: int = 16,
                    n_heights: int = 9, distances=(1.0, 2.0, 3.0, 4.0, 6.0, 8.0, 12.0, 16.0),
                    tol: float = 1e-9) -> TileAudit:
    """Frequency tiling ``f_y = f * chi_y`` at scale `R` and decay of ``E f_y``.

    ``chi_y(eta) = chi(eta/R - y)`` with `chi` a tensor product of
    :func:`lattice_window`. With the sign convention used here ``E f_y`` lives
    near ``xi' = -R y`` for ``0 <= xi_3 <= R``; the audit measures
    ``max |E f_y|`` on circles ``|xi' + R y| = d R`` against the peak near the
    centre and fits a power law to the tail.

    Raises
    ------
    ValueError
        If ``sum_y f_y`` misses `f` by more than `tol` (relative).
    """
    N = f.N
    F = np.fft.fft2(f.values)
    eta = 2.0 * np.pi * np.fft.fftfreq(N, d=1.0 / N)
    u = eta / R
    ylo, yhi = int(np.floor(u.min())) - 1, int(np.ceil(u.max())) + 1
    ys = np.arange(ylo, yhi + 1)
    W = {y: lattice_window(u - y) for y in ys}
    total = np.zeros_like(F)
    best, best_e = None, -1.0
    count = 0
    for y1 in ys:
        wx = W[y1]
        if not wx.any():
            continue
        for y2 in ys:
            wy = W[y2]
            if not wy.any():
                continue
            Fy = F * np.outer(wx, wy)
            e = float(np.sum(np.abs(Fy) ** 2))
            if e == 0.0:
                continue
            count += 1
            total += Fy
            if e > best_e:
                best, best_e = (int(y1), int(y2)), e
    fy_sum = np.fft.ifft2(total)
    res = float(np.linalg.norm(fy_sum - f.values) / max(np.linalg.norm(f.values), 1e-300))
    if res > tol:
        raise ValueError(f"partition of unity residual {res:.3e} exceeds {tol:.1e}")
    fy = SampledFunction(np.fft.ifft2(F * np.outer(W[best[0]], W[best[1]])))
    c = -R * np.array(best, dtype=float)
    heights = np.linspace(0.0, R, n_heights)
    ang = 2 * np.pi * (np.arange(n_dirs) + 0.5) / n_dirs
    dirs = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    # peak: search a small patch around the centre over all heights
    offs = np.linspace(-R, R, 9)
    OX, OY = np.meshgrid(offs, offs, indexing="ij")
    pts = [np.array([c[0] + ox, c[1] + oy, h3]) for h3 in heights for ox, oy in zip(OX.ravel(), OY.ravel())]
    peak = float(np.max(np.abs(direct_extension(fy, gamma, np.array(pts)))))
    decay = []
    rows = []
    for d in distances:
        pts = np.array([[c[0] + d * R * e[0], c[1] + d * R * e[1], h3] for h3 in heights for e in dirs])
        m = float(np.max(np.abs(direct_extension(fy, gamma, pts))))
        decay.append(m)
        rows.append({"distance_over_R": d, "max_abs": m, "ratio_to_peak": m / peak})
    decay = np.array(decay)
    dist = np.asarray(distances, dtype=float)
    tail = dist >= 2.0
    sl, _ = np.polyfit(np.log(dist[tail]), np.log(np.maximum(decay[tail], 1e-300)), 1)
    at4 = float(np.interp(4.0, dist, decay) / peak)
    return TileAudit(float(R), count, res, best, peak, dist, decay, float(-sl), at4, rows)
