"""Wave packets at scale ``R``: caps theta of side ``R^(-1/2)``, tubes, audits.

Construction, for one cap theta with centre omega:

* ``f_theta = f psi_theta`` with ``psi_theta`` a tensor product of
  :func:`~saddlelab.extension.lattice_window` translates, supported in
  ``2 theta`` and summing to one on the unit square;
* ``f_theta`` is placed in a periodic box of side ``4 R^(-1/2)`` around omega
  and split by frequency windows ``lattice_window(eta / R^(1/2) - k)``;
* each piece is cut off by a smooth ``chi`` equal to one on ``2 theta`` and
  vanishing outside ``3 theta``.

Window ``k`` makes ``E f_T`` live near the line through ``(-R^(1/2) k, 0)``
along the surface normal ``(grad phi(omega), -1)``; that line is the tube
axis. Since the windows sum to one and ``chi = 1`` on the support of
``f_theta``, the packets add up to ``f`` exactly.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .extension import SampledFunction, lattice_window, sample_points
from .geometry import _gamma_of, gradient, hessian, strongly_separated

LOGGER = logging.getLogger(__name__)

__all__ = [
    "ThetaCap",
    "Tube",
    "Packet",
    "PacketDecomposition",
    "PacketThresholds",
    "theta_direction",
    "make_theta_caps",
    "make_tubes",
    "tube_scan",
    "decompose",
    "verify_packets",
    "packet_extension",
    "bilinear_sup",
    "intersection_curve_probe",
    "CurveReport",
    "ChartError",
]


class ChartError(ValueError):
    """The traced curve left the unit square (or started outside it)."""


# -- caps and tubes -------------------------------------------------------------

def theta_direction(gamma, omega) -> np.ndarray:
    """Unit normal ``(grad phi(omega), -1) / |.|``; third component negative."""
    g = gradient(gamma, np.asarray(omega, dtype=float))
    v = np.concatenate([g, [-1.0]])
    return v / np.linalg.norm(v)


@dataclass(frozen=True)
class ThetaCap:
    center: tuple
    side: float
    index: tuple
    direction: np.ndarray = field(compare=False, repr=False)

    @property
    def bounds(self) -> tuple:
        h = self.side / 2
        return (self.center[0] - h, self.center[1] - h, self.center[0] + h, self.center[1] + h)


def _cap_count(R: float) -> int:
    return int(math.ceil(math.sqrt(R) - 1e-9))


def make_theta_caps(surface, R: float) -> list:
    """``ceil(R^(1/2))^2`` caps tiling the unit square, row-major in ``(i, j)``.

    Examples
    --------
    >>> len(make_theta_caps(0.0, 64))
    64
    """
    g = _gamma_of(surface)
    n = _cap_count(R)
    s = 1.0 / n
    caps = []
    for i in range(n):
        for j in range(n):
            c = ((i + 0.5) * s, (j + 0.5) * s)
            caps.append(ThetaCap(c, s, (i, j), theta_direction(g, c)))
    return caps


@dataclass(frozen=True)
class Tube:
    """Slab-limited cylinder around the line through `base` along `direction`.

    ``base`` lies in the plane ``xi_3 = 0``; membership asks
    ``dist(xi, axis) <= radius`` and ``|xi_3| <= R``, so the axial length is
    at least ``2R``.
    """

    base: tuple
    direction: tuple
    radius: float
    R: float
    theta: tuple
    lattice: tuple

    def distance(self, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        nu = np.asarray(self.direction)
        w = xi - np.array([self.base[0], self.base[1], 0.0])
        along = w @ nu
        return np.linalg.norm(w - along[..., None] * nu, axis=-1)

    def contains(self, xi, radius: float | None = None) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        r = self.radius if radius is None else radius
        return (self.distance(xi) <= r) & (np.abs(xi[..., 2]) <= self.R)

    def axis_point(self, xi3) -> np.ndarray:
        nu = np.asarray(self.direction)
        xi3 = np.asarray(xi3, dtype=float)
        t = xi3 / nu[2]
        return np.stack([self.base[0] + t * nu[0], self.base[1] + t * nu[1], xi3], axis=-1)


def _segment_square_gap(a0, a1, R, n=33):
    t = np.linspace(0.0, 1.0, n)
    pts = a0[..., None, :] + t[:, None] * (a1 - a0)[..., None, :]
    d = np.maximum(np.abs(pts) - R, 0.0)
    return np.min(np.linalg.norm(d, axis=-1), axis=-1)


def make_tubes(theta: ThetaCap, R: float, delta: float) -> list:
    """Tubes of direction ``nu(theta)`` and radius ``R^(1/2 + delta)`` meeting ``[-R, R]^3``.

    Base points run over the lattice ``R^(1/2) Z^2`` in the plane ``xi_3 = 0``.
    """
    nu = np.asarray(theta.direction)
    sp = math.sqrt(R)
    r = R ** (0.5 + delta)
    slope = nu[:2] / nu[2]
    # horizontal section of the cylinder is an ellipse with semi-axes r and r/|nu_3|
    rho = r / abs(nu[2])
    ext = R + rho + R * np.abs(slope)
    m1 = np.arange(int(np.floor(-ext[0] / sp)) - 1, int(np.ceil(ext[0] / sp)) + 2)
    m2 = np.arange(int(np.floor(-ext[1] / sp)) - 1, int(np.ceil(ext[1] / sp)) + 2)
    M1, M2 = np.meshgrid(m1, m2, indexing="ij")
    P = np.stack([M1.ravel(), M2.ravel()], axis=1) * sp
    a0 = P - R * slope
    a1 = P + R * slope
    keep = _segment_square_gap(a0, a1, R) <= rho
    d = tuple(float(v) for v in nu)
    out = []
    for (p1, p2), (k1, k2) in zip(P[keep], np.stack([M1.ravel(), M2.ravel()], axis=1)[keep]):
        out.append(Tube((float(p1), float(p2)), d, r, float(R), theta.index, (int(k1), int(k2))))
    return out


def tube_scan(theta: ThetaCap, R: float, delta: float, n: int = 10_000, seed=None) -> dict:
    """Core coverage and fat multiplicity over `n` uniform points of ``[-R, R]^3``.

    Works on the full base lattice, so it is independent of the clipping in
    :func:`make_tubes`; the returned ``C`` is ``max_count / R^(2 delta)``.
    """
    rng = np.random.default_rng(seed)
    xi = rng.uniform(-R, R, size=(n, 3))
    nu = np.asarray(theta.direction)
    sp = math.sqrt(R)
    r = R ** (0.5 + delta)
    q = xi[:, :2] - xi[:, 2:3] * (nu[:2] / nu[2])
    reach = int(np.ceil(r / abs(nu[2]) / sp)) + 1
    base = np.floor(q / sp).astype(int)
    core = np.zeros(n, dtype=bool)
    count = np.zeros(n, dtype=int)
    for d1 in range(-reach, reach + 2):
        for d2 in range(-reach, reach + 2):
            p = (base + np.array([d1, d2])) * sp
            w = np.concatenate([q - p, np.zeros((n, 1))], axis=1)
            dist = np.linalg.norm(w - (w @ nu)[:, None] * nu, axis=1)
            core |= dist <= sp
            count += dist <= r
    return {"R": R, "delta": delta, "points": n, "covered": float(core.mean()),
            "max_count": int(count.max()), "C": float(count.max() / R ** (2 * delta))}


# -- decomposition ---------------------------------------------------------------

def _smooth_step(t):
    """0 for ``t <= 0``, 1 for ``t >= 1``, smooth in between."""
    t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
    a = np.where(t > 0, np.exp(-1.0 / np.maximum(t, 1e-300)), 0.0)
    b = np.where(t < 1, np.exp(-1.0 / np.maximum(1.0 - t, 1e-300)), 0.0)
    return a / (a + b)


def _chi(u):
    """1 on ``|u| <= 1``, 0 on ``|u| >= 3/2`` (``u`` in units of the cap side)."""
    return _smooth_step((1.5 - np.abs(u)) / 0.5)


def _psi_1d(x, a, n):
    s = 1.0 / n
    t = x / s - a - 0.5
    v = lattice_window(t)
    # fold the translates that hang off the square back onto the edge caps
    if a == 0:
        v = v + lattice_window(t + 1.0)
    if a == n - 1:
        v = v + lattice_window(t - 1.0)
    return v


@dataclass
class Packet:
    theta: tuple
    k: tuple
    rows: slice
    cols: slice
    values: np.ndarray

    def full(self, N: int) -> SampledFunction:
        v = np.zeros((N, N), dtype=complex)
        v[self.rows, self.cols] = self.values
        return SampledFunction(v)


@dataclass
class PacketThresholds:
    off_tube: float | None = None       # default R^-5
    reconstruction: float = 1e-3
    orthogonality: float = 1e-6
    constant_e: float = 8.0
    distance_factors: tuple = (2.0, 2.5, 3.0)


class PacketDecomposition:
    """Lazy packet family ``{f_T}`` of a sampled `f` at scale `R`.

    Packets are produced on demand by :meth:`packet`; per-cap spectra are
    cached.
    """

    def __init__(self, f: SampledFunction, gamma: float, R: float, delta: float):
        self.f = f
        self.gamma = float(gamma)
        self.R = float(R)
        self.delta = float(delta)
        self.N = f.N
        self.n = _cap_count(R)
        if self.N % self.n:
            raise ValueError(f"N={self.N} is not a multiple of the cap count per side {self.n}")
        self.sn = self.N // self.n
        self.nb = 4 * self.sn
        self.caps = make_theta_caps(self.gamma, R)
        self._cap_at = {c.index: c for c in self.caps}
        x = sample_points(self.N)
        self._psi = [_psi_1d(x, a, self.n) for a in range(self.n)]
        eta = 2.0 * np.pi * np.fft.fftfreq(self.nb, d=1.0 / self.N)
        self.eta = eta
        self.windows = self._windows(eta / math.sqrt(self.R))
        self._spec = lru_cache(maxsize=16)(self._spectrum)
        self._axis = lru_cache(maxsize=64)(self._axis_basis)

    def box(self, a: int):
        """Start index of the periodic box along one axis (may be negative)."""
        return a * self.sn - 3 * self.sn // 2

    def window3(self, a: int) -> slice:
        """Samples of ``3 theta`` along one axis, clipped to the square."""
        return slice(max(a * self.sn - self.sn, 0), min((a + 2) * self.sn, self.N))

    @staticmethod
    def _windows(u):
        out = {}
        lo = np.floor(u).astype(int)
        for m, (uu, k0) in enumerate(zip(u, lo)):
            for k in (k0, k0 + 1):
                w = float(lattice_window(uu - k))
                if w > 0:
                    out.setdefault(int(k), []).append((m, w))
        return {k: (np.array([m for m, _ in v]), np.array([w for _, w in v])) for k, v in sorted(out.items())}

    def f_theta(self, idx) -> np.ndarray:
        """``f psi_theta`` on the periodic box (zero outside the square)."""
        a, b = idx
        nb, N = self.nb, self.N
        i0, j0 = self.box(a), self.box(b)
        out = np.zeros((nb, nb), dtype=complex)
        ri = np.arange(i0, i0 + nb)
        rj = np.arange(j0, j0 + nb)
        mi = (ri >= 0) & (ri < N)
        mj = (rj >= 0) & (rj < N)
        vals = self.f.values[np.ix_(ri[mi], rj[mj])]
        vals = vals * self._psi[a][ri[mi]][:, None] * self._psi[b][rj[mj]][None, :]
        out[np.ix_(mi, mj)] = vals
        return out

    def _spectrum(self, idx) -> np.ndarray:
        return np.fft.fft2(self.f_theta(idx))

    def _axis_basis(self, a: int) -> np.ndarray:
        """``chi(j) exp(2 pi i m j / nb) / nb`` for rows in ``3 theta``, all modes."""
        w = self.window3(a)
        j = np.arange(w.start, w.stop)
        x = (j + 0.5) / self.N
        c = (a + 0.5) / self.n
        chi = _chi((x - c) * self.n)
        jl = j - self.box(a)
        m = np.arange(self.nb)
        return chi[:, None] * np.exp(2j * np.pi * np.outer(jl, m) / self.nb) / self.nb

    def packet(self, idx, k) -> Packet:
        F = self._spec(tuple(idx))
        m1, w1 = self.windows[k[0]]
        m2, w2 = self.windows[k[1]]
        X = F[np.ix_(m1, m2)] * w1[:, None] * w2[None, :]
        A = self._axis(idx[0])[:, m1]
        B = self._axis(idx[1])[:, m2]
        vals = A @ X @ B.T
        return Packet(tuple(idx), tuple(k), self.window3(idx[0]), self.window3(idx[1]), vals)

    def window_keys(self) -> list:
        return list(self.windows.keys())

    def tube(self, idx, k) -> Tube:
        cap = self._cap_at[tuple(idx)]
        sp = math.sqrt(self.R)
        return Tube((-sp * k[0], -sp * k[1]), tuple(float(v) for v in cap.direction),
                    self.R ** (0.5 + self.delta), self.R, cap.index, (-k[0], -k[1]))

    def tubes(self, idx) -> list:
        """Tubes of cap `idx` that meet ``[-R, R]^3`` and carry a packet."""
        cap = self._cap_at[tuple(idx)]
        have = self.windows
        out = []
        for t in make_tubes(cap, self.R, self.delta):
            k = (-t.lattice[0], -t.lattice[1])
            if k[0] in have and k[1] in have:
                out.append(t)
        return out

    def energies(self, idx) -> dict:
        """``||f_T||_2^2`` for every window pair of cap `idx`."""
        F = self._spec(tuple(idx))
        keys = self.window_keys()
        G1 = {k: self._gram(idx[0], k) for k in keys}
        G2 = {k: self._gram(idx[1], k) for k in keys}
        out = {}
        for k1 in keys:
            m1, w1 = self.windows[k1]
            for k2 in keys:
                m2, w2 = self.windows[k2]
                X = F[np.ix_(m1, m2)]
                e = np.real(np.trace(X.conj().T @ G1[k1] @ X @ G2[k2].conj()))
                out[(k1, k2)] = float(e) / self.N**2
        return out

    def _gram(self, a, k):
        m, w = self.windows[k]
        P = self._axis(a)[:, m] * w[None, :]
        return P.conj().T @ P

    def _axis_q(self, a):
        """Sum over windows of the embedded per-window Gram matrices."""
        Q = np.zeros((self.nb, self.nb), dtype=complex)
        for k, (m, w) in self.windows.items():
            Q[np.ix_(m, m)] += self._gram(a, k)
        return Q

    def total_energy(self, idx, _q=None) -> float:
        """``sum_T ||f_T||_2^2`` over all packets of cap `idx`."""
        F = self._spec(tuple(idx))
        q = _q or {}
        Q1 = q[idx[0]] if idx[0] in q else self._axis_q(idx[0])
        Q2 = q[idx[1]] if idx[1] in q else self._axis_q(idx[1])
        return float(np.real(np.trace(F.conj().T @ Q1 @ F @ Q2.conj()))) / self.N**2

    def assemble(self, literal: bool = False) -> SampledFunction:
        """``sum_T f_T`` on the sample grid.

        ``literal=True`` adds every packet one by one (small ``R`` only); the
        default adds them grouped per cap, which is the same sum reordered.
        """
        out = np.zeros((self.N, self.N), dtype=complex)
        keys = self.window_keys()
        for cap in self.caps:
            a, b = cap.index
            ra, rb = self.window3(a), self.window3(b)
            if literal:
                for k1 in keys:
                    for k2 in keys:
                        out[ra, rb] += self.packet(cap.index, (k1, k2)).values
                continue
            F = self._spec(cap.index)
            wsum = np.zeros(self.nb)
            for m, w in self.windows.values():
                np.add.at(wsum, m, w)
            X = F * wsum[:, None] * wsum[None, :]
            out[ra, rb] += self._axis(a) @ X @ self._axis(b).T
        return SampledFunction(out)


def decompose(f: SampledFunction, surface, R: float, delta: float) -> PacketDecomposition:
    """Packet decomposition of `f` at scale `R`.

    Raises
    ------
    ValueError
        If ``N < 4R`` or `N` is not a multiple of ``ceil(R^(1/2))``.
    """
    if f.N < 4 * R:
        raise ValueError(f"need N >= 4R = {4 * R:g} samples per side, got {f.N}")
    return PacketDecomposition(f, _gamma_of(surface), R, delta)


def packet_extension(p: Packet, N: int, gamma: float, xis) -> np.ndarray:
    """Direct midpoint sum of ``E f_T`` at the given frequencies."""
    x = sample_points(N)
    X, Y = np.meshgrid(x[p.rows], x[p.cols], indexing="ij")
    P = (X * Y + gamma * Y**3 / 3.0).ravel()
    X, Y = X.ravel(), Y.ravel()
    v = p.values.ravel()
    xis = np.atleast_2d(np.asarray(xis, dtype=float))
    out = np.empty(len(xis), dtype=complex)
    for i, (a, b, c) in enumerate(xis):
        out[i] = np.dot(v, np.exp(1j * (a * X + b * Y + c * P)))
    return out / N**2


def _ring_points(tube: Tube, dist: float, heights, n_ang: int = 16):
    nu = np.asarray(tube.direction)
    e1 = np.cross(nu, [0.0, 0.0, 1.0])
    e1 /= np.linalg.norm(e1) if np.linalg.norm(e1) > 1e-12 else 1.0
    if np.linalg.norm(e1) < 0.5:
        e1 = np.array([1.0, 0.0, 0.0])
    e2 = np.cross(nu, e1)
    ang = 2 * np.pi * (np.arange(n_ang) + 0.5) / n_ang
    pts = []
    for h in heights:
        c = tube.axis_point(h)
        pts.append(c + dist * (np.cos(ang)[:, None] * e1 + np.sin(ang)[:, None] * e2))
    pts = np.concatenate(pts)
    return pts[np.all(np.abs(pts) <= tube.R, axis=1)]


def verify_packets(dec: PacketDecomposition, thresholds: PacketThresholds | None = None,
                   n_caps: int = 2, n_tubes: int = 3, n_support: int = 64, seed=0) -> list:
    """Audit rows ``{property, threshold, measured, passed}`` for (a)-(e).

    (a) support of sampled packets inside ``3 theta``; (b) max of
    ``|E f_T| / ||f||_2`` at distance ``>= 2 radius`` from the axis for the
    heaviest tubes of a few caps; (c) relative L2 gap of ``sum f_T`` to
    ``f``; (d) largest ``|<f_T1, f_T2>| / ||f||_{L2(3 theta)}^2`` over
    same-cap packets whose tubes are disjoint; (e) ``max_theta sum_T ||f_T||^2 /
    ||f||_{L2(3 theta)}^2``.
    """
    th = thresholds or PacketThresholds()
    off_thr = th.off_tube if th.off_tube is not None else dec.R**-5
    rng = np.random.default_rng(seed)
    N = dec.N
    fn = dec.f.norm2()
    rows = []
    keys = dec.window_keys()

    def local_norm2(idx):
        ra, rb = dec.window3(idx[0]), dec.window3(idx[1])
        return float(np.sum(np.abs(dec.f.values[ra, rb]) ** 2)) / N**2

    # (a)
    bad = 0
    x = sample_points(N)
    for _ in range(n_support):
        cap = dec.caps[rng.integers(len(dec.caps))]
        k = (keys[rng.integers(len(keys))], keys[rng.integers(len(keys))])
        full = dec.packet(cap.index, k).full(N).values
        x0, y0, x1, y1 = cap.bounds
        s = cap.side
        inside = ((x >= x0 - s) & (x <= x1 + s))[:, None] & ((x >= y0 - s) & (x <= y1 + s))[None, :]
        bad += int(np.any(full[~inside] != 0))
    rows.append({"property": "a_support", "threshold": 0, "measured": bad, "passed": bad == 0})

    # (c)
    rec = dec.assemble()
    err = float(np.linalg.norm(rec.values - dec.f.values) / max(np.linalg.norm(dec.f.values), 1e-300))
    rows.append({"property": "c_reconstruction", "threshold": th.reconstruction, "measured": err,
                 "passed": err <= th.reconstruction})

    # (e)
    q = {a: dec._axis_q(a) for a in range(dec.n)}
    worst = 0.0
    for cap in dec.caps:
        loc = local_norm2(cap.index)
        if loc > 0:
            worst = max(worst, dec.total_energy(cap.index, q) / loc)
    rows.append({"property": "e_constant", "threshold": th.constant_e, "measured": worst,
                 "passed": worst <= th.constant_e})

    # (b) and (d) on a few caps
    order = rng.permutation(len(dec.caps))[:n_caps]
    off = 0.0
    peak = 0.0
    ortho = 0.0
    heights = np.linspace(-dec.R, dec.R, 9)
    gap = 2 * dec.R**dec.delta
    for ci in order:
        cap = dec.caps[ci]
        en = dec.energies(cap.index)
        cand = [t for t in dec.tubes(cap.index)]
        cand.sort(key=lambda t: -en.get((-t.lattice[0], -t.lattice[1]), 0.0))
        chosen = cand[:n_tubes]
        for t in chosen:
            k = (-t.lattice[0], -t.lattice[1])
            p = dec.packet(cap.index, k)
            on = packet_extension(p, N, dec.gamma, t.axis_point(heights))
            peak = max(peak, float(np.max(np.abs(on))) / fn if fn else 0.0)
            for fac in th.distance_factors:
                pts = _ring_points(t, fac * t.radius, heights)
                if len(pts):
                    v = packet_extension(p, N, dec.gamma, pts)
                    off = max(off, float(np.max(np.abs(v))) / fn if fn else 0.0)
        loc = local_norm2(cap.index)
        top = sorted(en, key=lambda kk: -en[kk])[: 2 * n_tubes + 2]
        for i, ka in enumerate(top):
            for kb in top[i + 1:]:
                # axes R^(1/2) apart per lattice step; disjoint once that exceeds 2 radii
                if max(abs(ka[0] - kb[0]), abs(ka[1] - kb[1])) <= gap or loc == 0:
                    continue
                pa = dec.packet(cap.index, ka).values
                pb = dec.packet(cap.index, kb).values
                ip = abs(np.vdot(pa, pb)) / N**2
                ortho = max(ortho, ip / loc)
    rows.append({"property": "b_off_tube", "threshold": off_thr, "measured": off,
                 "passed": off <= off_thr, "on_axis_peak": peak})
    rows.append({"property": "d_orthogonality", "threshold": th.orthogonality, "measured": ortho,
                 "passed": ortho <= th.orthogonality})
    return rows


# -- bilinear quantity -------------------------------------------------------------

def bilinear_sup(pieces: dict, separated) -> np.ndarray:
    """``sup |E f_t1|^(1/2) |E f_t2|^(1/2)`` over pairs with ``separated(t1, t2)``.

    Parameters
    ----------
    pieces : dict
        Cap key to a field (array or object with ``values``) on a shared grid.
    separated : callable
        ``separated(key1, key2) -> bool``.
    """
    keys = list(pieces)
    if not keys:
        raise ValueError("no pieces")
    mods = {k: np.abs(getattr(pieces[k], "values", pieces[k])) for k in keys}
    out = np.zeros_like(mods[keys[0]], dtype=float)
    for i, a in enumerate(keys):
        for b in keys[i + 1:]:
            if separated(a, b):
                np.maximum(out, np.sqrt(mods[a] * mods[b]), out=out)
    return out


# -- intersection curve --------------------------------------------------------

@dataclass
class CurveReport:
    budget: float
    arc_length: float          # largest |t| with |det| <= budget on the traced branch(es)
    drift: float               # |z2(t) - z2(0)| there
    min_rate: float            # min |d det / dt| over traced samples
    rate_bound: float          # budget / min_rate
    proof_bound: float         # K^2 budget / mu
    sign_constant: bool
    truncated: bool
    samples: int
    max_psi: float
    points: np.ndarray = field(repr=False, default=None)

    @property
    def holds(self) -> bool:
        return self.arc_length <= self.rate_bound * (1 + 1e-9) and self.arc_length <= self.proof_bound

    def as_row(self) -> dict:
        return {k: getattr(self, k) for k in ("budget", "arc_length", "drift", "min_rate", "rate_bound",
                                               "proof_bound", "sign_constant", "truncated", "samples",
                                               "max_psi")} | {"holds": self.holds}


def _normal3(g, z):
    gr = gradient(g, z)
    return np.concatenate([gr, [-1.0]], axis=-1) if gr.ndim == 1 else np.concatenate(
        [gr, -np.ones(gr.shape[:-1] + (1,))], axis=-1)


def intersection_curve_probe(surface, z1, z2p, angle_budget: float, K: float, mu: float = 1.0,
                             z2=None, step: float | None = None, max_steps: int = 200_000,
                             caps=None) -> CurveReport:
    """Trace ``psi(z) = 0`` from ``z1 + z2`` and bound how far ``z2(t)`` can move.

    ``psi(z) = phi(z - z1) + phi(z1) - phi(z - z2p) - phi(z2p)``; along the
    arc-length parametrized curve ``z2(t) = z(t) - z1`` and
    ``D(t) = det(N(z1), N(z2), N(z2(t)))``. The trace stops once
    ``|D| > angle_budget`` or ``z2(t)``, ``z(t) - z2p`` leave the unit square.

    Parameters
    ----------
    z2 : point, optional
        Starting point of ``z2(t)``; defaults to `z2p`.
    step : float, optional
        Arc-length step; default ``1e-3 / K``.
    caps : (Cap, Cap), optional
        When given, their strong separation is checked first.

    Raises
    ------
    ChartError
        If the start point is outside the unit square.
    ValueError
        If `caps` are given and not strongly separated.
    """
    g = _gamma_of(surface)
    z1 = np.asarray(z1, dtype=float)
    z2p = np.asarray(z2p, dtype=float)
    z2 = z2p.copy() if z2 is None else np.asarray(z2, dtype=float)
    if caps is not None and not strongly_separated(g, caps[0], caps[1], mu, K):
        raise ValueError("caps are not strongly separated")
    h = 1e-3 / K if step is None else step

    def inside(z):
        a, b = z - z1, z - z2p
        return bool(np.all((a >= 0) & (a <= 1)) and np.all((b >= 0) & (b <= 1)))

    def phi(z):
        return z[0] * z[1] + g * z[1] ** 3 / 3.0

    def psi(z):
        return phi(z - z1) + phi(z1) - phi(z - z2p) - phi(z2p)

    def dpsi(z):
        return gradient(g, z - z1) - gradient(g, z - z2p)

    z0 = z1 + z2
    if not inside(z0):
        raise ChartError("start point z1 + z2 is outside the chart")
    # project the start onto the curve
    for _ in range(5):
        gr = dpsi(z0)
        z0 = z0 - psi(z0) * gr / (gr @ gr)
    n1 = _normal3(g, z1)
    nz2 = _normal3(g, z2)
    c12 = np.cross(n1, nz2)

    def det_at(z):
        return float(c12 @ _normal3(g, z - z1))

    def rate(z, tangent):
        dn = np.concatenate([hessian(g, z - z1) @ tangent, [0.0]])
        return float(c12 @ dn)

    best_t, best_drift, min_rate = 0.0, 0.0, np.inf
    signs = set()
    truncated = False
    count = 0
    max_psi = abs(psi(z0))
    pts = [z0.copy()]
    for sgn in (1.0, -1.0):
        z = z0.copy()
        t = 0.0
        for _ in range(max_steps):
            gr = dpsi(z)
            tang = sgn * np.array([-gr[1], gr[0]]) / np.linalg.norm(gr)
            r = rate(z, tang)
            min_rate = min(min_rate, abs(r))
            if r != 0:
                signs.add(np.sign(r) * sgn)
            zn = z + h * tang
            for _ in range(2):
                gn = dpsi(zn)
                zn = zn - psi(zn) * gn / (gn @ gn)
            if not inside(zn):
                truncated = True
                break
            t += float(np.linalg.norm(zn - z))
            z = zn
            count += 1
            max_psi = max(max_psi, abs(psi(z)))
            if abs(det_at(z)) > angle_budget:
                break
            pts.append(z.copy())
            if t > best_t:
                best_t = t
                best_drift = float(np.linalg.norm((z - z1) - z2))
        else:
            truncated = True
    rb = angle_budget / min_rate if min_rate > 0 else np.inf
    return CurveReport(float(angle_budget), best_t, best_drift, float(min_rate), float(rb),
                       float(K**2 * angle_budget / mu), len(signs) <= 1, truncated, count,
                       float(max_psi), np.array(pts))
