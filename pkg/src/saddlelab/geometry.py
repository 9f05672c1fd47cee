"""Closed-form quantities of the perturbed saddle and its transversality algebra.

The surface is the graph of

.. math:: \\phi_\\gamma(x, y) = xy + \\frac{\\gamma}{3} y^3

over the parameter square :math:`\\Sigma = [0, 1]^2`, with :math:`|\\gamma| \\le 1`.

Points are passed as array-likes whose last axis has length 2, so a single
point ``(x, y)`` and a stack of shape ``(n, 2)`` go through the same code.
Nothing here clamps to the unit square: rescaled coordinates legitimately
leave it.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

__all__ = [
    "Point2",
    "Cap",
    "Surface",
    "phi",
    "gradient",
    "hessian",
    "hessian_inverse",
    "normal",
    "t_form",
    "gamma_pair",
    "gamma_pair_matrix",
    "gamma_quad",
    "gamma_quad_expansion",
    "strongly_separated",
    "separation_threshold",
    "normal_angle",
    "ANGLE_CONSTANT",
    "gamma_quad_matrix",
    "gamma_quad_rows",
    "sample_separated_configs",
    "quad_bound_audit",
    "angle_constant_scan",
]

# lower bound for angle(N(z1), N(z2)) / |y2 - y1| on the unit square, |gamma| <= 1
ANGLE_CONSTANT = 1.0 / 20.0


class Point2(NamedTuple):
    x: float
    y: float


@dataclass(frozen=True)
class Cap:
    """Axis-aligned square piece of the parameter domain.

    Attributes
    ----------
    center : Point2
        Center of the square before truncation.
    side : float
        Side length of the untruncated square.
    bounds : tuple of float, optional
        ``(x0, y0, x1, y1)`` after truncation to the unit square. Defaults to
        the untruncated square.
    """

    center: Point2
    side: float
    bounds: tuple | None = None

    def __post_init__(self):
        if not self.side > 0:
            raise ValueError(f"cap side must be positive, got {self.side}")
        object.__setattr__(self, "center", Point2(float(self.center[0]), float(self.center[1])))
        if self.bounds is None:
            h = 0.5 * self.side
            cx, cy = self.center
            object.__setattr__(self, "bounds", (cx - h, cy - h, cx + h, cy + h))

    def contains(self, pts, closed: bool = True) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        x0, y0, x1, y1 = self.bounds
        x, y = pts[..., 0], pts[..., 1]
        if closed:
            return (x >= x0) & (x <= x1) & (y >= y0) & (y <= y1)
        return (x > x0) & (x < x1) & (y > y0) & (y < y1)


def _check_gamma(gamma: float) -> float:
    gamma = float(gamma)
    if not np.isfinite(gamma) or abs(gamma) > 1.0:
        raise ValueError(f"|gamma| must be at most 1, got {gamma}")
    return gamma


@dataclass(frozen=True)
class Surface:
    """The graph of ``phi_gamma`` over the unit square."""

    gamma: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "gamma", _check_gamma(self.gamma))

    def phi(self, z):
        return phi(self, z)

    def gradient(self, z):
        return gradient(self, z)

    def hessian(self, z):
        return hessian(self, z)

    def normal(self, z):
        return normal(self, z)


def _split(z):
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != 2:
        raise ValueError(f"points need a trailing axis of length 2, got shape {z.shape}")
    return z[..., 0], z[..., 1]


def _gamma_of(surface) -> float:
    return surface.gamma if isinstance(surface, Surface) else _check_gamma(surface)


def phi(surface, z):
    """Height ``x*y + gamma*y**3/3`` of the surface over `z`."""
    g = _gamma_of(surface)
    x, y = _split(z)
    return x * y + g * y**3 / 3.0


def gradient(surface, z) -> np.ndarray:
    """Gradient ``(y, x + gamma*y**2)``; trailing axis holds the two components."""
    g = _gamma_of(surface)
    x, y = _split(z)
    return np.stack(np.broadcast_arrays(y, x + g * y**2), axis=-1)


def hessian(surface, z) -> np.ndarray:
    """Hessian ``[[0, 1], [1, 2*gamma*y]]``; determinant is -1 everywhere."""
    g = _gamma_of(surface)
    _, y = _split(z)
    out = np.zeros(np.shape(y) + (2, 2))
    out[..., 0, 1] = 1.0
    out[..., 1, 0] = 1.0
    out[..., 1, 1] = 2.0 * g * y
    return out


def hessian_inverse(surface, z) -> np.ndarray:
    """Closed-form inverse ``[[-2*gamma*y, 1], [1, 0]]``."""
    g = _gamma_of(surface)
    _, y = _split(z)
    out = np.zeros(np.shape(y) + (2, 2))
    out[..., 0, 0] = -2.0 * g * y
    out[..., 0, 1] = 1.0
    out[..., 1, 0] = 1.0
    return out


def normal(surface, z) -> np.ndarray:
    """Unnormalized normal ``(grad phi, -1)``."""
    grad = gradient(surface, z)
    return np.concatenate([grad, -np.ones(grad.shape[:-1] + (1,))], axis=-1)


def t_form(surface, z, z1, z2):
    """Transversality factor ``x2 - x1 + gamma*(y1 + y2 - y)*(y2 - y1)``.

    Antisymmetric in ``(z1, z2)``.
    """
    g = _gamma_of(surface)
    _, y = _split(z)
    x1, y1 = _split(z1)
    x2, y2 = _split(z2)
    return x2 - x1 + g * (y1 + y2 - y) * (y2 - y1)


def gamma_pair(surface, z, z1, z2):
    """Closed form ``2*(y2 - y1)*t_form(z, z1, z2)``."""
    _, y1 = _split(z1)
    _, y2 = _split(z2)
    return 2.0 * (y2 - y1) * t_form(surface, z, z1, z2)


def gamma_quad_matrix(surface, z, z1, z2, z1p, z2p):
    """Four-point form ``<H^{-1}(z) (grad(z2) - grad(z1)), grad(z2p) - grad(z1p)>``."""
    d = gradient(surface, z2) - gradient(surface, z1)
    dp = gradient(surface, z2p) - gradient(surface, z1p)
    hinv = hessian_inverse(surface, z)
    return np.einsum("...i,...ij,...j->...", dp, hinv, d)


def gamma_pair_matrix(surface, z, z1, z2):
    """Matrix form of :func:`gamma_pair`, the diagonal case of the four-point form."""
    return gamma_quad_matrix(surface, z, z1, z2, z1, z2)


def gamma_quad(surface, z, z1, z2, z1p, z2p):
    """Four-point transversality form, evaluated through the Hessian inverse."""
    return gamma_quad_matrix(surface, z, z1, z2, z1p, z2p)


def gamma_quad_expansion(surface, z, z1, z2, z1p, z2p):
    """Two-term expansion ``(y2p - y1p)*t(z; z1, z2) + (y2 - y1)*t(z; z1p, z2p)``."""
    _, y1 = _split(z1)
    _, y2 = _split(z2)
    _, y1p = _split(z1p)
    _, y2p = _split(z2p)
    return (y2p - y1p) * t_form(surface, z, z1, z2) + (y2 - y1) * t_form(surface, z, z1p, z2p)


def separation_threshold(mu: float, K: float) -> float:
    """Strong separation threshold ``10 * mu**0.5 / K``."""
    return 10.0 * np.sqrt(mu) / K


def _separation_terms(surface, c1, c2):
    c1 = np.asarray(c1, dtype=float)
    c2 = np.asarray(c2, dtype=float)
    dy = np.abs(c2[..., 1] - c1[..., 1])
    t1 = np.abs(t_form(surface, c1, c1, c2))
    t2 = np.abs(t_form(surface, c2, c1, c2))
    return dy, t1, t2


def strongly_separated(surface, cap1, cap2, mu: float, K: float):
    """Whether two caps are strongly separated.

    Parameters
    ----------
    surface : Surface or float
    cap1, cap2 : Cap or array-like of centers
        Caps, or arrays of centers with a trailing axis of length 2 for a
        vectorized test.
    mu, K : float
        Multiplicity and decomposition scale, ``mu >= 1``, ``K >= 1``.

    Returns
    -------
    bool or ndarray of bool
        ``min(|dy|, max(|t at c1|, |t at c2|)) >= 10 mu^(1/2) / K``.
    """
    if mu < 1 or K < 1:
        raise ValueError("need mu >= 1 and K >= 1")
    c1 = cap1.center if isinstance(cap1, Cap) else cap1
    c2 = cap2.center if isinstance(cap2, Cap) else cap2
    dy, t1, t2 = _separation_terms(surface, c1, c2)
    out = np.minimum(dy, np.maximum(t1, t2)) >= separation_threshold(mu, K)
    return bool(out) if np.ndim(out) == 0 else out


def normal_angle(surface, z1, z2):
    """Angle in radians between the normals at `z1` and `z2`."""
    n1 = normal(surface, z1)
    n2 = normal(surface, z2)
    # atan2 of |cross| and dot stays accurate for tiny angles
    cross = np.linalg.norm(np.cross(n1, n2), axis=-1)
    dot = np.sum(n1 * n2, axis=-1)
    return np.arctan2(cross, dot)


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def sample_separated_configs(n: int, K: float, mu: float, seed=None, near_threshold: float = 0.5,
                             max_rounds: int = 200):
    """Draw strongly separated cap pairs together with in-cap evaluation points.

    Centers are uniform on the unit square, sides uniform in
    ``[1/K, mu**0.5/K]`` for each cap independently. Pairs are kept when they
    are strongly separated. The cap whose center makes ``|t|`` large is
    relabelled as the second cap, so the base point `z` always lives where the
    t-condition holds. A fraction `near_threshold` of the draws places the
    second center just beyond the separation threshold in both ``dy`` and ``t``,
    where the bound is tightest.

    Returns
    -------
    dict of ndarray
        Keys ``gamma, c1, c2, s1, s2, z, z1, z2, z1p, z2p``.
    """
    rng = _rng(seed)
    thr = separation_threshold(mu, K)
    if thr >= 1.0:
        raise ValueError(f"no strongly separated pairs exist on the unit square for K={K}, mu={mu}")
    keep = {k: [] for k in ("gamma", "c1", "c2", "s1", "s2")}
    have = 0
    for _ in range(max_rounds):
        m = max(4 * (n - have), 1024)
        g = rng.uniform(-1.0, 1.0, m)
        c1 = rng.uniform(0.0, 1.0, (m, 2))
        c2 = rng.uniform(0.0, 1.0, (m, 2))
        # a share of pairs sits just past the threshold in both conditions
        hard = rng.random(m) < near_threshold
        nh = int(hard.sum())
        dy = thr * (1.0 + 0.5 * rng.random(nh)) * rng.choice([-1.0, 1.0], nh)
        tt = thr * (1.0 + 0.5 * rng.random(nh)) * rng.choice([-1.0, 1.0], nh)
        c2[hard, 1] = c1[hard, 1] + dy
        c2[hard, 0] = c1[hard, 0] - g[hard] * c1[hard, 1] * dy + tt
        inbox = np.all((c2 >= 0.0) & (c2 <= 1.0), axis=1)
        s1 = rng.uniform(1.0, np.sqrt(mu), m) / K
        s2 = rng.uniform(1.0, np.sqrt(mu), m) / K
        dy = np.abs(c2[:, 1] - c1[:, 1])
        ta = np.abs(_t_vec(g, c1, c1, c2))
        tb = np.abs(_t_vec(g, c2, c1, c2))
        ok = (np.minimum(dy, np.maximum(ta, tb)) >= thr) & inbox
        # role swap: the t-separated center becomes the second cap
        swap = ok & (tb < thr)
        c1[swap], c2[swap] = c2[swap].copy(), c1[swap].copy()
        s1[swap], s2[swap] = s2[swap].copy(), s1[swap].copy()
        for k, v in (("gamma", g), ("c1", c1), ("c2", c2), ("s1", s1), ("s2", s2)):
            keep[k].append(v[ok])
        have += int(ok.sum())
        if have >= n:
            break
    out = {k: np.concatenate(v)[:n] for k, v in keep.items()}
    if len(out["gamma"]) < n:
        raise RuntimeError("could not draw enough separated pairs")

    def inside(c, s):
        return c + (rng.uniform(-0.5, 0.5, c.shape) * s[:, None])

    out["z"] = inside(out["c2"], out["s2"])
    out["z2"] = inside(out["c2"], out["s2"])
    out["z2p"] = inside(out["c2"], out["s2"])
    out["z1"] = inside(out["c1"], out["s1"])
    out["z1p"] = inside(out["c1"], out["s1"])
    return out


def _t_vec(g, z, z1, z2):
    # t_form with a per-row gamma
    y = z[..., 1]
    return z2[..., 0] - z1[..., 0] + g * (z1[..., 1] + z2[..., 1] - y) * (z2[..., 1] - z1[..., 1])


def gamma_quad_rows(g, z, z1, z2, z1p, z2p):
    """Four-point form with a per-row gamma, via the Hessian inverse."""
    g = np.asarray(g, dtype=float)

    def grad(p):
        return np.stack([p[..., 1], p[..., 0] + g * p[..., 1] ** 2], axis=-1)

    d = grad(z2) - grad(z1)
    dp = grad(z2p) - grad(z1p)
    # H^{-1}(z) = [[-2 g y, 1], [1, 0]]
    hd0 = -2.0 * g * z[..., 1] * d[..., 0] + d[..., 1]
    hd1 = d[..., 0]
    return dp[..., 0] * hd0 + dp[..., 1] * hd1


def quad_bound_audit(n: int, K: float, mu: float, seed=None) -> dict:
    """Fuzz the lower bound ``|Gamma| >= 4 mu / K**2`` over separated cap pairs.

    Returns
    -------
    dict
        ``n``, ``violations``, ``min_ratio`` (smallest ``|Gamma| K^2 / (4 mu)``).
    """
    cfg = sample_separated_configs(n, K, mu, seed)
    val = gamma_quad_rows(cfg["gamma"], cfg["z"], cfg["z1"], cfg["z2"], cfg["z1p"], cfg["z2p"])
    bound = 4.0 * mu / K**2
    ratio = np.abs(val) / bound
    return {"n": n, "K": K, "mu": mu, "violations": int(np.sum(ratio < 1.0)),
            "min_ratio": float(ratio.min())}


def angle_constant_scan(n: int, seed=None) -> float:
    """Monte-Carlo minimum of ``normal_angle / |dy|`` over the unit square and ``|gamma| <= 1``."""
    rng = _rng(seed)
    g = rng.uniform(-1.0, 1.0, n)
    z1 = rng.uniform(0.0, 1.0, (n, 2))
    z2 = rng.uniform(0.0, 1.0, (n, 2))

    def nrm(p):
        return np.stack([p[:, 1], p[:, 0] + g * p[:, 1] ** 2, -np.ones(n)], axis=-1)

    n1, n2 = nrm(z1), nrm(z2)
    ang = np.arctan2(np.linalg.norm(np.cross(n1, n2), axis=-1), np.sum(n1 * n2, axis=-1))
    dy = np.abs(z2[:, 1] - z1[:, 1])
    ok = dy > 0
    return float(np.min(ang[ok] / dy[ok]))
