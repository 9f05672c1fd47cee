"""Affine reparametrizations that blow a strip up to unit size.

Three kinds, each turning ``phi_gamma`` on a strip into ``phi_gamma'`` on a
unit-size domain plus an affine remainder:

horizontal (strip ``[0, 1] x [b, b + K^(-1/4)]``)
    ``y = b + K^(-1/4) y'``, ``x' = x + gamma K^(-1/4) b y'``,
    ``gamma' = gamma / K^(1/2)``;
    ``K^(1/4) phi_gamma(x, y) = phi_gamma'(x', y') + K^(1/4) b x' + const``.
vertical (strip ``[a, a + K^(-1/2)] x [0, 1]``, needs ``|gamma| K^(1/2) <= 1``)
    ``x = a + K^(-1/2) x'``, ``gamma' = gamma K^(1/2)``;
    ``K^(1/2) phi_gamma(x, y) = phi_gamma'(x', y) + a K^(1/2) y``.
short (their intersection, same proviso)
    both substitutions, then ``x'' = x' + gamma K^(1/4) b y'``, ``gamma`` kept;
    ``K^(3/4) phi_gamma = phi_gamma(x'', y'') + K^(1/4) b x'' + K^(1/2) a y'' + const``.

The frequency side transforms by :meth:`AffineReparam.dual`, and
``|E_gamma f_L(xi)| = J |E_gamma' f^L(dual(xi))|`` with ``J`` the area factor
``K^(-1/4)``, ``K^(-1/2)`` or ``K^(-3/4)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import phi
from .partition import vertical_allowed

__all__ = [
    "AffineReparam",
    "horizontal_rescale",
    "vertical_rescale",
    "short_rescale",
    "dual_map",
    "compose_horizontal",
    "identity_residual",
    "verify_operator_identity",
    "norm_relation",
    "PreconditionError",
]


class PreconditionError(ValueError):
    pass


@dataclass(frozen=True)
class AffineReparam:
    """One of the three strip reparametrizations.

    Attributes
    ----------
    kind : {"horizontal", "vertical", "short"}
    K : float
    a : float
        Left edge of the strip (vertical kinds; 0 otherwise).
    b : float
        Bottom edge of the strip (horizontal kinds; 0 otherwise).
    gamma_in, gamma_out : float
    """

    kind: str
    K: float
    a: float
    b: float
    gamma_in: float
    gamma_out: float

    @property
    def jacobian(self) -> float:
        """Area factor: ``dx dy = jacobian * dx' dy'``."""
        return {"horizontal": self.K**-0.25, "vertical": self.K**-0.5, "short": self.K**-0.75}[self.kind]

    @property
    def _shear(self) -> float:
        g, K, b = self.gamma_in, self.K, self.b
        if self.kind == "horizontal":
            return g * K**-0.25 * b
        if self.kind == "short":
            return g * K**0.25 * b
        return 0.0

    @property
    def strip(self) -> tuple:
        """Source rectangle ``(x0, y0, x1, y1)`` before clipping to the unit square."""
        K = self.K
        if self.kind == "horizontal":
            return (0.0, self.b, 1.0, self.b + K**-0.25)
        if self.kind == "vertical":
            return (self.a, 0.0, self.a + K**-0.5, 1.0)
        return (self.a, self.b, self.a + K**-0.5, self.b + K**-0.25)

    @property
    def image_domain(self) -> tuple:
        """Bounding box of the image of the strip; ``x'`` stays within ``[-1, 2]``."""
        s = self._shear
        return (min(0.0, s), 0.0, 1.0 + max(0.0, s), 1.0)

    def forward(self, x, y):
        """Source ``(x, y)`` to image coordinates."""
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        K = self.K
        if self.kind == "horizontal":
            yp = (y - self.b) * K**0.25
            return x + self._shear * yp, yp
        if self.kind == "vertical":
            return (x - self.a) * K**0.5, y
        xp = (x - self.a) * K**0.5
        yp = (y - self.b) * K**0.25
        return xp + self._shear * yp, yp

    def inverse(self, xp, yp):
        """Image coordinates back to ``(x, y)``."""
        xp = np.asarray(xp, float)
        yp = np.asarray(yp, float)
        K = self.K
        if self.kind == "horizontal":
            return xp - self._shear * yp, self.b + K**-0.25 * yp
        if self.kind == "vertical":
            return self.a + K**-0.5 * xp, yp
        x1 = xp - self._shear * yp
        return self.a + K**-0.5 * x1, self.b + K**-0.25 * yp

    def dual(self, xi) -> np.ndarray:
        return dual_map(self, xi)

    def identity_terms(self, xp, yp):
        """Left side minus the rescaled phase and the affine part, before removing the constant."""
        x, y = self.inverse(xp, yp)
        g, K, a, b = self.gamma_in, self.K, self.a, self.b
        xp = np.asarray(xp, float)
        yp = np.asarray(yp, float)
        pts = np.stack(np.broadcast_arrays(x, y), axis=-1)
        img = np.stack(np.broadcast_arrays(xp, yp), axis=-1)
        if self.kind == "horizontal":
            return K**0.25 * phi(g, pts) - phi(self.gamma_out, img) - K**0.25 * b * xp
        if self.kind == "vertical":
            return K**0.5 * phi(g, pts) - phi(self.gamma_out, img) - a * K**0.5 * yp
        return (K**0.75 * phi(g, pts) - phi(self.gamma_out, img)
                - K**0.25 * b * xp - K**0.5 * a * yp)

    def as_row(self) -> dict:
        return {"kind": self.kind, "K": self.K, "a": self.a, "b": self.b,
                "gamma_in": self.gamma_in, "gamma_out": self.gamma_out, "jacobian": self.jacobian}


def _check_gamma(g):
    if abs(g) > 1:
        raise ValueError(f"|gamma| must be at most 1, got {g}")


def horizontal_rescale(gamma: float, K: float, b: float) -> AffineReparam:
    """Reparametrize the long horizontal strip with bottom edge `b`.

    Examples
    --------
    >>> horizontal_rescale(1.0, 16, 0.0).gamma_out
    0.25
    """
    _check_gamma(gamma)
    return AffineReparam("horizontal", float(K), 0.0, float(b), float(gamma), gamma / np.sqrt(K))


def vertical_rescale(gamma: float, K: float, a: float) -> AffineReparam:
    """Reparametrize the long vertical strip with left edge `a`.

    Raises
    ------
    PreconditionError
        If ``|gamma| K^(1/2) > 1``; the rescaled surface would leave the
        family ``|gamma'| <= 1``.
    """
    _check_gamma(gamma)
    if not vertical_allowed(gamma, K, strict=False):
        raise PreconditionError(f"vertical rescaling needs |gamma| K^(1/2) <= 1, got {abs(gamma) * np.sqrt(K)}")
    go = gamma * np.sqrt(K)
    return AffineReparam("vertical", float(K), float(a), 0.0, float(gamma), float(np.clip(go, -1, 1)))


def short_rescale(gamma: float, K: float, a: float, b: float) -> AffineReparam:
    """Reparametrize the short strip with lower-left corner ``(a, b)``; gamma is kept."""
    _check_gamma(gamma)
    if not vertical_allowed(gamma, K, strict=False):
        raise PreconditionError(f"short rescaling needs |gamma| K^(1/2) <= 1, got {abs(gamma) * np.sqrt(K)}")
    return AffineReparam("short", float(K), float(a), float(b), float(gamma), float(gamma))


def dual_map(reparam: AffineReparam, xi) -> np.ndarray:
    """Frequency-side image of `xi` (trailing axis of length 3)."""
    xi = np.asarray(xi, dtype=float)
    x1, x2, x3 = xi[..., 0], xi[..., 1], xi[..., 2]
    K, a, b, g = reparam.K, reparam.a, reparam.b, reparam.gamma_in
    if reparam.kind == "horizontal":
        out = (x1 + b * x3, (x2 - b * g * x1) * K**-0.25, x3 * K**-0.25)
    elif reparam.kind == "vertical":
        out = (x1 * K**-0.5, x2 + a * x3, x3 * K**-0.5)
    else:
        out = (K**-0.5 * (x1 + b * x3), K**-0.25 * (x2 + a * x3 - b * g * x1), K**-0.75 * x3)
    return np.stack(np.broadcast_arrays(*out), axis=-1)


def compose_horizontal(r1: AffineReparam, r2: AffineReparam) -> AffineReparam:
    """Single horizontal reparam equivalent to `r1` followed by `r2`.

    `r2` acts on the output of `r1` and must carry ``gamma_in == r1.gamma_out``.
    The composed point map agrees with the returned one up to a translation
    in ``x``.
    """
    if r1.kind != "horizontal" or r2.kind != "horizontal":
        raise ValueError("only horizontal reparams compose this way")
    if not np.isclose(r2.gamma_in, r1.gamma_out, rtol=1e-12, atol=1e-15):
        raise ValueError("r2 must act on the surface produced by r1")
    K = r1.K * r2.K
    b = r1.b + r1.K**-0.25 * r2.b
    return horizontal_rescale(r1.gamma_in, K, b)


def identity_residual(reparam: AffineReparam, xp, yp) -> np.ndarray:
    """Identity defect at ``(xp, yp)`` after subtracting its value at the origin."""
    return reparam.identity_terms(xp, yp) - reparam.identity_terms(0.0, 0.0)


def _midpoint_integral(fn, box, n, xis, gamma):
    x0, y0, x1, y1 = box
    hx = (x1 - x0) / n
    hy = (y1 - y0) / n
    xs = x0 + (np.arange(n) + 0.5) * hx
    ys = y0 + (np.arange(n) + 0.5) * hy
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    F = np.asarray(fn(X, Y), dtype=complex)
    keep = F != 0
    X, Y, F = X[keep], Y[keep], F[keep]
    P = X * Y + gamma * Y**3 / 3.0
    out = np.empty(len(xis), dtype=complex)
    for i, (a, b, c) in enumerate(xis):
        out[i] = np.dot(F, np.exp(1j * (a * X + b * Y + c * P)))
    return out * hx * hy


def verify_operator_identity(reparam: AffineReparam, f, probe_xis, n: int = 1024) -> float:
    """Max relative gap between ``|E f_L(xi)|`` and ``J |E' f^L(dual(xi))|``.

    Parameters
    ----------
    reparam : AffineReparam
    f : callable ``f(x, y)``
        Smooth function supported inside the strip; both sides are computed
        by midpoint quadrature on their own ``n x n`` grids, so agreement
        tests the maps and factors rather than a relabelling of samples.
    probe_xis : (k, 3) array
    n : int

    Raises
    ------
    ValueError
        If `f` is not supported in the strip.
    """
    x0, y0, x1, y1 = reparam.strip
    # support check on a grid over the unit square
    g = (np.arange(256) + 0.5) / 256
    GX, GY = np.meshgrid(g, g, indexing="ij")
    fv = np.asarray(f(GX, GY))
    outside = ~((GX >= x0) & (GX <= x1) & (GY >= y0) & (GY <= y1))
    if np.any(np.abs(fv[outside]) > 0):
        raise ValueError("f is not supported in the strip of this reparametrization")
    xis = np.atleast_2d(np.asarray(probe_xis, dtype=float))
    box = (max(x0, 0.0), max(y0, 0.0), min(x1, 1.0), min(y1, 1.0))
    lhs = _midpoint_integral(f, box, n, xis, reparam.gamma_in)

    def fL(xp, yp):
        x, y = reparam.inverse(xp, yp)
        v = np.asarray(f(x, y), dtype=complex)
        inside = (x >= box[0]) & (x <= box[2]) & (y >= box[1]) & (y <= box[3])
        return np.where(inside, v, 0.0)

    rhs = reparam.jacobian * _midpoint_integral(fL, reparam.image_domain, n, reparam.dual(xis),
                                                reparam.gamma_out)
    a, b = np.abs(lhs), np.abs(rhs)
    scale = max(float(np.max(a)), 1e-300)
    return float(np.max(np.abs(a - b)) / scale)


def norm_relation(reparam: AffineReparam, f, n: int = 512) -> tuple:
    """``(||f^L||_2, ||f_L||_2)`` by quadrature on each side's own grid.

    For the horizontal kind the ratio is ``K^(1/8)``; in general it is
    ``jacobian^(-1/2)``.
    """
    x0, y0, x1, y1 = reparam.strip
    box = (max(x0, 0.0), max(y0, 0.0), min(x1, 1.0), min(y1, 1.0))

    def l2(fn, bx):
        hx = (bx[2] - bx[0]) / n
        hy = (bx[3] - bx[1]) / n
        xs = bx[0] + (np.arange(n) + 0.5) * hx
        ys = bx[1] + (np.arange(n) + 0.5) * hy
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        return float(np.sqrt(np.sum(np.abs(fn(X, Y)) ** 2) * hx * hy))

    def fL(xp, yp):
        x, y = reparam.inverse(xp, yp)
        inside = (x >= box[0]) & (x <= box[2]) & (y >= box[1]) & (y <= box[3])
        return np.where(inside, f(x, y), 0.0)

    return l2(fL, reparam.image_domain), l2(f, box)
