"""
3-vector and 3x3 symmetric matrix algebra.

Every function broadcasts over leading batch axes: vectors are ``(..., 3)``
arrays and matrices ``(..., 3, 3)`` arrays. Symmetric inputs are assumed to be
symmetric; only ``sym`` enforces it.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import ExpOverflow, NotPositiveDefinite

#: Largest eigenvalue accepted by the exponential (``exp(709.8)`` overflows).
EXP_LIMIT = 700.0
#: Pivots at or below this value are treated as a loss of definiteness.
PIVOT_FLOOR = 1e-300
_SERIES_SWITCH = 1e-4


class EigenSym3(NamedTuple):
    values: np.ndarray  # (..., 3) ascending
    vectors: np.ndarray  # (..., 3, 3) columns are eigenvectors


def _check_finite(a, name="input"):
    a = np.asarray(a, dtype=float)
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    return a


def sym(a):
    """Symmetric part ``(A + A^T) / 2``."""
    a = np.asarray(a, dtype=float)
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def eig_sym3(s) -> EigenSym3:
    """Eigendecomposition of symmetric 3x3 matrices, eigenvalues ascending."""
    s = _check_finite(s, "S")
    w, u = np.linalg.eigh(s)
    return EigenSym3(w, u)


def _reassemble(u, d):
    # U diag(d) U^T
    return np.einsum("...ik,...k,...jk->...ij", u, d, u)


def _check_exp_range(w):
    if np.any(w > EXP_LIMIT):
        raise ExpOverflow(
            f"eigenvalue {float(np.max(w)):.4g} exceeds {EXP_LIMIT}; "
            "covariance coefficients were not damped"
        )


def expm_sym(s):
    """Matrix exponential of symmetric matrices via ``U exp(L) U^T``.

    Raises
    ------
    ExpOverflow
        If any eigenvalue exceeds ``EXP_LIMIT``.
    """
    return expm_from_eig(eig_sym3(s))


def expm_from_eig(eig: EigenSym3):
    """``exp`` of a matrix given its eigendecomposition."""
    w, u = eig
    _check_exp_range(w)
    return sym(_reassemble(u, np.exp(w)))


def divided_difference_exp(w):
    """First divided differences of ``exp`` on the eigenvalues ``w``.

    Returns ``G`` with ``G[..., i, j] = (e^wi - e^wj)/(wi - wj)`` and
    ``G[..., i, i] = e^wi``, evaluated as ``e^{(wi+wj)/2} sinh(d)/d`` with
    ``d = (wi - wj)/2`` so that near-equal pairs stay accurate.
    """
    wi = w[..., :, None]
    wj = w[..., None, :]
    mid = np.exp(0.5 * (wi + wj))
    d = 0.5 * (wi - wj)
    small = np.abs(d) < _SERIES_SWITCH
    d_safe = np.where(small, 1.0, d)
    d2 = d * d
    ratio = np.where(small, 1.0 + d2 / 6.0 + d2 * d2 / 120.0, np.sinh(d_safe) / d_safe)
    return mid * ratio


def expm_dirderiv(s, h, eig: EigenSym3 | None = None):
    """Frechet derivative ``D exp(S)[H]`` for symmetric ``S`` and ``H``.

    Daleckii-Krein: with ``S = U L U^T`` the derivative is
    ``U (G o (U^T H U)) U^T`` where ``G`` holds the divided differences of exp.
    The map is self-adjoint in the Frobenius inner product, so the same call
    also pulls a gradient back from ``exp(S)`` to ``S``.

    A precomputed eigendecomposition of ``S`` may be passed as ``eig``.
    """
    h = _check_finite(h, "H")
    w, u = eig if eig is not None else eig_sym3(s)
    _check_exp_range(w)
    g = divided_difference_exp(w)
    ut = np.swapaxes(u, -1, -2)
    ht = ut @ h @ u
    return sym(u @ (g * ht) @ ut)


def factor_spd(a):
    """Lower-triangular ``L`` with ``L L^T = A`` for SPD 3x3 matrices.

    Written out explicitly so the pivots can be checked against
    ``PIVOT_FLOOR``; a failing pivot raises ``NotPositiveDefinite`` carrying the
    flat batch indices of every failing matrix.
    """
    a = np.asarray(a, dtype=float)
    batch = a.shape[:-2]
    with np.errstate(invalid="ignore", divide="ignore"):
        p1 = a[..., 0, 0]
        l11 = np.sqrt(p1)
        l21 = a[..., 1, 0] / l11
        l31 = a[..., 2, 0] / l11
        p2 = a[..., 1, 1] - l21 * l21
        l22 = np.sqrt(p2)
        l32 = (a[..., 2, 1] - l31 * l21) / l22
        p3 = a[..., 2, 2] - l31 * l31 - l32 * l32
        l33 = np.sqrt(p3)
    # NaN pivots compare False, hence the negation
    bad = ~((p1 > PIVOT_FLOOR) & (p2 > PIVOT_FLOOR) & (p3 > PIVOT_FLOOR))
    if np.any(bad):
        idx = np.flatnonzero(np.reshape(bad, -1))
        raise NotPositiveDefinite(
            f"non-positive pivot in {idx.size} matrix(es), first at flat index {idx[0]}",
            index=idx,
        )
    out = np.zeros(batch + (3, 3))
    out[..., 0, 0] = l11
    out[..., 1, 0] = l21
    out[..., 2, 0] = l31
    out[..., 1, 1] = l22
    out[..., 2, 1] = l32
    out[..., 2, 2] = l33
    return out


def forward_solve(low, b):
    """Solve ``L x = b`` for lower-triangular 3x3 ``L``."""
    b = np.asarray(b, dtype=float)
    x0 = b[..., 0] / low[..., 0, 0]
    x1 = (b[..., 1] - low[..., 1, 0] * x0) / low[..., 1, 1]
    x2 = (b[..., 2] - low[..., 2, 0] * x0 - low[..., 2, 1] * x1) / low[..., 2, 2]
    return np.stack([x0, x1, x2], axis=-1)


def backward_solve(low, b):
    """Solve ``L^T x = b`` for lower-triangular 3x3 ``L``."""
    b = np.asarray(b, dtype=float)
    x2 = b[..., 2] / low[..., 2, 2]
    x1 = (b[..., 1] - low[..., 2, 1] * x2) / low[..., 1, 1]
    x0 = (b[..., 0] - low[..., 1, 0] * x1 - low[..., 2, 0] * x2) / low[..., 0, 0]
    return np.stack([x0, x1, x2], axis=-1)


def spd_solve(a, b, low=None):
    """``A^{-1} b`` through two triangular solves."""
    low = factor_spd(a) if low is None else low
    return backward_solve(low, forward_solve(low, b))


def mahalanobis_sq(e, a, low=None):
    """Squared Mahalanobis norm ``e^T A^{-1} e``."""
    low = factor_spd(a) if low is None else low
    w = forward_solve(low, e)
    return np.sum(w * w, axis=-1)


def logdet_spd(a, low=None):
    """``log det A`` as ``2 sum log L_ii``."""
    low = factor_spd(a) if low is None else low
    diag = np.diagonal(low, axis1=-2, axis2=-1)
    return 2.0 * np.sum(np.log(diag), axis=-1)


def quat_to_rotation(q):
    """Rotation matrices from (not necessarily unit) quaternions ``(w, x, y, z)``."""
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = np.moveaxis(q, -1, 0)
    r = np.empty(q.shape[:-1] + (3, 3))
    r[..., 0, 0] = 1 - 2 * (y * y + z * z)
    r[..., 0, 1] = 2 * (x * y - w * z)
    r[..., 0, 2] = 2 * (x * z + w * y)
    r[..., 1, 0] = 2 * (x * y + w * z)
    r[..., 1, 1] = 1 - 2 * (x * x + z * z)
    r[..., 1, 2] = 2 * (y * z - w * x)
    r[..., 2, 0] = 2 * (x * z - w * y)
    r[..., 2, 1] = 2 * (y * z + w * x)
    r[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return r


def sample_rotation(rng: np.random.Generator, size=None):
    """Haar-uniform rotations from normalized Gaussian quaternions.

    ``size=None`` returns one ``(3, 3)`` matrix, otherwise ``(size, 3, 3)``.
    """
    shape = (4,) if size is None else (size, 4)
    return quat_to_rotation(rng.standard_normal(shape))


def condition_ratio(a):
    """``lambda_max / lambda_min`` of SPD matrices."""
    w = eig_sym3(a).values
    return w[..., 2] / w[..., 0]


def outer(u, v=None):
    v = u if v is None else v
    return np.asarray(u)[..., :, None] * np.asarray(v)[..., None, :]


def rotate_sym(r, a):
    """``R A R^T`` with broadcasting."""
    return r @ a @ np.swapaxes(r, -1, -2)
