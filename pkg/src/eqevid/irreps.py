"""
(0e + 2e) coefficient <-> Cartesian symmetric matrix map.

Coefficients are 6-vectors ``z = [s, t1..t5]``. The basis is Frobenius
orthonormal, so the forward map is a synthesis and the inverse a projection:

    B0 = I/sqrt(3)
    B1 = diag(1, -1, 0)/sqrt(2)        B2 = diag(1, 1, -2)/sqrt(6)
    B3 = (Exy + Eyx)/sqrt(2)           B4 = (Exz + Ezx)/sqrt(2)
    B5 = (Eyz + Ezy)/sqrt(2)

It differs from the e3nn ``CartesianTensor`` convention only by a fixed
orthogonal change of basis inside the l=2 block.
"""
from __future__ import annotations

import numpy as np


def _basis():
    b = np.zeros((6, 3, 3))
    b[0] = np.eye(3) / np.sqrt(3.0)
    b[1] = np.diag([1.0, -1.0, 0.0]) / np.sqrt(2.0)
    b[2] = np.diag([1.0, 1.0, -2.0]) / np.sqrt(6.0)
    for k, (i, j) in enumerate([(0, 1), (0, 2), (1, 2)], start=3):
        b[k, i, j] = b[k, j, i] = 1.0 / np.sqrt(2.0)
    b.setflags(write=False)
    return b


BASIS = _basis()
SQRT3 = np.sqrt(3.0)


def coeffs_to_sym(z):
    """``S = s B0 + sum_k t_k B_k`` for coefficients of shape ``(..., 6)``."""
    z = np.asarray(z, dtype=float)
    return np.einsum("...a,aij->...ij", z, BASIS)


def sym_to_coeffs(s):
    """Project symmetric matrices ``(..., 3, 3)`` onto the basis, giving ``(..., 6)``."""
    s = np.asarray(s, dtype=float)
    return np.einsum("...ij,aij->...a", s, BASIS)


def split(z):
    """Return the scalar channel ``s`` and the l=2 channel ``t``."""
    z = np.asarray(z, dtype=float)
    return z[..., 0], z[..., 1:]


def join(s, t):
    return np.concatenate([np.asarray(s, dtype=float)[..., None], np.asarray(t, dtype=float)], axis=-1)


def induced_rotation_l2(r):
    """The 5x5 matrix ``D(R)_ab = <B_a, R B_b R^T>_F`` acting on the l=2 channel."""
    r = np.asarray(r, dtype=float)
    b = BASIS[1:]
    rotated = np.einsum("...ij,bjk,...lk->...bil", r, b, r)
    return np.einsum("aij,...bij->...ab", b, rotated)
