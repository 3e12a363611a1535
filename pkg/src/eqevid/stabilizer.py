"""Coefficient-space spectral damping applied before the matrix exponential."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np


@dataclass(frozen=True)
class DamperConfig:
    threshold: float = 4.0
    ceiling: float = 5.0
    eps: float = 1e-6

    def __post_init__(self):
        if not (self.ceiling > self.threshold > 0):
            raise ValueError("damper needs ceiling > threshold > 0")
        if not self.eps > 0:
            raise ValueError("damper eps must be positive")

    def to_dict(self):
        return asdict(self)


DEFAULT_DAMPER = DamperConfig()


def phi_high(x, cfg: DamperConfig = DEFAULT_DAMPER):
    """Linear inside ``[-threshold, threshold]``, tanh saturation to ``+-ceiling`` outside."""
    x = np.asarray(x, dtype=float)
    tau, span = cfg.threshold, cfg.ceiling - cfg.threshold
    ax = np.abs(x)
    sat = np.sign(x) * (span * np.tanh((ax - tau) / span) + tau)
    return np.where(ax <= tau, x, sat)


def phi_high_deriv(x, cfg: DamperConfig = DEFAULT_DAMPER):
    x = np.asarray(x, dtype=float)
    tau, span = cfg.threshold, cfg.ceiling - cfg.threshold
    ax = np.abs(x)
    th = np.tanh((ax - tau) / span)
    return np.where(ax <= tau, 1.0, 1.0 - th * th)


def phi_low(x, cfg: DamperConfig = DEFAULT_DAMPER):
    """Floor damper, the odd mirror ``-phi_high(-x)``."""
    return -phi_high(-np.asarray(x, dtype=float), cfg)


def phi_low_deriv(x, cfg: DamperConfig = DEFAULT_DAMPER):
    return phi_high_deriv(-np.asarray(x, dtype=float), cfg)


def _alpha(norm, cfg):
    return phi_high(norm, cfg) / (norm + cfg.eps)


def damp_coeffs(z, cfg: DamperConfig = DEFAULT_DAMPER):
    """Damp ``z = [s, t]``: two-sided damper on ``s``, magnitude-only damping of ``t``.

    ``t`` is scaled by the rotation-invariant factor
    ``phi_high(|t|) / (|t| + eps)``, so its direction is untouched.
    """
    z = np.asarray(z, dtype=float)
    s, t = z[..., 0], z[..., 1:]
    norm = np.linalg.norm(t, axis=-1)
    out = np.empty_like(z)
    out[..., 0] = phi_low(phi_high(s, cfg), cfg)
    out[..., 1:] = _alpha(norm, cfg)[..., None] * t
    return out


def damp_coeffs_jacobian(z, cfg: DamperConfig = DEFAULT_DAMPER):
    """Return ``(ds_tilde/ds, J_t)`` with ``J_t`` the symmetric 5x5 Jacobian of ``t_tilde``.

    ``J_t = alpha I + alpha'(r) r t_hat t_hat^T``; at ``t = 0`` it is ``alpha(0) I = 0``.
    """
    z = np.asarray(z, dtype=float)
    s, t = z[..., 0], z[..., 1:]
    hs = phi_high(s, cfg)
    ds = phi_low_deriv(hs, cfg) * phi_high_deriv(s, cfg)

    r = np.linalg.norm(t, axis=-1)
    denom = r + cfg.eps
    alpha = phi_high(r, cfg) / denom
    dalpha = phi_high_deriv(r, cfg) / denom - phi_high(r, cfg) / denom**2
    # alpha'(r) r t_hat t_hat^T == alpha'(r) t t^T / r
    with np.errstate(invalid="ignore", divide="ignore"):
        coef = np.where(r > 0, dalpha / r, 0.0)
    jt = alpha[..., None, None] * np.eye(5) + coef[..., None, None] * (t[..., :, None] * t[..., None, :])
    return ds, jt


def damp_coeffs_dirderiv(z, dz, cfg: DamperConfig = DEFAULT_DAMPER):
    """Jacobian-vector product of ``damp_coeffs`` at ``z`` along ``dz``."""
    dz = np.asarray(dz, dtype=float)
    ds, jt = damp_coeffs_jacobian(z, cfg)
    out = np.empty(np.broadcast_shapes(np.shape(z), dz.shape))
    out[..., 0] = ds * dz[..., 0]
    out[..., 1:] = np.einsum("...ab,...b->...a", jt, dz[..., 1:])
    return out
