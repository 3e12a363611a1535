"""
Normal-Inverse-Wishart evidential head for 3-D vector targets.

Per-atom quantities are batched along the leading axis: ``gamma`` is
``(n, 3)``, ``sigma0`` is ``(n, 3, 3)``, ``nu``/``kappa`` are ``(n,)`` and the
covariance coefficients ``z`` are ``(n, 6)``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import irreps, linalg3
from .specfun import digamma, ln_gamma, sigmoid, softplus
from .stabilizer import DEFAULT_DAMPER, DamperConfig, damp_coeffs, damp_coeffs_jacobian

D = 3
EPS = 1e-6
_LOG_PI = np.log(np.pi)


@dataclass
class RawHeadOutputs:
    """Unconstrained head outputs for a batch of atoms."""

    gamma: np.ndarray
    nu_hat: np.ndarray
    kappa_hat: np.ndarray
    z: np.ndarray

    def __len__(self):
        return len(self.nu_hat)


@dataclass
class EvidentialOutput:
    gamma: np.ndarray
    sigma0: np.ndarray
    nu: np.ndarray
    kappa: np.ndarray

    @property
    def psi(self):
        return self.nu[..., None, None] * self.sigma0


@dataclass
class PredictiveT:
    """Multivariate Student-t ``St_dof(mean, scale)``."""

    dof: np.ndarray
    scale: np.ndarray


@dataclass
class UncertaintyDecomposition:
    u_ale: np.ndarray
    u_epi: np.ndarray
    u_scalar: np.ndarray


@dataclass(frozen=True)
class LossWeights:
    energy: float = 1.0
    forces: float = 10000.0
    reg: float = 0.1

    def to_dict(self):
        return asdict(self)


@dataclass
class HeadGrad:
    gamma: np.ndarray
    nu_hat: np.ndarray
    kappa_hat: np.ndarray
    z: np.ndarray


@dataclass
class LossBreakdown:
    """Batch loss terms; gradients are filled in by ``loss_and_grad``."""

    nll: float
    reg: float
    energy: float
    total: float
    head_grad: HeadGrad | None = None
    energy_grad: np.ndarray | None = None
    per_atom_nll: np.ndarray = field(default=None, repr=False)


def constrain_scalars(nu_hat, kappa_hat, eps=EPS):
    """``nu = softplus(nu_hat) + d + 2``, ``kappa = softplus(kappa_hat) + eps``."""
    nu = softplus(nu_hat) + (D + 2)
    kappa = softplus(kappa_hat) + eps
    return nu, kappa


def covariance_generator(z, cfg: DamperConfig = DEFAULT_DAMPER, damp=True):
    """The symmetric matrix ``S`` whose exponential is ``sigma0``."""
    zz = damp_coeffs(z, cfg) if damp else np.asarray(z, dtype=float)
    return irreps.coeffs_to_sym(zz)


def build_sigma0(z, cfg: DamperConfig = DEFAULT_DAMPER, damp=True):
    """Damp, map to a symmetric matrix, exponentiate."""
    return linalg3.expm_sym(covariance_generator(z, cfg, damp))


def evidential_output(raw: RawHeadOutputs, cfg: DamperConfig = DEFAULT_DAMPER, damp=True):
    nu, kappa = constrain_scalars(raw.nu_hat, raw.kappa_hat, cfg.eps)
    return EvidentialOutput(
        gamma=np.asarray(raw.gamma, dtype=float),
        sigma0=build_sigma0(raw.z, cfg, damp),
        nu=np.asarray(nu, dtype=float),
        kappa=np.asarray(kappa, dtype=float),
    )


def predictive(out: EvidentialOutput) -> PredictiveT:
    dof = out.nu - D + 1
    pref = out.nu * (out.kappa + 1) / (out.kappa * dof)
    return PredictiveT(dof=dof, scale=pref[..., None, None] * out.sigma0)


def decompose_uncertainty(out: EvidentialOutput) -> UncertaintyDecomposition:
    u_ale = (out.nu / (out.nu - D - 1))[..., None, None] * out.sigma0
    u_epi = u_ale / out.kappa[..., None, None]
    tr = np.trace(u_epi, axis1=-2, axis2=-1)
    return UncertaintyDecomposition(u_ale, u_epi, np.sqrt(tr / 3.0))


def nll(y, out: EvidentialOutput):
    """Per-atom Student-t negative log-likelihood in the expanded form.

    Uses the Mahalanobis form ``1 + kappa/(nu(1+kappa)) * M`` with
    ``M = (y - gamma)^T sigma0^{-1} (y - gamma)``.
    """
    nu, kappa = out.nu, out.kappa
    low = linalg3.factor_spd(out.sigma0)
    v = np.asarray(y, dtype=float) - out.gamma
    m = linalg3.mahalanobis_sq(v, None, low=low)
    a = kappa / (nu * (1 + kappa))
    return (
        ln_gamma((nu - D + 1) / 2)
        - ln_gamma((nu + 1) / 2)
        + 0.5 * D * np.log(np.pi * nu * (1 + kappa) / kappa)
        + 0.5 * linalg3.logdet_spd(None, low=low)
        + 0.5 * (nu + 1) * np.log1p(a * m)
    )


def _det3(a):
    return (
        a[..., 0, 0] * (a[..., 1, 1] * a[..., 2, 2] - a[..., 1, 2] * a[..., 2, 1])
        - a[..., 0, 1] * (a[..., 1, 0] * a[..., 2, 2] - a[..., 1, 2] * a[..., 2, 0])
        + a[..., 0, 2] * (a[..., 1, 0] * a[..., 2, 1] - a[..., 1, 1] * a[..., 2, 0])
    )


def nll_logdet_form(y, out: EvidentialOutput):
    """The same likelihood through explicit determinants of ``sigma0`` and its rank-one update.

    ``-nu/2 log|sigma0| + (nu+1)/2 log|sigma0 + a v v^T|`` with no inverse or
    factorization; kept as an independent cross-check of ``nll``.
    """
    nu, kappa = out.nu, out.kappa
    v = np.asarray(y, dtype=float) - out.gamma
    a = kappa / (nu * (1 + kappa))
    updated = out.sigma0 + a[..., None, None] * v[..., :, None] * v[..., None, :]
    return (
        ln_gamma((nu - D + 1) / 2)
        - ln_gamma((nu + 1) / 2)
        + 0.5 * D * np.log(nu * np.pi * (1 + kappa) / kappa)
        - 0.5 * nu * np.log(_det3(out.sigma0))
        + 0.5 * (nu + 1) * np.log(_det3(updated))
    )


def reg_loss(y, gamma, nu, kappa):
    """Evidence penalty ``(nu + kappa) * |y - gamma|``."""
    r = np.linalg.norm(np.asarray(y, dtype=float) - gamma, axis=-1)
    return (nu + kappa) * r


def sample_predictive(pred: PredictiveT, gamma, rng: np.random.Generator, n: int):
    """Draw ``n`` samples per atom: ``gamma + L g sqrt(dof / w)``, ``w ~ chi2(dof)``.

    Returns an array of shape ``(n,) + gamma.shape``.
    """
    gamma = np.asarray(gamma, dtype=float)
    low = linalg3.factor_spd(pred.scale)
    g = rng.standard_normal((n,) + gamma.shape)
    w = rng.chisquare(np.broadcast_to(pred.dof, (n,) + gamma.shape[:-1]))
    scale = np.sqrt(pred.dof / w)
    return gamma + scale[..., None] * np.einsum("...ij,...j->...i", low, g)


def head_loss_and_grad(y, raw: RawHeadOutputs, cfg: DamperConfig = DEFAULT_DAMPER,
                       reg_weight=0.1, damp=True):
    """Per-atom NLL, regularizer and the gradient of ``nll + reg_weight * reg``.

    Returns ``(nll_i, reg_i, HeadGrad)``; gradients are with respect to the raw
    (unconstrained, undamped) head outputs.
    """
    y = np.asarray(y, dtype=float)
    gamma = np.asarray(raw.gamma, dtype=float)
    nu_hat = np.asarray(raw.nu_hat, dtype=float)
    kappa_hat = np.asarray(raw.kappa_hat, dtype=float)
    z = np.asarray(raw.z, dtype=float)

    nu, kappa = constrain_scalars(nu_hat, kappa_hat, cfg.eps)
    zt = damp_coeffs(z, cfg) if damp else z
    s = irreps.coeffs_to_sym(zt)
    eig = linalg3.eig_sym3(s)
    sigma0 = linalg3.expm_from_eig(eig)
    low = linalg3.factor_spd(sigma0)

    v = y - gamma
    x = linalg3.spd_solve(None, v, low=low)
    m = np.sum(v * x, axis=-1)
    a = kappa / (nu * (1 + kappa))
    q = 1.0 + a * m
    half_nu1 = 0.5 * (nu + 1)

    nll_i = (
        ln_gamma((nu - D + 1) / 2)
        - ln_gamma((nu + 1) / 2)
        + 0.5 * D * np.log(np.pi * nu * (1 + kappa) / kappa)
        + 0.5 * linalg3.logdet_spd(None, low=low)
        + half_nu1 * np.log(q)
    )
    r = np.linalg.norm(v, axis=-1)
    reg_i = (nu + kappa) * r

    # d nll / d M
    dm = half_nu1 * a / q
    g_gamma = -2.0 * dm[..., None] * x
    g_sigma0 = -dm[..., None, None] * linalg3.outer(x)
    # log|exp(S)| = tr(S)
    g_s = linalg3.expm_dirderiv(s, g_sigma0, eig=eig) + 0.5 * np.eye(3)
    g_zt = irreps.sym_to_coeffs(g_s)
    if damp:
        ds, jt = damp_coeffs_jacobian(z, cfg)
        g_z = np.empty_like(g_zt)
        g_z[..., 0] = ds * g_zt[..., 0]
        g_z[..., 1:] = np.einsum("...ab,...b->...a", jt, g_zt[..., 1:])
    else:
        g_z = g_zt

    g_nu = (
        0.5 * digamma((nu - D + 1) / 2)
        - 0.5 * digamma((nu + 1) / 2)
        + 0.5 * D / nu
        + 0.5 * np.log(q)
        - half_nu1 * a * m / (nu * q)
    )
    g_kappa = 0.5 * D * (1.0 / (1 + kappa) - 1.0 / kappa) + half_nu1 * m / (nu * (1 + kappa) ** 2 * q)

    # reg; subgradient 0 at y == gamma
    g_nu = g_nu + reg_weight * r
    g_kappa = g_kappa + reg_weight * r
    with np.errstate(invalid="ignore", divide="ignore"):
        unit = np.where(r[..., None] > 0, v / r[..., None], 0.0)
    g_gamma = g_gamma - reg_weight * (nu + kappa)[..., None] * unit

    grad = HeadGrad(
        gamma=g_gamma,
        nu_hat=g_nu * sigmoid(nu_hat),
        kappa_hat=g_kappa * sigmoid(kappa_hat),
        z=g_z,
    )
    return nll_i, reg_i, grad


def _group_means(values, groups, n_groups):
    sums = np.bincount(groups, weights=values, minlength=n_groups)
    counts = np.bincount(groups, minlength=n_groups)
    return sums / counts, counts


def _assemble(nll_i, reg_i, energy_pred, energy_ref, groups, weights: LossWeights):
    groups = np.asarray(groups, dtype=np.int64)
    energy_pred = np.atleast_1d(np.asarray(energy_pred, dtype=float))
    energy_ref = np.atleast_1d(np.asarray(energy_ref, dtype=float))
    n_cfg = energy_pred.shape[0]
    nll_c, counts = _group_means(nll_i, groups, n_cfg)
    reg_c, _ = _group_means(reg_i, groups, n_cfg)
    de = (energy_pred - energy_ref) / counts
    energy_c = de * de
    total_c = weights.energy * energy_c + weights.forces * (nll_c + weights.reg * reg_c)
    return nll_c, reg_c, energy_c, total_c, counts, de


def total_loss(y, raw: RawHeadOutputs, energy_pred, energy_ref, groups,
               weights: LossWeights = LossWeights(), cfg: DamperConfig = DEFAULT_DAMPER, damp=True):
    """Batch loss: per configuration ``w_E * ((E - E_ref)/N)^2 + w_F * mean_i(nll_i + w_reg * reg_i)``,
    then averaged over configurations.

    ``groups[i]`` is the configuration index of atom ``i``.
    """
    out = evidential_output(raw, cfg, damp)
    nll_i = nll(y, out)
    reg_i = reg_loss(y, out.gamma, out.nu, out.kappa)
    nll_c, reg_c, energy_c, total_c, _, _ = _assemble(nll_i, reg_i, energy_pred, energy_ref, groups, weights)
    return LossBreakdown(
        nll=float(np.mean(nll_c)), reg=float(np.mean(reg_c)), energy=float(np.mean(energy_c)),
        total=float(np.mean(total_c)), per_atom_nll=nll_i,
    )


def loss_and_grad(y, raw: RawHeadOutputs, energy_pred, energy_ref, groups,
                  weights: LossWeights = LossWeights(), cfg: DamperConfig = DEFAULT_DAMPER, damp=True):
    """``total_loss`` together with its gradient w.r.t. every raw head output and each predicted energy."""
    groups = np.asarray(groups, dtype=np.int64)
    nll_i, reg_i, g = head_loss_and_grad(y, raw, cfg, weights.reg, damp)
    nll_c, reg_c, energy_c, total_c, counts, de = _assemble(
        nll_i, reg_i, energy_pred, energy_ref, groups, weights)
    n_cfg = len(counts)
    atom_scale = (weights.forces / (counts * n_cfg))[groups]
    head_grad = HeadGrad(
        gamma=g.gamma * atom_scale[:, None],
        nu_hat=g.nu_hat * atom_scale,
        kappa_hat=g.kappa_hat * atom_scale,
        z=g.z * atom_scale[:, None],
    )
    energy_grad = weights.energy * 2.0 * de / counts / n_cfg
    return LossBreakdown(
        nll=float(np.mean(nll_c)), reg=float(np.mean(reg_c)), energy=float(np.mean(energy_c)),
        total=float(np.mean(total_c)), head_grad=head_grad, energy_grad=energy_grad,
        per_atom_nll=nll_i,
    )
