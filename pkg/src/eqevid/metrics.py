"""
Distribution-aware evaluation of 3-D predictive distributions.

PIT values map each residual to ``(0, 1)`` through the CDF of its squared
Mahalanobis norm: chi-square(3) for Gaussians, F(3, dof) after dividing by 3
for Student-t. Everything else (coverage curve, calibration error, NLL, energy
score, Spearman) is built on top.
"""
from __future__ import annotations

import csv
import json
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from . import linalg3
from .evidential import PredictiveT, sample_predictive
from .specfun import chi2_cdf, f_cdf, ln_gamma

DEFAULT_GRID = np.round(np.arange(1, 100) / 100.0, 2)
DEFAULT_LEVELS = (0.8, 0.9, 0.95)
ES_SAMPLES = 128
_LOG_2PI = np.log(2.0 * np.pi)


@dataclass
class Gaussian:
    cov: np.ndarray


@dataclass
class StudentT:
    dof: np.ndarray
    scale: np.ndarray

    @classmethod
    def from_predictive(cls, pred: PredictiveT):
        return cls(pred.dof, pred.scale)


def pit_gaussian(e, cov):
    """``F_chi2(3)(e^T cov^{-1} e)``."""
    return chi2_cdf(linalg3.mahalanobis_sq(e, cov), 3)


def pit_student(e, pred):
    """``F_F(3, dof)(e^T scale^{-1} e / 3)``."""
    m2 = linalg3.mahalanobis_sq(e, pred.scale)
    return f_cdf(m2 / 3.0, 3, pred.dof)


def pit(e, family):
    if isinstance(family, Gaussian):
        return pit_gaussian(e, family.cov)
    return pit_student(e, family)


def calibration_curve(u, grid=DEFAULT_GRID):
    """Empirical coverage ``Obs(p) = mean(u <= p)`` at each grid level."""
    u = np.sort(np.ravel(np.asarray(u, dtype=float)))
    if u.size == 0:
        raise ValueError("calibration curve needs at least one PIT value")
    grid = np.asarray(grid, dtype=float)
    return np.searchsorted(u, grid, side="right") / u.size


def ce_l1(obs, grid=DEFAULT_GRID):
    return float(np.mean(np.abs(np.asarray(obs) - np.asarray(grid))))


def coverage_at(u, p_star):
    return float(calibration_curve(u, [p_star])[0])


def nll_score(e, family):
    """Mean negative log density of the residuals under ``family``."""
    e = np.asarray(e, dtype=float)
    if isinstance(family, Gaussian):
        low = linalg3.factor_spd(family.cov)
        m2 = linalg3.mahalanobis_sq(e, None, low=low)
        nl = 0.5 * (3 * _LOG_2PI + linalg3.logdet_spd(None, low=low) + m2)
    else:
        low = linalg3.factor_spd(family.scale)
        m2 = linalg3.mahalanobis_sq(e, None, low=low)
        dof = np.asarray(family.dof, dtype=float)
        nl = (ln_gamma(0.5 * dof) - ln_gamma(0.5 * (dof + 3)) + 1.5 * np.log(dof * np.pi)
              + 0.5 * linalg3.logdet_spd(None, low=low) + 0.5 * (dof + 3) * np.log1p(m2 / dof))
    return float(np.mean(nl))


def sample_family(family, mean, rng: np.random.Generator, n: int):
    mean = np.asarray(mean, dtype=float)
    if isinstance(family, Gaussian):
        low = linalg3.factor_spd(family.cov)
        g = rng.standard_normal((n,) + mean.shape)
        return mean + np.einsum("...ij,...j->...i", low, g)
    return sample_predictive(PredictiveT(family.dof, family.scale), mean, rng, n)


def energy_score(y, mean, family, rng: np.random.Generator, n_samples=ES_SAMPLES):
    """Monte Carlo energy score ``E|X - y| - E|X - X'|/2``, averaged over residuals.

    Two independent sample streams of size ``n_samples`` are drawn per residual.
    """
    if n_samples < 2:
        raise ValueError("energy score needs n_samples >= 2")
    y = np.asarray(y, dtype=float)
    x = sample_family(family, mean, rng, n_samples)
    x2 = sample_family(family, mean, rng, n_samples)
    term1 = np.mean(np.linalg.norm(x - y, axis=-1), axis=0)
    term2 = np.mean(np.linalg.norm(x - x2, axis=-1), axis=0)
    return float(np.mean(term1 - 0.5 * term2))


def midranks(a):
    """1-based ranks with ties sharing the average rank."""
    a = np.asarray(a, dtype=float)
    order = np.argsort(a, kind="mergesort")
    sorted_a = a[order]
    ranks = np.empty(len(a))
    # boundaries of tie blocks
    edges = np.flatnonzero(np.diff(sorted_a)) + 1
    starts = np.concatenate([[0], edges])
    ends = np.concatenate([edges, [len(a)]])
    avg = 0.5 * (starts + ends - 1) + 1.0
    ranks[order] = np.repeat(avg, ends - starts)
    return ranks


class DegenerateInput(UserWarning):
    pass


def spearman(a, b, return_flag=False):
    """Spearman rank correlation with midranks for ties.

    A constant input has no defined correlation; 0 is returned with a
    ``DegenerateInput`` warning (and ``flag=True`` when ``return_flag``).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1 or len(a) < 2:
        raise ValueError("spearman needs two 1-D arrays of equal length >= 2")
    ra, rb = midranks(a), midranks(b)
    ra -= ra.mean()
    rb -= rb.mean()
    denom = np.sqrt(np.sum(ra * ra) * np.sum(rb * rb))
    if denom == 0:
        warnings.warn("constant input to spearman; returning 0", DegenerateInput, stacklevel=2)
        return (0.0, True) if return_flag else 0.0
    rho = float(np.clip(np.sum(ra * rb) / denom, -1.0, 1.0))
    return (rho, False) if return_flag else rho


@dataclass
class CalibrationReport:
    grid: list
    obs: list
    ce_l1: float
    coverage: dict
    nll: float
    energy_score: float
    spearman: float
    force_mae: float | None = None
    spearman_degenerate: bool = False
    n: int = 0
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["coverage"] = {str(k): v for k, v in d["coverage"].items()}
        return cls(**d)

    def curve_to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["p", "obs"])
            for p, o in zip(self.grid, self.obs):
                w.writerow([repr(float(p)), repr(float(o))])


def calibration_report(y, mean, family, uncertainty, rng: np.random.Generator,
                       grid=DEFAULT_GRID, levels=DEFAULT_LEVELS, n_samples=ES_SAMPLES):
    """Full metric suite for residuals ``y - mean`` under ``family``.

    ``uncertainty`` is the per-residual scalar ranked against the error norm.
    """
    y = np.asarray(y, dtype=float)
    mean = np.asarray(mean, dtype=float)
    e = y - mean
    u = pit(e, family)
    obs = calibration_curve(u, grid)
    err = np.linalg.norm(e, axis=-1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateInput)
        rho, flag = spearman(uncertainty, err, return_flag=True)
    return CalibrationReport(
        grid=[float(p) for p in grid],
        obs=[float(o) for o in obs],
        ce_l1=ce_l1(obs, grid),
        coverage={str(p): coverage_at(u, p) for p in levels},
        nll=nll_score(e, family),
        energy_score=energy_score(y, mean, family, rng, n_samples),
        spearman=rho,
        force_mae=float(np.mean(np.abs(e))),
        spearman_degenerate=flag,
        n=int(len(e)),
    )
