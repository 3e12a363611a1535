"""
Deep-ensemble baseline: member spread as a Gaussian covariance, floored by a
single isotropic variance fitted to hit a target coverage on validation data.
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass

import numpy as np

from . import metrics

SIGMA2_CAP = 1e12
WIDTH_TOL = 1e-10


@dataclass
class EnsembleCalibration:
    sigma_sq: float = 0.0
    p_target: float = 0.9
    tol: float = 0.005
    achieved: float | None = None
    reached: bool = True


def ensemble_stats(members):
    """Mean and population covariance of member predictions ``(K, ..., 3)``."""
    mu = np.asarray(members, dtype=float)
    if mu.ndim < 2 or mu.shape[0] < 2:
        raise ValueError("an ensemble needs at least 2 members")
    if not np.all(np.isfinite(mu)):
        raise ValueError("member predictions must be finite")
    mean = mu.mean(axis=0)
    dev = mu - mean
    cov = np.einsum("k...i,k...j->...ij", dev, dev) / mu.shape[0]
    return mean, cov


def floored(cov, sigma_sq):
    return np.asarray(cov, dtype=float) + sigma_sq * np.eye(3)


def ensemble_pit(e, cov, sigma_sq):
    return metrics.pit_gaussian(e, floored(cov, sigma_sq))


def _coverage(e, cov, sigma_sq, p):
    return metrics.coverage_at(ensemble_pit(e, cov, sigma_sq), p)


def calibrate_sigma2(val_residuals, val_covs, cal: EnsembleCalibration | None = None) -> EnsembleCalibration:
    """Fit ``sigma^2`` so that validation coverage at ``p_target`` matches ``p_target``.

    Coverage is nondecreasing in ``sigma^2``. The upper end starts at 1 and doubles
    until coverage reaches the target (at most ``SIGMA2_CAP``), then bisection runs
    until coverage is within ``tol`` or the bracket is narrower than ``WIDTH_TOL``.
    """
    cal = cal or EnsembleCalibration()
    e = np.asarray(val_residuals, dtype=float)
    cov = np.asarray(val_covs, dtype=float)
    if e.size == 0:
        raise ValueError("calibration needs a nonempty validation set")
    p = cal.p_target

    def done(c):
        return abs(c - p) <= cal.tol

    # sigma^2 = 0 needs a nonsingular member covariance
    try:
        c0 = _coverage(e, cov, 0.0, p)
    except ArithmeticError:
        c0 = None
    if c0 is not None and (done(c0) or c0 > p):
        return EnsembleCalibration(0.0, p, cal.tol, c0, done(c0))

    lo, hi = 0.0, 1.0
    c_hi = _coverage(e, cov, hi, p)
    while c_hi < p and not done(c_hi):
        if hi >= SIGMA2_CAP:
            return EnsembleCalibration(SIGMA2_CAP, p, cal.tol, c_hi, False)
        lo, hi = hi, min(2.0 * hi, SIGMA2_CAP)
        c_hi = _coverage(e, cov, hi, p)
    if done(c_hi):
        return EnsembleCalibration(hi, p, cal.tol, c_hi, True)
    mid, c_mid = hi, c_hi
    while hi - lo > WIDTH_TOL:
        mid = 0.5 * (lo + hi)
        c_mid = _coverage(e, cov, mid, p)
        if done(c_mid):
            break
        if c_mid < p:
            lo = mid
        else:
            hi = mid
    return EnsembleCalibration(mid, p, cal.tol, c_mid, done(c_mid))


# -- manifest -------------------------------------------------------------------------------


def write_manifest(path, member_paths, cal: EnsembleCalibration | None = None):
    base = os.path.dirname(os.path.abspath(path))
    doc = {
        "members": [os.path.relpath(os.path.abspath(m), base) for m in member_paths],
        "calibration": asdict(cal) if cal is not None else None,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def read_manifest(path):
    """Returns ``(member_paths, EnsembleCalibration | None)``; member paths are resolved against the manifest."""
    with open(path) as fh:
        doc = json.load(fh)
    base = os.path.dirname(os.path.abspath(path))
    members = [os.path.join(base, m) for m in doc["members"]]
    cal = doc.get("calibration")
    return members, (EnsembleCalibration(**cal) if cal is not None else None)
