"""
Training loop, evaluation, equivariance verification and report emission.

Training works on precomputed per-atom design arrays (see ``toymodel``), so
one optimizer step is a handful of dense numpy contractions plus the
evidential head's analytic gradient.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import linalg3, metrics, toymodel
from .config import RunConfig, TrainConfig
from .errors import ExpOverflow, NotPositiveDefinite, NumericalError
from .evidential import (
    LossWeights,
    build_sigma0,
    decompose_uncertainty,
    evidential_output,
    loss_and_grad,
    predictive,
    total_loss,
)
from .stabilizer import DamperConfig

WARM_START_RIDGE = 1e-8

# -- optimizer -------------------------------------------------------------------------


class AdamW:
    """Adaptive moment estimation with decoupled weight decay on a flat parameter vector."""

    def __init__(self, size, lr, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.lr = float(lr)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, x, g):
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * g
        self.v = self.beta2 * self.v + (1 - self.beta2) * g * g
        mhat = self.m / (1 - self.beta1**self.t)
        vhat = self.v / (1 - self.beta2**self.t)
        x = x - self.lr * self.weight_decay * x
        return x - self.lr * mhat / (np.sqrt(vhat) + self.eps)


class PlateauScheduler:
    """Multiply the step size by ``factor`` once the monitored loss has not improved for ``patience`` epochs."""

    def __init__(self, opt: AdamW, factor=0.85, patience=50, min_lr=0.0):
        self.opt = opt
        self.factor = factor
        self.patience = patience
        self.min_lr = min_lr
        self.best = math.inf
        self.bad = 0

    def update(self, loss):
        if loss < self.best:
            self.best = loss
            self.bad = 0
            return
        self.bad += 1
        if self.bad > self.patience:
            self.opt.lr = max(self.opt.lr * self.factor, self.min_lr)
            self.bad = 0


# -- reports ---------------------------------------------------------------------------


@dataclass
class RunReport:
    epochs: list = field(default_factory=list)  # {epoch, train_loss, val_loss, lr}
    condition: list = field(default_factory=list)  # {step, mean, min, max}
    failure: dict | None = None
    evaluations: dict = field(default_factory=dict)
    equivariance: dict | None = None

    def to_dict(self):
        return asdict(self)

    @property
    def max_condition_ratio(self):
        vals = [row["max"] for row in self.condition]
        return max(vals) if vals else float("nan")

    def condition_to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "mean", "min", "max"])
            for row in self.condition:
                w.writerow([row["step"], repr(row["mean"]), repr(row["min"]), repr(row["max"])])


class TrainingAborted(RuntimeError):
    """Training hit a numerical failure. ``report`` holds everything logged up to it."""

    def __init__(self, cause: NumericalError, report: RunReport, params):
        super().__init__(f"{type(cause).__name__}: {cause}")
        self.cause = cause
        self.report = report
        self.params = params


def write_json(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True, allow_nan=True)
        fh.write("\n")


# -- training --------------------------------------------------------------------------


def _atom_slices(feat: toymodel.Features):
    starts = np.concatenate([[0], np.cumsum(feat.counts)])
    return [np.arange(starts[c], starts[c + 1]) for c in range(len(feat.counts))]


def _batch(feat: toymodel.Features, slices, cfg_idx):
    atom_idx = np.concatenate([slices[c] for c in cfg_idx])
    counts = feat.counts[cfg_idx]
    return toymodel.Features(
        force_design=feat.force_design[atom_idx],
        invariant=feat.invariant[atom_idx],
        aniso_design=feat.aniso_design[atom_idx],
        energy_design=feat.energy_design[cfg_idx],
        groups=np.repeat(np.arange(len(cfg_idx)), counts),
        forces=feat.forces[atom_idx],
        energy=feat.energy[cfg_idx],
        counts=counts,
    )


def warm_start_energy(feat: toymodel.Features, params: toymodel.ModelParams, ridge=WARM_START_RIDGE):
    """Ridge least-squares fit of the pair-energy weights to the reference forces.

    The energy weights enter the forces linearly, so this is the Gaussian
    maximum-likelihood mean under isotropic noise, lightly regularized
    (``ridge`` times the mean diagonal of the normal matrix) to avoid
    cancelling coefficient combinations. The other heads are untouched.
    """
    k = params.n_rbf
    a = feat.force_design.reshape(-1, k)
    b = feat.forces.reshape(-1)
    ata = a.T @ a
    alpha = ridge * np.trace(ata) / k
    w = np.linalg.solve(ata + alpha * np.eye(k), a.T @ b)
    out = toymodel.ModelParams(**{**params.__dict__})
    out.w_energy = w
    return out


def _loss_on(feat, params, weights, damper, damp):
    raw = toymodel.head_outputs_from_features(feat, params)
    e_pred = toymodel.predict_energy(feat, params)
    return total_loss(feat.forces, raw, e_pred, feat.energy, feat.groups, weights, damper, damp).total


def _condition_stats(z, damper, damp):
    """Batch condition-ratio statistics of ``sigma0``; ``inf`` if the exponential overflows."""
    try:
        sigma0 = build_sigma0(z, damper, damp)
    except ExpOverflow:
        return {"mean": math.inf, "min": math.inf, "max": math.inf}, None
    ratio = linalg3.condition_ratio(sigma0)
    return {"mean": float(np.mean(ratio)), "min": float(np.min(ratio)), "max": float(np.max(ratio))}, sigma0


def initial_params(tc: TrainConfig, rng: np.random.Generator):
    return toymodel.init_params(rng, tc.n_rbf, tc.cutoff, tc.init_scale, tc.tensor_init_scale)


def train(train_set, val_set, config: RunConfig, params=None):
    """Train the toy model. Returns ``(params, RunReport)``.

    Raises ``TrainingAborted`` on a numerical failure, recording the step and
    the offending batch index in ``report.failure``.
    """
    tc = config.train
    weights, damper, damp = config.loss, config.damper, tc.damper_enabled
    rng = np.random.default_rng(config.seed)
    basis = toymodel.RadialBasis(tc.n_rbf, tc.cutoff)
    feat = toymodel.featurize(train_set, basis)
    val_feat = toymodel.featurize(val_set, basis) if val_set else None
    if params is None:
        params = initial_params(tc, rng)
        if tc.warm_start and tc.epochs > 0:
            params = warm_start_energy(feat, params)
    slices = _atom_slices(feat)
    n_cfg = len(train_set)

    x = params.to_vector()
    opt = AdamW(x.size, tc.lr, (tc.beta1, tc.beta2), tc.adam_eps, tc.weight_decay)
    sched = PlateauScheduler(opt, tc.plateau_factor, tc.plateau_patience, tc.min_lr)
    report = RunReport()
    step = 0
    for epoch in range(tc.epochs):
        order = rng.permutation(n_cfg)
        losses, sizes = [], []
        for b, start in enumerate(range(0, n_cfg, tc.batch_size)):
            if tc.max_steps is not None and step >= tc.max_steps:
                break
            cfg_idx = order[start:start + tc.batch_size]
            bf = _batch(feat, slices, cfg_idx)
            params = params.with_vector(x)
            raw = toymodel.head_outputs_from_features(bf, params)
            stats, _ = _condition_stats(raw.z, damper, damp)
            report.condition.append({"step": step, **stats})
            try:
                if not math.isfinite(stats["max"]):
                    raise ExpOverflow("sigma0 exponential overflowed")
                lb = loss_and_grad(bf.forces, raw, toymodel.predict_energy(bf, params), bf.energy,
                                   bf.groups, weights, damper, damp)
                if not math.isfinite(lb.total):
                    raise NumericalError(f"non-finite loss {lb.total}")
            except NumericalError as exc:
                failure = {"kind": type(exc).__name__, "message": str(exc), "epoch": epoch,
                           "step": step, "batch_index": b}
                if isinstance(exc, NotPositiveDefinite) and exc.index is not None:
                    failure["atom_index"] = [int(i) for i in np.atleast_1d(exc.index)[:10]]
                report.failure = failure
                raise TrainingAborted(exc, report, params) from exc
            g = toymodel.param_gradient(bf, params, lb.head_grad, lb.energy_grad)
            x = opt.step(x, g)
            losses.append(lb.total)
            sizes.append(len(cfg_idx))
            step += 1
        params = params.with_vector(x)
        if not losses:
            break
        train_loss = float(np.average(losses, weights=sizes))
        val_loss = _loss_on(val_feat, params, weights, damper, damp) if val_feat is not None else train_loss
        report.epochs.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss, "lr": opt.lr})
        sched.update(val_loss)
    return params.with_vector(x), report


# -- evaluation -------------------------------------------------------------------------


@dataclass
class Predictions:
    """Per-atom model outputs on a split, flattened over configurations."""

    forces_ref: np.ndarray
    gamma: np.ndarray
    sigma0: np.ndarray
    nu: np.ndarray
    kappa: np.ndarray
    u_ale: np.ndarray
    u_epi: np.ndarray
    u_scalar: np.ndarray
    energy_ref: np.ndarray
    energy_pred: np.ndarray
    counts: np.ndarray

    @property
    def predictive(self):
        from .evidential import EvidentialOutput

        return predictive(EvidentialOutput(self.gamma, self.sigma0, self.nu, self.kappa))


def predict(configs, params: toymodel.ModelParams, damper: DamperConfig, damp=True) -> Predictions:
    feat = toymodel.featurize(configs, params.basis)
    raw = toymodel.head_outputs_from_features(feat, params)
    out = evidential_output(raw, damper, damp)
    unc = decompose_uncertainty(out)
    return Predictions(feat.forces, out.gamma, out.sigma0, out.nu, out.kappa, unc.u_ale, unc.u_epi,
                       unc.u_scalar, feat.energy, toymodel.predict_energy(feat, params), feat.counts)


def evaluate(configs, params, damper, rng: np.random.Generator, damp=True, es_samples=metrics.ES_SAMPLES,
             levels=metrics.DEFAULT_LEVELS) -> metrics.CalibrationReport:
    """Metric suite for the evidential model on a split of configurations."""
    p = predict(configs, params, damper, damp)
    fam = metrics.StudentT.from_predictive(p.predictive)
    rep = metrics.calibration_report(p.forces_ref, p.gamma, fam, p.u_scalar, rng,
                                     levels=levels, n_samples=es_samples)
    rep.extra["energy_mae_per_atom"] = float(np.mean(np.abs(p.energy_pred - p.energy_ref) / p.counts))
    rep.extra["mean_u_scalar"] = float(np.mean(p.u_scalar))
    return rep


def rotate_split(configs, rng: np.random.Generator):
    """Each configuration rotated by its own Haar-random rotation."""
    rots = linalg3.sample_rotation(rng, len(configs))
    return [c.transformed(r) for c, r in zip(configs, rots)]


def spearman_shift(configs, params, damper, rng: np.random.Generator, damp=True):
    """``rho_rot - rho_orig`` for rho = Spearman(u_scalar, |force error|)."""
    def rho(split):
        p = predict(split, params, damper, damp)
        return metrics.spearman(p.u_scalar, np.linalg.norm(p.forces_ref - p.gamma, axis=-1))

    r0 = rho(configs)
    r1 = rho(rotate_split(configs, rng))
    return {"rho_orig": r0, "rho_rot": r1, "delta_rho": r1 - r0}


def principal_alignment(configs, params, damper, damp=True):
    """Per-atom ``|cos|`` between the top eigenvectors of ``U_ale`` and the true noise covariance."""
    p = predict(configs, params, damper, damp)
    true = np.concatenate([c.noise_cov for c in configs])
    v_learned = linalg3.eig_sym3(p.u_ale).vectors[..., :, 2]
    v_true = linalg3.eig_sym3(true).vectors[..., :, 2]
    return np.abs(np.sum(v_learned * v_true, axis=-1))


# -- equivariance -----------------------------------------------------------------------


@dataclass
class EquivarianceRecord:
    max_force_dev: float
    max_cov_dev: float
    force_dev: np.ndarray  # flattened components over all rotations
    cov_dev: np.ndarray

    def summary(self):
        return {"max_abs_force_dev": self.max_force_dev, "max_abs_cov_dev": self.max_cov_dev,
                "n_force_components": int(self.force_dev.size), "n_cov_components": int(self.cov_dev.size)}

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["quantity", "deviation"])
            for v in self.force_dev:
                w.writerow(["force", repr(float(v))])
            for v in self.cov_dev:
                w.writerow(["u_epi", repr(float(v))])

    def histograms(self, bins=41):
        """Symmetric-range histograms of both deviation sets: ``{name: (edges, counts)}``."""
        out = {}
        for name, dev in (("force", self.force_dev), ("u_epi", self.cov_dev)):
            lim = float(np.max(np.abs(dev))) or 1e-300
            counts, edges = np.histogram(dev, bins=bins, range=(-lim, lim))
            out[name] = (edges, counts)
        return out


def histograms_to_csv(hists, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["quantity", "bin_lo", "bin_hi", "count"])
        for name, (edges, counts) in hists.items():
            for lo, hi, c in zip(edges[:-1], edges[1:], counts):
                w.writerow([name, repr(float(lo)), repr(float(hi)), int(c)])


def verify_equivariance(config: toymodel.Configuration, params, damper, n_rotations=300,
                        rng: np.random.Generator | None = None, rotations=None, damp=True):
    """Collect ``F(Rx) - R F(x)`` and ``U_epi(Rx) - R U_epi(x) R^T`` over rotations.

    Rotations are drawn from ``rng`` unless passed explicitly.
    """
    if rotations is None:
        if n_rotations < 1:
            raise ValueError("n_rotations must be >= 1")
        rotations = linalg3.sample_rotation(rng, n_rotations)
    rotations = np.asarray(rotations, dtype=float).reshape(-1, 3, 3)
    base = predict([config], params, damper, damp)
    fdev, udev = [], []
    for r in rotations:
        rot = predict([config.transformed(r)], params, damper, damp)
        fdev.append((rot.gamma - base.gamma @ r.T).ravel())
        udev.append((rot.u_epi - linalg3.rotate_sym(r, base.u_epi)).ravel())
    fdev = np.concatenate(fdev)
    udev = np.concatenate(udev)
    return EquivarianceRecord(float(np.max(np.abs(fdev))), float(np.max(np.abs(udev))), fdev, udev)


# -- ensemble ---------------------------------------------------------------------------


def member_seeds(config: RunConfig):
    return [config.seed + k for k in range(config.ensemble.members)]


def train_ensemble(train_set, val_set, config: RunConfig):
    """Independently trained members differing only in seed. Returns ``[(params, report), ...]``."""
    from dataclasses import replace

    return [train(train_set, val_set, replace(config, seed=s)) for s in member_seeds(config)]


def ensemble_predict(configs, members, damper, damp=True):
    """``(forces_ref, mean, cov)`` over all atoms of ``configs``."""
    from .ensemble import ensemble_stats

    preds = [predict(configs, p, damper, damp) for p in members]
    mean, cov = ensemble_stats(np.stack([p.gamma for p in preds]))
    return preds[0].forces_ref, mean, cov


def evaluate_ensemble(configs, members, damper, sigma_sq, rng: np.random.Generator, damp=True,
                      es_samples=metrics.ES_SAMPLES, levels=metrics.DEFAULT_LEVELS):
    """Gaussian metric suite with covariance ``member spread + sigma_sq I``."""
    from .ensemble import floored

    ref, mean, cov = ensemble_predict(configs, members, damper, damp)
    full = floored(cov, sigma_sq)
    unc = np.sqrt(np.trace(full, axis1=-2, axis2=-1) / 3.0)
    rep = metrics.calibration_report(ref, mean, metrics.Gaussian(full), unc, rng,
                                     levels=levels, n_samples=es_samples)
    rep.extra["sigma_sq"] = float(sigma_sq)
    return rep
