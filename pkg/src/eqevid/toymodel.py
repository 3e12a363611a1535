"""
Desk-scale equivariant force field with an evidential head, and synthetic data.

The model is pairwise. With ``b_k(r)`` Gaussian radial functions times a
cosine envelope, ``e_ij`` the unit vector from atom i to atom j, and
``c_m = sum_k P_km b_k`` the same functions recombined so that their radial
derivatives are orthonormal on ``[R_LOW, cutoff]``:

    E        = sum_{i<j} phi(r_ij),  phi = sum_m wE_m c_m
    gamma_i  = -dE/dx_i = sum_j phi'(r_ij) e_ij
    s_i      = w_iso . g_i + b_iso,      g_i = sum_j b(r_ij)
    t_i      = l=2 coeffs of sum_j (w_aniso . b(r_ij)) (e_ij e_ij^T - I/3)
    nu_hat_i = w_nu . g_i + b_nu,        kappa_hat_i = w_kappa . g_i + b_kappa

Every head output is linear in the parameters given per-atom design arrays,
which ``featurize`` computes once per configuration.
"""
from __future__ import annotations

import json
from functools import lru_cache
from dataclasses import dataclass, field, fields

import numpy as np

from . import irreps, linalg3
from .evidential import RawHeadOutputs

CHECKPOINT_VERSION = 1
MIN_DISTANCE = 0.1
#: Lower end of the range on which the energy basis is orthonormalized.
R_LOW = 0.75
_ORTHO_POINTS = 4001
_ORTHO_FLOOR = 1e-12

# -- configurations -----------------------------------------------------------


@dataclass
class Configuration:
    species: np.ndarray
    positions: np.ndarray
    energy: float
    forces: np.ndarray
    noise_cov: np.ndarray | None = None

    def __post_init__(self):
        self.species = np.asarray(self.species, dtype=np.int64)
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        self.forces = np.asarray(self.forces, dtype=float).reshape(-1, 3)
        self.energy = float(self.energy)
        if self.noise_cov is not None:
            self.noise_cov = np.asarray(self.noise_cov, dtype=float).reshape(-1, 3, 3)
        n = len(self.species)
        if self.positions.shape[0] != n or self.forces.shape[0] != n:
            raise ValueError("species, positions and forces must have the same length")
        if self.noise_cov is not None and self.noise_cov.shape[0] != n:
            raise ValueError("noise_cov must have one matrix per atom")
        if not (np.all(np.isfinite(self.positions)) and np.all(np.isfinite(self.forces))
                and np.isfinite(self.energy)):
            raise ValueError("configuration contains non-finite values")
        if n > 1:
            d = np.linalg.norm(self.positions[:, None] - self.positions[None], axis=-1)
            d[np.diag_indices(n)] = np.inf
            if d.min() < MIN_DISTANCE:
                raise ValueError(f"atoms closer than {MIN_DISTANCE}")

    def __len__(self):
        return len(self.species)

    def to_dict(self):
        out = {
            "species": [int(s) for s in self.species],
            "positions": self.positions.tolist(),
            "energy": self.energy,
            "forces": self.forces.tolist(),
        }
        if self.noise_cov is not None:
            out["noise_cov"] = self.noise_cov.tolist()
        return out

    @classmethod
    def from_dict(cls, d):
        return cls(d["species"], d["positions"], d["energy"], d["forces"], d.get("noise_cov"))

    def transformed(self, rot=None, shift=None):
        """Rigidly rotated/translated copy; forces and covariances rotate with it."""
        rot = np.eye(3) if rot is None else np.asarray(rot, dtype=float)
        shift = np.zeros(3) if shift is None else np.asarray(shift, dtype=float)
        cov = None if self.noise_cov is None else linalg3.rotate_sym(rot, self.noise_cov)
        return Configuration(self.species.copy(), self.positions @ rot.T + shift, self.energy,
                             self.forces @ rot.T, cov)


def write_jsonl(configs, path):
    with open(path, "w") as fh:
        for c in configs:
            fh.write(json.dumps(c.to_dict()) + "\n")


def read_jsonl(path):
    with open(path) as fh:
        return [Configuration.from_dict(json.loads(line)) for line in fh if line.strip()]


# -- radial basis ---------------------------------------------------------------


@dataclass(frozen=True)
class RadialBasis:
    """Gaussians on ``[0, cutoff]`` with shared width (the center spacing), times a cosine envelope."""

    n_rbf: int = 32
    cutoff: float = 5.0

    @property
    def centers(self):
        return np.linspace(0.0, self.cutoff, self.n_rbf)

    @property
    def width(self):
        return self.cutoff / max(self.n_rbf - 1, 1)

    def __call__(self, r):
        """Basis values and radial derivatives, each ``r.shape + (n_rbf,)``."""
        r = np.asarray(r, dtype=float)[..., None]
        inside = r < self.cutoff
        env = np.where(inside, 0.5 * (np.cos(np.pi * r / self.cutoff) + 1.0), 0.0)
        denv = np.where(inside, -0.5 * np.pi / self.cutoff * np.sin(np.pi * r / self.cutoff), 0.0)
        u = (r - self.centers) / self.width
        gauss = np.exp(-u * u)
        dgauss = -2.0 * u / self.width * gauss
        return gauss * env, dgauss * env + gauss * denv

    @property
    def energy_transform(self):
        """``P`` such that the derivatives of ``b @ P`` are orthonormal on ``[R_LOW, cutoff]``."""
        return _energy_transform(self.n_rbf, float(self.cutoff))

    def energy_functions(self, r):
        """Orthonormalized pair-energy functions and their derivatives."""
        b, db = self(r)
        p = self.energy_transform
        return b @ p, db @ p


@lru_cache(maxsize=16)
def _energy_transform(n_rbf, cutoff):
    r = np.linspace(min(R_LOW, 0.5 * cutoff), cutoff, _ORTHO_POINTS)
    _, db = RadialBasis(n_rbf, cutoff)(r)
    wts = np.full(len(r), r[1] - r[0])
    wts[[0, -1]] *= 0.5
    gram = db.T @ (db * wts[:, None])
    w, v = np.linalg.eigh(gram)
    w = np.maximum(w, _ORTHO_FLOOR * w[-1])
    p = v / np.sqrt(w)
    p.flags.writeable = False
    return p


# -- parameters ------------------------------------------------------------------


@dataclass
class ModelParams:
    w_energy: np.ndarray
    w_iso: np.ndarray
    b_iso: float
    w_aniso: np.ndarray
    w_nu: np.ndarray
    b_nu: float
    w_kappa: np.ndarray
    b_kappa: float
    cutoff: float = 5.0

    @property
    def n_rbf(self):
        return len(self.w_energy)

    @property
    def basis(self):
        return RadialBasis(self.n_rbf, self.cutoff)

    def _array_fields(self):
        return [f.name for f in fields(self) if f.name != "cutoff"]

    def to_vector(self):
        return np.concatenate([np.atleast_1d(np.asarray(getattr(self, k), dtype=float))
                               for k in self._array_fields()])

    def with_vector(self, vec):
        vec = np.asarray(vec, dtype=float)
        k = self.n_rbf
        out, pos = {}, 0
        for name in self._array_fields():
            size = 1 if name.startswith("b_") else k
            chunk = vec[pos:pos + size].copy()
            out[name] = float(chunk[0]) if size == 1 else chunk
            pos += size
        return ModelParams(cutoff=self.cutoff, **out)

    def to_dict(self):
        d = {name: (getattr(self, name) if name.startswith("b_") else getattr(self, name).tolist())
             for name in self._array_fields()}
        d["cutoff"] = self.cutoff
        return d

    @classmethod
    def from_dict(cls, d):
        kw = {k: (float(v) if k.startswith("b_") or k == "cutoff" else np.asarray(v, dtype=float))
              for k, v in d.items()}
        return cls(**kw)


def init_params(rng: np.random.Generator, n_rbf=32, cutoff=5.0, scale=0.1, tensor_scale=1.0):
    """Small random weights; ``tensor_scale`` multiplies the covariance-head weights."""
    def w():
        return scale * rng.standard_normal(n_rbf)

    return ModelParams(
        w_energy=w(),
        w_iso=tensor_scale * w(),
        b_iso=0.0,
        w_aniso=tensor_scale * w(),
        w_nu=w(),
        b_nu=0.0,
        w_kappa=w(),
        b_kappa=0.0,
        cutoff=cutoff,
    )


# -- features ----------------------------------------------------------------------


def _traceless_coeffs(unit):
    """l=2 coefficients of ``e e^T - I/3`` for unit vectors ``(..., 3)``."""
    m = linalg3.outer(unit) - np.eye(3) / 3.0
    return irreps.sym_to_coeffs(m)[..., 1:]


def neighbor_pairs(positions, cutoff):
    """Ordered pairs ``(i, j)``, ``i != j``, within the cutoff; returns ``i, j, r, e_ij``."""
    pos = np.asarray(positions, dtype=float)
    n = len(pos)
    diff = pos[None, :, :] - pos[:, None, :]  # x_j - x_i
    dist = np.linalg.norm(diff, axis=-1)
    mask = (dist < cutoff) & ~np.eye(n, dtype=bool)
    i, j = np.nonzero(mask)
    r = dist[i, j]
    return i, j, r, diff[i, j] / r[:, None]


@dataclass
class Features:
    """Per-atom design arrays for a batch of configurations."""

    force_design: np.ndarray  # (A, 3, K)
    invariant: np.ndarray  # (A, K)
    aniso_design: np.ndarray  # (A, 5, K)
    energy_design: np.ndarray  # (C, K)
    groups: np.ndarray  # (A,)
    forces: np.ndarray  # (A, 3) reference labels
    energy: np.ndarray  # (C,)
    counts: np.ndarray = field(default=None)

    @property
    def n_atoms(self):
        return len(self.groups)


def featurize_one(config: Configuration, basis: RadialBasis):
    n = len(config)
    k = basis.n_rbf
    i, j, r, unit = neighbor_pairs(config.positions, basis.cutoff)
    b, _ = basis(r)
    c, dc = basis.energy_functions(r)
    fd = np.zeros((n, 3, k))
    np.add.at(fd, i, unit[:, :, None] * dc[:, None, :])
    inv = np.zeros((n, k))
    np.add.at(inv, i, b)
    ad = np.zeros((n, 5, k))
    np.add.at(ad, i, _traceless_coeffs(unit)[:, :, None] * b[:, None, :])
    ed = 0.5 * c.sum(axis=0)
    return fd, inv, ad, ed


def featurize(configs, basis: RadialBasis) -> Features:
    parts = [featurize_one(c, basis) for c in configs]
    counts = np.array([len(c) for c in configs], dtype=np.int64)
    return Features(
        force_design=np.concatenate([p[0] for p in parts]),
        invariant=np.concatenate([p[1] for p in parts]),
        aniso_design=np.concatenate([p[2] for p in parts]),
        energy_design=np.stack([p[3] for p in parts]),
        groups=np.repeat(np.arange(len(configs)), counts),
        forces=np.concatenate([c.forces for c in configs]),
        energy=np.array([c.energy for c in configs]),
        counts=counts,
    )


def subset(feat: Features, cfg_idx):
    """Features restricted to the configurations ``cfg_idx`` (renumbered in that order)."""
    cfg_idx = np.asarray(cfg_idx, dtype=np.int64)
    starts = np.concatenate([[0], np.cumsum(feat.counts)])
    atom_idx = np.concatenate([np.arange(starts[c], starts[c + 1]) for c in cfg_idx])
    counts = feat.counts[cfg_idx]
    return Features(
        force_design=feat.force_design[atom_idx],
        invariant=feat.invariant[atom_idx],
        aniso_design=feat.aniso_design[atom_idx],
        energy_design=feat.energy_design[cfg_idx],
        groups=np.repeat(np.arange(len(cfg_idx)), counts),
        forces=feat.forces[atom_idx],
        energy=feat.energy[cfg_idx],
        counts=counts,
    )


# -- model evaluation ------------------------------------------------------------


def predict_energy(feat: Features, params: ModelParams):
    return feat.energy_design @ params.w_energy


def head_outputs_from_features(feat: Features, params: ModelParams) -> RawHeadOutputs:
    g = feat.invariant
    s = g @ params.w_iso + params.b_iso
    t = feat.aniso_design @ params.w_aniso
    return RawHeadOutputs(
        gamma=feat.force_design @ params.w_energy,
        nu_hat=g @ params.w_nu + params.b_nu,
        kappa_hat=g @ params.w_kappa + params.b_kappa,
        z=np.concatenate([s[:, None], t], axis=1),
    )


def energy(config: Configuration, params: ModelParams) -> float:
    """Pairwise model energy of one configuration."""
    _, _, _, ed = featurize_one(config, params.basis)
    return float(ed @ params.w_energy)


def forces(config: Configuration, params: ModelParams):
    """Conservative model forces ``-grad E``, shape ``(N, 3)``."""
    fd, _, _, _ = featurize_one(config, params.basis)
    return fd @ params.w_energy


def head_outputs(config: Configuration, params: ModelParams) -> RawHeadOutputs:
    return head_outputs_from_features(featurize([config], params.basis), params)


def param_gradient(feat: Features, params: ModelParams, head_grad, energy_grad):
    """Pull per-atom head gradients and per-configuration energy gradients back to a parameter vector."""
    g = feat.invariant
    gz = head_grad.z
    grads = ModelParams(
        w_energy=np.einsum("aik,ai->k", feat.force_design, head_grad.gamma) + feat.energy_design.T @ energy_grad,
        w_iso=g.T @ gz[:, 0],
        b_iso=float(np.sum(gz[:, 0])),
        w_aniso=np.einsum("aik,ai->k", feat.aniso_design, gz[:, 1:]),
        w_nu=g.T @ head_grad.nu_hat,
        b_nu=float(np.sum(head_grad.nu_hat)),
        w_kappa=g.T @ head_grad.kappa_hat,
        b_kappa=float(np.sum(head_grad.kappa_hat)),
        cutoff=params.cutoff,
    )
    return grads.to_vector()


# -- synthetic data -----------------------------------------------------------------


@dataclass
class DataSpec:
    n_configs: int = 2000
    atoms_min: int = 8
    atoms_max: int = 32
    radius: float = 2.6
    min_separation: float = 0.8
    sigma_iso: float = 0.3
    sigma_aniso: float = 1.0
    noise_radius: float = 2.0
    cutoff: float = 5.0
    species: tuple = (1,)
    max_attempts: int = 10000

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "species" in d:
            d["species"] = tuple(d["species"])
        return cls(**d)


class DataSpecError(ValueError):
    pass


def lj_pair(r, cutoff):
    """Truncated-shifted Lennard-Jones ``4(r^-12 - r^-6)`` and its radial derivative."""
    r = np.asarray(r, dtype=float)
    inside = r < cutoff
    shift = 4.0 * (cutoff**-12 - cutoff**-6)
    v = np.where(inside, 4.0 * (r**-12 - r**-6) - shift, 0.0)
    dv = np.where(inside, 4.0 * (-12.0 * r**-13 + 6.0 * r**-7), 0.0)
    return v, dv


def reference_energy_forces(positions, cutoff):
    n = len(positions)
    i, j, r, unit = neighbor_pairs(positions, cutoff)
    v, dv = lj_pair(r, cutoff)
    f = np.zeros((n, 3))
    np.add.at(f, i, dv[:, None] * unit)
    return 0.5 * float(np.sum(v)), f


def noise_weight(r, radius):
    r = np.asarray(r, dtype=float)
    return np.where(r < radius, 0.5 * (np.cos(np.pi * r / radius) + 1.0), 0.0)


def noise_covariance(positions, spec: DataSpec):
    """``sigma_iso^2 I + sigma_aniso^2 sum_j w(r_ij) e_ij e_ij^T`` per atom."""
    n = len(positions)
    i, j, r, unit = neighbor_pairs(positions, spec.noise_radius)
    acc = np.zeros((n, 3, 3))
    np.add.at(acc, i, noise_weight(r, spec.noise_radius)[:, None, None] * linalg3.outer(unit))
    return spec.sigma_iso**2 * np.eye(3) + spec.sigma_aniso**2 * acc


def draw_force_noise(noise_cov, rng: np.random.Generator):
    """One correlated Gaussian draw per atom from ``noise_cov``."""
    w, u = np.linalg.eigh(noise_cov)
    root = u * np.sqrt(np.clip(w, 0.0, None))[:, None, :]
    return np.einsum("nij,nj->ni", root, rng.standard_normal((len(noise_cov), 3)))


def sample_positions(n_atoms, spec: DataSpec, rng: np.random.Generator):
    """Rejection sampling inside a ball with a minimum pair separation."""
    pos = np.empty((0, 3))
    min_sq = spec.min_separation**2
    for _ in range(n_atoms):
        for _attempt in range(spec.max_attempts):
            p = rng.uniform(-spec.radius, spec.radius, size=3)
            if p @ p > spec.radius**2:
                continue
            if len(pos) == 0 or np.min(np.sum((pos - p) ** 2, axis=1)) >= min_sq:
                pos = np.vstack([pos, p])
                break
        else:
            raise DataSpecError(
                f"could not place atom {len(pos) + 1} of {n_atoms} after {spec.max_attempts} attempts")
    return pos


def generate_configuration(spec: DataSpec, rng: np.random.Generator) -> Configuration:
    n = int(rng.integers(spec.atoms_min, spec.atoms_max + 1))
    pos = sample_positions(n, spec, rng)
    species = rng.choice(np.asarray(spec.species), size=n)
    e, f = reference_energy_forces(pos, spec.cutoff)
    cov = noise_covariance(pos, spec)
    if spec.sigma_iso > 0 or spec.sigma_aniso > 0:
        f = f + draw_force_noise(cov, rng)
    return Configuration(species, pos, e, f, cov)


def generate_dataset(spec: DataSpec, rng: np.random.Generator):
    return [generate_configuration(spec, rng) for _ in range(spec.n_configs)]


# -- splits ---------------------------------------------------------------------------


def mean_nn_distance(config: Configuration):
    pos = config.positions
    if len(pos) < 2:
        return np.inf
    d = np.linalg.norm(pos[:, None] - pos[None], axis=-1)
    d[np.diag_indices(len(pos))] = np.inf
    return float(np.mean(d.min(axis=1)))


@dataclass
class OodRule:
    """Configurations whose descriptor falls below ``threshold`` form the OOD slice.

    With ``threshold=None`` the threshold is the ``quantile`` of the descriptor.
    """

    threshold: float | None = None
    quantile: float = 0.1
    fractions: tuple = (0.8, 0.1, 0.1)
    seed: int = 0


class EmptySplitError(ValueError):
    pass


def ood_split(dataset, rule: OodRule = OodRule()):
    """Return ``(train, val, test_id, test_ood)``.

    The densest configurations (smallest mean nearest-neighbour distance) are
    held out as OOD; the remainder is shuffled with ``rule.seed`` and split by
    ``rule.fractions``. Every OOD descriptor is strictly below every in-domain one.
    """
    desc = np.array([mean_nn_distance(c) for c in dataset])
    thr = rule.threshold if rule.threshold is not None else float(np.quantile(desc, rule.quantile))
    ood_mask = desc < thr
    if not np.any(ood_mask):
        raise EmptySplitError(f"OOD threshold {thr:.4g} selects no configurations")
    if np.all(ood_mask):
        raise EmptySplitError(f"OOD threshold {thr:.4g} leaves no in-domain configurations")
    ood = [dataset[k] for k in np.flatnonzero(ood_mask)]
    rest = np.flatnonzero(~ood_mask)
    rest = rest[np.random.default_rng(rule.seed).permutation(len(rest))]
    f_train, f_val, _ = rule.fractions
    n_train = int(round(f_train * len(rest)))
    n_val = int(round(f_val * len(rest)))
    pick = lambda idx: [dataset[k] for k in idx]  # noqa: E731
    return (pick(rest[:n_train]), pick(rest[n_train:n_train + n_val]),
            pick(rest[n_train + n_val:]), ood)


# -- checkpoints ----------------------------------------------------------------------


def save_checkpoint(path, params: ModelParams, damper, weights, damper_enabled=True, extra=None):
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "params": params.to_dict(),
        "damper": damper.to_dict(),
        "damper_enabled": bool(damper_enabled),
        "loss_weights": weights.to_dict(),
    }
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_checkpoint(path):
    """Returns ``(params, damper, weights, damper_enabled)``."""
    from .evidential import LossWeights
    from .stabilizer import DamperConfig

    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('format_version')!r}")
    return (ModelParams.from_dict(doc["params"]), DamperConfig(**doc["damper"]),
            LossWeights(**doc["loss_weights"]), bool(doc.get("damper_enabled", True)))
