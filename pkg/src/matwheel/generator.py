"""Conditional VAE over a fixed-size crystal encoding.

A crystal with at most ``max_atoms`` atoms is packed into a vector of length
``1 + max_atoms + 3 * max_atoms + 6``::

    [n_atoms / max_atoms | Z / 118 per slot | frac coords per slot | a, b, c, alpha, beta, gamma]

Empty slots are zero. The VAE encodes (encoding, property) into a Gaussian
posterior and decodes (latent, property) back to an encoding. Decoding always
produces a valid structure: counts, species and cell parameters are clamped,
and cells with infeasible angle triples are relaxed toward 90 degrees.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .data import MAX_Z, CrystalStructure, PropertyRecord, _wrap
from .exceptions import EmptyTrainingSet, ShapeMismatch, TooManyAtoms
from .utils import check_structures, check_targets, make_rng, mix_seed

CHECKPOINT_VERSION = 1
LENGTH_BOUNDS = (1.0, 50.0)
ANGLE_BOUNDS = (30.0, 150.0)
# smallest accepted 1 - sum cos^2 + 2 prod cos (squared volume per a*b*c)
MIN_VOLUME_FACTOR = 0.1


def encoding_length(max_atoms: int) -> int:
    return 1 + max_atoms + 3 * max_atoms + 6


def lattice_to_params(lattice: np.ndarray) -> np.ndarray:
    a, b, c = lattice
    la, lb, lc = (float(np.linalg.norm(v)) for v in (a, b, c))

    def angle(u, v, nu, nv):
        return math.degrees(math.acos(max(-1.0, min(1.0, float(np.dot(u, v)) / (nu * nv)))))

    return np.array([la, lb, lc, angle(b, c, lb, lc), angle(a, c, la, lc), angle(a, b, la, lb)])


def volume_factor(alpha, beta, gamma) -> float:
    ca, cb, cg = (math.cos(math.radians(x)) for x in (alpha, beta, gamma))
    return 1.0 - ca * ca - cb * cb - cg * cg + 2.0 * ca * cb * cg


def params_to_lattice(params) -> np.ndarray:
    """Lattice matrix with ``a`` along x and ``b`` in the xy plane."""
    la, lb, lc, alpha, beta, gamma = (float(x) for x in params)
    ca, cb, cg = (math.cos(math.radians(x)) for x in (alpha, beta, gamma))
    sg = math.sin(math.radians(gamma))
    cy = (ca - cb * cg) / sg
    cz = math.sqrt(max(1.0 - cb * cb - cy * cy, 0.0))
    return np.array([
        [la, 0.0, 0.0],
        [lb * cg, lb * sg, 0.0],
        [lc * cb, lc * cy, lc * cz],
    ])


def _repair_angles(angles: np.ndarray) -> np.ndarray:
    angles = np.clip(angles, *ANGLE_BOUNDS)
    for step in range(21):
        t = 1.0 - step / 20.0
        trial = 90.0 + t * (angles - 90.0)
        if volume_factor(*trial) >= MIN_VOLUME_FACTOR:
            return trial
    return np.full(3, 90.0)


def encode_material(s: CrystalStructure, max_atoms: int) -> np.ndarray:
    n = s.n_atoms
    if n > max_atoms:
        raise TooManyAtoms(f"structure {s.id!r} has {n} atoms > max_atoms={max_atoms}")
    v = np.zeros(encoding_length(max_atoms))
    v[0] = n / max_atoms
    v[1:1 + n] = s.species / MAX_Z
    start = 1 + max_atoms
    v[start:start + 3 * n] = s.frac_coords.ravel()
    v[-6:] = lattice_to_params(s.lattice)
    return v


def decode_material(v, max_atoms: int, id: str = "") -> CrystalStructure:
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (encoding_length(max_atoms),):
        raise ShapeMismatch(f"encoding has shape {v.shape}, expected ({encoding_length(max_atoms)},)")
    v = np.nan_to_num(v, nan=0.0, posinf=1e6, neginf=-1e6)
    n = int(np.clip(np.round(v[0] * max_atoms), 1, max_atoms))
    species = np.clip(np.round(v[1:1 + n] * MAX_Z), 1, MAX_Z).astype(np.int64)
    start = 1 + max_atoms
    coords = _wrap(v[start:start + 3 * n].reshape(n, 3).copy())
    lengths = np.clip(v[-6:-3], *LENGTH_BOUNDS)
    angles = _repair_angles(v[-3:])
    lattice = params_to_lattice(np.concatenate([lengths, angles]))
    return CrystalStructure(lattice, species, coords, id)


# -- model ------------------------------------------------------------------

@dataclass(frozen=True)
class GeneratorConfig:
    max_atoms: int = 35
    latent_dim: int = 8
    hidden_dim: int = 64
    learning_rate: float = 1e-3
    epochs: int = 300
    kl_weight: float = 0.05
    batch_size: int = 64
    seed: int = 0

    def __post_init__(self):
        for name in ("max_atoms", "latent_dim", "hidden_dim", "batch_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not (math.isfinite(self.learning_rate) and self.learning_rate > 0):
            raise ValueError("learning_rate must be finite and > 0")
        if not self.kl_weight >= 0:
            raise ValueError("kl_weight must be >= 0")


@dataclass
class GeneratorModel:
    params: dict
    config: GeneratorConfig
    feature_mean: np.ndarray
    feature_scale: np.ndarray
    condition_mean: float = 0.0
    condition_std: float = 1.0
    loss_history: list | None = None


def init_generator(config: GeneratorConfig) -> GeneratorModel:
    rng = make_rng(mix_seed(config.seed, "generator-init"))
    L, k, h = encoding_length(config.max_atoms), config.latent_dim, config.hidden_dim

    def uniform(fan_in, shape):
        bound = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    params = {
        "enc.w": uniform(L + 1, (L + 1, h)), "enc.b": np.zeros(h),
        "enc.mu_w": uniform(h, (h, k)), "enc.mu_b": np.zeros(k),
        "enc.logvar_w": uniform(h, (h, k)), "enc.logvar_b": np.zeros(k),
        "dec.w": uniform(k + 1, (k + 1, h)), "dec.b": np.zeros(h),
        "dec.out_w": uniform(h, (h, L)), "dec.out_b": np.zeros(L),
    }
    return GeneratorModel(params, config, np.zeros(L), np.ones(L))


def kl_divergence(mu, logvar) -> np.ndarray:
    """KL(N(mu, exp(logvar)) || N(0, I)), one value per row."""
    return -0.5 * np.sum(1.0 + logvar - mu * mu - np.exp(logvar), axis=-1)


def decode_latent(model: GeneratorModel, z, c_std) -> np.ndarray:
    """Raw (unnormalized) encodings for latent rows ``z`` and standardized conditions."""
    p = model.params
    inp = np.concatenate([z, np.asarray(c_std, dtype=np.float64).reshape(-1, 1)], axis=1)
    out = np.tanh(inp @ p["dec.w"] + p["dec.b"]) @ p["dec.out_w"] + p["dec.out_b"]
    return out * model.feature_scale + model.feature_mean


def encode_posterior(model: GeneratorModel, x_norm, c_std):
    p = model.params
    inp = np.concatenate([x_norm, np.asarray(c_std, dtype=np.float64).reshape(-1, 1)], axis=1)
    h = np.tanh(inp @ p["enc.w"] + p["enc.b"])
    return h @ p["enc.mu_w"] + p["enc.mu_b"], h @ p["enc.logvar_w"] + p["enc.logvar_b"]


def generator_loss_and_grad(model: GeneratorModel, x_norm, c_std, eps, kl_weight=None):
    """Negative ELBO per sample (batch mean) and its exact gradient.

    ``eps`` is the reparameterization noise, passed in so the loss is a
    deterministic function of the parameters.
    """
    p = model.params
    kl_weight = model.config.kl_weight if kl_weight is None else kl_weight
    n = x_norm.shape[0]
    c = np.asarray(c_std, dtype=np.float64).reshape(-1, 1)

    enc_in = np.concatenate([x_norm, c], axis=1)
    h1 = np.tanh(enc_in @ p["enc.w"] + p["enc.b"])
    mu = h1 @ p["enc.mu_w"] + p["enc.mu_b"]
    logvar = h1 @ p["enc.logvar_w"] + p["enc.logvar_b"]
    sigma = np.exp(0.5 * logvar)
    z = mu + sigma * eps
    dec_in = np.concatenate([z, c], axis=1)
    h2 = np.tanh(dec_in @ p["dec.w"] + p["dec.b"])
    out = h2 @ p["dec.out_w"] + p["dec.out_b"]

    resid = out - x_norm
    recon = np.sum(resid * resid, axis=1)
    kl = kl_divergence(mu, logvar)
    loss = float(np.mean(recon + kl_weight * kl))

    g = {}
    d_out = 2.0 * resid / n
    g["dec.out_w"] = h2.T @ d_out
    g["dec.out_b"] = d_out.sum(axis=0)
    d_h2pre = (d_out @ p["dec.out_w"].T) * (1.0 - h2 * h2)
    g["dec.w"] = dec_in.T @ d_h2pre
    g["dec.b"] = d_h2pre.sum(axis=0)
    d_z = (d_h2pre @ p["dec.w"].T)[:, :-1]
    d_mu = d_z + kl_weight * mu / n
    d_logvar = d_z * eps * 0.5 * sigma + kl_weight * 0.5 * (np.exp(logvar) - 1.0) / n
    g["enc.mu_w"] = h1.T @ d_mu
    g["enc.mu_b"] = d_mu.sum(axis=0)
    g["enc.logvar_w"] = h1.T @ d_logvar
    g["enc.logvar_b"] = d_logvar.sum(axis=0)
    d_h1pre = (d_mu @ p["enc.mu_w"].T + d_logvar @ p["enc.logvar_w"].T) * (1.0 - h1 * h1)
    g["enc.w"] = enc_in.T @ d_h1pre
    g["enc.b"] = d_h1pre.sum(axis=0)
    return loss, g


def _standardize_conditions(values):
    mean = float(np.mean(values))
    std = float(np.std(values))
    return mean, (std if std > 1e-12 else 1.0)


def train_generator(records, config: GeneratorConfig) -> GeneratorModel:
    """Fit the conditional VAE with minibatch Adam on the negative ELBO.

    Records of any ``label_kind`` are accepted; their ``property`` is the
    condition.
    """
    records = list(records)
    if not records:
        raise EmptyTrainingSet("generator training set is empty")
    X = np.stack([encode_material(r.structure, config.max_atoms) for r in records])
    cond = np.array([r.property for r in records], dtype=np.float64)

    model = init_generator(config)
    model.feature_mean = X.mean(axis=0)
    scale = X.std(axis=0)
    model.feature_scale = np.where(scale > 1e-8, scale, 1.0)
    model.condition_mean, model.condition_std = _standardize_conditions(cond)
    x_norm = (X - model.feature_mean) / model.feature_scale
    c_std = (cond - model.condition_mean) / model.condition_std

    rng = make_rng(mix_seed(config.seed, "generator-train"))
    p = model.params
    m = {k: np.zeros_like(v) for k, v in p.items()}
    v2 = {k: np.zeros_like(v) for k, v in p.items()}
    beta1, beta2, step = 0.9, 0.999, 0
    history = []
    n = len(records)
    for _ in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            eps = rng.standard_normal((len(idx), config.latent_dim))
            loss, grads = generator_loss_and_grad(model, x_norm[idx], c_std[idx], eps)
            total += loss * len(idx)
            step += 1
            for k, g in grads.items():
                m[k] = beta1 * m[k] + (1 - beta1) * g
                v2[k] = beta2 * v2[k] + (1 - beta2) * g * g
                p[k] -= config.learning_rate * (m[k] / (1 - beta1 ** step)) / (
                    np.sqrt(v2[k] / (1 - beta2 ** step)) + 1e-8)
        history.append(total / n)
    model.loss_history = history
    return model


def reconstruct(model: GeneratorModel, records) -> np.ndarray:
    """Raw encodings reconstructed through the posterior mean (no sampling)."""
    records = list(records)
    X = np.stack([encode_material(r.structure, model.config.max_atoms) for r in records])
    c_std = (np.array([r.property for r in records]) - model.condition_mean) / model.condition_std
    mu, _ = encode_posterior(model, (X - model.feature_mean) / model.feature_scale, c_std)
    return decode_latent(model, mu, c_std)


def sample_encodings(model: GeneratorModel, conditions, seeds) -> np.ndarray:
    conditions = np.asarray(conditions, dtype=np.float64).reshape(-1)
    k = model.config.latent_dim
    z = np.stack([make_rng(s).standard_normal(k) for s in seeds]) if len(seeds) else np.zeros((0, k))
    c_std = (conditions - model.condition_mean) / model.condition_std
    return decode_latent(model, z, c_std)


def sample_conditional(model: GeneratorModel, condition: float, max_atoms: int | None = None,
                       seed: int = 0, id: str = "") -> CrystalStructure:
    """Draw one structure for a property ``condition``."""
    max_atoms = max_atoms or model.config.max_atoms
    if max_atoms != model.config.max_atoms:
        raise ShapeMismatch(f"model was trained with max_atoms={model.config.max_atoms}")
    enc = sample_encodings(model, [condition], [seed])[0]
    return decode_material(enc, max_atoms, id)


def generate_synthetic_set(model: GeneratorModel, kde, n: int, max_atoms: int | None = None,
                           seed: int = 0, prefix: str = "syn") -> list[PropertyRecord]:
    """Sample ``n`` conditions from ``kde`` and one structure per condition.

    Each record's property is its condition value.
    """
    from .kde import sample_kde

    if n < 1:
        raise ValueError("n must be >= 1")
    max_atoms = max_atoms or model.config.max_atoms
    conditions = sample_kde(kde, n, mix_seed(seed, "conditions"))
    seeds = [mix_seed(seed, "structure", k) for k in range(n)]
    encodings = sample_encodings(model, conditions, seeds)
    return [
        PropertyRecord(decode_material(e, max_atoms, f"{prefix}-{k:05d}"), float(c), "synthetic")
        for k, (e, c) in enumerate(zip(encodings, conditions))
    ]


# -- checkpoints ------------------------------------------------------------

def generator_to_dict(model: GeneratorModel) -> dict:
    return {
        "format": "matwheel-generator",
        "version": CHECKPOINT_VERSION,
        "config": asdict(model.config),
        "condition_mean": model.condition_mean,
        "condition_std": model.condition_std,
        "feature_mean": model.feature_mean.tolist(),
        "feature_scale": model.feature_scale.tolist(),
        "params": {k: {"shape": list(v.shape), "data": v.ravel().tolist()} for k, v in model.params.items()},
    }


def generator_from_dict(blob: dict) -> GeneratorModel:
    if blob.get("format") != "matwheel-generator" or blob.get("version") != CHECKPOINT_VERSION:
        raise ValueError("not a version-1 generator checkpoint")
    params = {k: np.array(v["data"], dtype=np.float64).reshape(v["shape"]) for k, v in blob["params"].items()}
    return GeneratorModel(
        params,
        GeneratorConfig(**blob["config"]),
        np.array(blob["feature_mean"], dtype=np.float64),
        np.array(blob["feature_scale"], dtype=np.float64),
        float(blob["condition_mean"]),
        float(blob["condition_std"]),
    )


def save_generator(model: GeneratorModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(generator_to_dict(model), fh)


def load_generator(path) -> GeneratorModel:
    with open(path, encoding="utf-8") as fh:
        return generator_from_dict(json.load(fh))


# -- estimator --------------------------------------------------------------

class ConditionalVAEGenerator(BaseEstimator):
    """scikit-learn style conditional structure generator.

    ``fit(X, y)`` takes structures and their property values; ``sample``
    returns one structure per requested condition.
    """

    def __init__(self, max_atoms=35, latent_dim=8, hidden_dim=64, learning_rate=1e-3,
                 epochs=300, kl_weight=0.05, batch_size=64, random_state=0):
        self.max_atoms = max_atoms
        self.latent_dim = latent_dim
        self.hidden_dim = hidden_dim
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.kl_weight = kl_weight
        self.batch_size = batch_size
        self.random_state = random_state

    def fit(self, X, y):
        X = check_structures(X)
        y = check_targets(y, len(X))
        config = GeneratorConfig(self.max_atoms, self.latent_dim, self.hidden_dim, self.learning_rate,
                                 self.epochs, self.kl_weight, self.batch_size, int(self.random_state or 0))
        self.model_ = train_generator([PropertyRecord(s, float(v)) for s, v in zip(X, y)], config)
        return self

    def sample(self, conditions, random_state=0):
        check_is_fitted(self, "model_")
        conditions = np.atleast_1d(np.asarray(conditions, dtype=np.float64))
        seeds = [mix_seed(random_state, "structure", k) for k in range(len(conditions))]
        encodings = sample_encodings(self.model_, conditions, seeds)
        return [decode_material(e, self.max_atoms, f"sample-{k:05d}") for k, e in enumerate(encodings)]
