"""CGCNN-lite: a small gated graph-convolution regressor.

Node states start as learned species embeddings and are updated ``n_conv``
times by

    v_i <- v_i + sum_j sigmoid(z_ij W_g + b_g) * softplus(z_ij W_c + b_c),
    z_ij = [v_i, v_j, e_ij],

then mean-pooled per crystal and passed through a one-hidden-layer readout.
Gradients are derived by hand and checked against finite differences in
the test suite. Everything is float64 numpy.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import sparse
from scipy.special import expit
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .data import MAX_Z, PropertyRecord
from .exceptions import EmptyTrainingSet, ShapeMismatch
from .graph import CrystalGraph, NeighborParams, build_graph
from .utils import check_structures, check_targets, make_rng, mix_seed

CHECKPOINT_VERSION = 1
# embedding init half-width; wider draws made plain SGD stall on the toy task
EMBED_INIT = 0.3


@dataclass(frozen=True)
class PredictorConfig:
    embed_dim: int = 32
    n_conv: int = 2
    hidden_dim: int = 32
    learning_rate: float = 0.01
    epochs: int = 200
    batch_size: int = 32
    patience: int = 30
    seed: int = 0
    optimizer: str = "sgd"

    def __post_init__(self):
        for name in ("embed_dim", "n_conv", "hidden_dim", "batch_size", "patience"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not (math.isfinite(self.learning_rate) and self.learning_rate > 0):
            raise ValueError("learning_rate must be finite and > 0")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError("optimizer must be 'sgd' or 'adam'")


@dataclass
class PredictorModel:
    params: dict
    config: PredictorConfig
    neighbor: NeighborParams
    target_mean: float = 0.0
    target_std: float = 1.0

    def copy(self) -> "PredictorModel":
        return PredictorModel(
            {k: v.copy() for k, v in self.params.items()},
            self.config, self.neighbor, self.target_mean, self.target_std,
        )


@dataclass
class TrainReport:
    epoch_losses: list = field(default_factory=list)
    val_maes: list = field(default_factory=list)
    best_val_mae: float = float("nan")
    best_epoch: int = -1


def param_names(n_conv: int) -> list[str]:
    names = ["embedding"]
    for layer in range(n_conv):
        names += [f"conv{layer}.gate_w", f"conv{layer}.gate_b",
                  f"conv{layer}.core_w", f"conv{layer}.core_b"]
    return names + ["readout.hidden_w", "readout.hidden_b", "readout.out_w", "readout.out_b"]


def init_predictor(config: PredictorConfig, neighbor: NeighborParams | None = None) -> PredictorModel:
    """Draw initial parameters.

    Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), species embeddings
    ~ U(-EMBED_INIT, EMBED_INIT), biases 0.
    """
    neighbor = neighbor or NeighborParams()
    rng = make_rng(mix_seed(config.seed, "predictor-init"))
    d, h, c = config.embed_dim, config.hidden_dim, neighbor.n_centers
    z_dim = 2 * d + c

    def uniform(fan_in, shape):
        bound = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    params = {"embedding": rng.uniform(-EMBED_INIT, EMBED_INIT, size=(MAX_Z, d))}
    for layer in range(config.n_conv):
        params[f"conv{layer}.gate_w"] = uniform(z_dim, (z_dim, d))
        params[f"conv{layer}.gate_b"] = np.zeros(d)
        params[f"conv{layer}.core_w"] = uniform(z_dim, (z_dim, d))
        params[f"conv{layer}.core_b"] = np.zeros(d)
    params["readout.hidden_w"] = uniform(d, (d, h))
    params["readout.hidden_b"] = np.zeros(h)
    params["readout.out_w"] = uniform(h, (h,))
    params["readout.out_b"] = np.zeros(1)
    return PredictorModel(params, config, neighbor)


# -- batched forward / backward ---------------------------------------------

@dataclass
class GraphBatch:
    species_idx: np.ndarray  # atomic number - 1
    src: np.ndarray
    dst: np.ndarray
    features: np.ndarray
    node_graph: np.ndarray
    n_graphs: int
    counts: np.ndarray
    # sparse 0/1 scatter operators: node <- edge (by src / dst), graph <- node
    src_sum: sparse.csr_matrix = None
    dst_sum: sparse.csr_matrix = None
    graph_sum: sparse.csr_matrix = None


def _indicator(rows, n_rows):
    n = rows.shape[0]
    return sparse.csr_matrix((np.ones(n), (rows, np.arange(n))), shape=(n_rows, n))


def collate(graphs) -> GraphBatch:
    species, src, dst, feats, node_graph = [], [], [], [], []
    offset = 0
    for k, g in enumerate(graphs):
        species.append(g.node_species)
        src.append(g.src + offset)
        dst.append(g.dst + offset)
        feats.append(g.features)
        node_graph.append(np.full(g.n_nodes, k, dtype=np.int64))
        offset += g.n_nodes
    n_centers = graphs[0].features.shape[1] if graphs else 0
    src = np.concatenate(src).astype(np.int64)
    dst = np.concatenate(dst).astype(np.int64)
    node_graph = np.concatenate(node_graph)
    return GraphBatch(
        np.concatenate(species) - 1,
        src,
        dst,
        np.concatenate(feats).reshape(-1, n_centers),
        node_graph,
        len(graphs),
        np.array([g.n_nodes for g in graphs], dtype=np.float64),
        _indicator(src, offset),
        _indicator(dst, offset),
        _indicator(node_graph, len(graphs)),
    )


def _softplus(x):
    return np.logaddexp(0.0, x)


def _scatter_rows(values, index, n_rows):
    out = np.zeros((n_rows, values.shape[1]))
    np.add.at(out, index, values)
    return out


def _sum_into(op, values):
    return np.asarray(op @ values)


def _check_batch(model: PredictorModel, batch: GraphBatch):
    expected = model.params["conv0.gate_w"].shape[0] - 2 * model.config.embed_dim if model.config.n_conv else None
    if expected is not None and batch.features.shape[0] and batch.features.shape[1] != expected:
        raise ShapeMismatch(
            f"edge features have length {batch.features.shape[1]}, model expects {expected}"
        )


def forward_batch(model: PredictorModel, batch: GraphBatch, keep_cache=False):
    """Standardized predictions for every graph in ``batch``."""
    _check_batch(model, batch)
    p = model.params
    d = model.config.embed_dim
    v = p["embedding"][batch.species_idx]
    layers = []
    for layer in range(model.config.n_conv):
        z = np.concatenate([v[batch.src], v[batch.dst], batch.features], axis=1)
        gate = z @ p[f"conv{layer}.gate_w"] + p[f"conv{layer}.gate_b"]
        core = z @ p[f"conv{layer}.core_w"] + p[f"conv{layer}.core_b"]
        s = expit(gate)
        sp = _softplus(core)
        v = v + _sum_into(batch.src_sum, s * sp)
        if keep_cache:
            layers.append((z, s, sp, core))
    pooled = _sum_into(batch.graph_sum, v) / batch.counts[:, None]
    hidden_pre = pooled @ p["readout.hidden_w"] + p["readout.hidden_b"]
    hidden = _softplus(hidden_pre)
    y = hidden @ p["readout.out_w"] + p["readout.out_b"]
    if not keep_cache:
        return y
    return y, (layers, pooled, hidden_pre, hidden, d)


def backward_batch(model: PredictorModel, batch: GraphBatch, cache, dy):
    """Gradients of ``sum(dy * y)`` with respect to every parameter."""
    p = model.params
    layers, pooled, hidden_pre, hidden, d = cache
    grads = {}
    grads["readout.out_w"] = hidden.T @ dy
    grads["readout.out_b"] = np.array([dy.sum()])
    d_hidden_pre = np.outer(dy, p["readout.out_w"]) * expit(hidden_pre)
    grads["readout.hidden_w"] = pooled.T @ d_hidden_pre
    grads["readout.hidden_b"] = d_hidden_pre.sum(axis=0)
    d_pooled = d_hidden_pre @ p["readout.hidden_w"].T
    dv = (d_pooled / batch.counts[:, None])[batch.node_graph]
    for layer in reversed(range(model.config.n_conv)):
        z, s, sp, core = layers[layer]
        d_msg = dv[batch.src]
        d_gate = d_msg * sp * s * (1.0 - s)
        d_core = d_msg * s * expit(core)
        grads[f"conv{layer}.gate_w"] = z.T @ d_gate
        grads[f"conv{layer}.gate_b"] = d_gate.sum(axis=0)
        grads[f"conv{layer}.core_w"] = z.T @ d_core
        grads[f"conv{layer}.core_b"] = d_core.sum(axis=0)
        dz = d_gate @ p[f"conv{layer}.gate_w"].T + d_core @ p[f"conv{layer}.core_w"].T
        dv = dv + _sum_into(batch.src_sum, dz[:, :d]) + _sum_into(batch.dst_sum, dz[:, d:2 * d])
    grads["embedding"] = _scatter_rows(dv, batch.species_idx, MAX_Z)
    return grads


def loss_and_grad(model: PredictorModel, batch: GraphBatch, y_std: np.ndarray):
    """Mean absolute error on standardized targets and its exact gradient."""
    y, cache = forward_batch(model, batch, keep_cache=True)
    resid = y - y_std
    loss = float(np.mean(np.abs(resid)))
    dy = np.sign(resid) / resid.shape[0]
    return loss, backward_batch(model, batch, cache, dy)


def forward(model: PredictorModel, g: CrystalGraph) -> float:
    """Prediction for one graph, in dataset units."""
    y = forward_batch(model, collate([g]))[0]
    return float(y * model.target_std + model.target_mean)


def _predict_graphs(model: PredictorModel, graphs, chunk=256) -> np.ndarray:
    out = []
    for start in range(0, len(graphs), chunk):
        out.append(forward_batch(model, collate(graphs[start:start + chunk])))
    if not out:
        return np.zeros(0)
    return np.concatenate(out) * model.target_std + model.target_mean


def featurize(structures, neighbor: NeighborParams):
    return [build_graph(s, neighbor) for s in structures]


def predict(model: PredictorModel, structures) -> np.ndarray:
    """Predict properties for a sequence of structures (or precomputed graphs)."""
    items = list(structures)
    graphs = [x if isinstance(x, CrystalGraph) else None for x in items]
    if any(g is None for g in graphs):
        graphs = featurize(check_structures(items, "structures"), model.neighbor)
    return _predict_graphs(model, graphs)


def pseudo_label(model: PredictorModel, unlabeled, graphs=None) -> list[PropertyRecord]:
    """Label structures with the model's predictions (``label_kind='pseudo'``)."""
    structures = check_structures(unlabeled, "unlabeled")
    values = _predict_graphs(model, graphs) if graphs is not None else predict(model, structures)
    return [PropertyRecord(s, float(v), "pseudo") for s, v in zip(structures, values)]


# -- training ---------------------------------------------------------------

class _Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


class _SGD:
    def __init__(self, lr):
        self.lr = lr

    def step(self, params, grads):
        for k, g in grads.items():
            params[k] -= self.lr * g


def fit_graphs(model, g_train, y_train, g_val=(), y_val=(), config=None):
    """Train on precomputed graphs. See :func:`train_predictor`."""
    config = config or model.config
    if len(g_train) == 0:
        raise EmptyTrainingSet("training set is empty")
    report = TrainReport()
    if config.epochs == 0:
        return model.copy(), report

    model = model.copy()
    model.config = config
    y_train = np.asarray(y_train, dtype=np.float64)
    y_val = np.asarray(y_val, dtype=np.float64)
    model.target_mean = float(np.mean(y_train))
    std = float(np.std(y_train))
    model.target_std = std if std > 1e-12 else 1.0
    y_std = (y_train - model.target_mean) / model.target_std

    rng = make_rng(mix_seed(config.seed, "predictor-shuffle"))
    opt = _Adam(model.params, config.learning_rate) if config.optimizer == "adam" else _SGD(config.learning_rate)
    val_batch = collate(list(g_val)) if len(g_val) else None
    best_params, best_mae, since_best = None, math.inf, 0
    n = len(g_train)

    for epoch in range(config.epochs):
        order = rng.permutation(n)
        losses, weights = [], []
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            batch = collate([g_train[i] for i in idx])
            loss, grads = loss_and_grad(model, batch, y_std[idx])
            opt.step(model.params, grads)
            losses.append(loss)
            weights.append(len(idx))
        report.epoch_losses.append(float(np.average(losses, weights=weights)))

        if val_batch is None:
            continue
        pred = forward_batch(model, val_batch) * model.target_std + model.target_mean
        val_mae = float(np.mean(np.abs(pred - y_val)))
        report.val_maes.append(val_mae)
        if val_mae < best_mae:
            best_mae, report.best_epoch, since_best = val_mae, epoch, 0
            best_params = {k: v.copy() for k, v in model.params.items()}
        else:
            since_best += 1
            if since_best >= config.patience:
                break

    if best_params is not None:
        model.params = best_params
        report.best_val_mae = best_mae
    else:
        report.best_epoch = len(report.epoch_losses) - 1
    return model, report


def train_predictor(model: PredictorModel, train, val=(), config: PredictorConfig | None = None):
    """Minibatch gradient descent on standardized-target MAE with early stopping.

    Parameters
    ----------
    model : PredictorModel
        Starting point; not modified.
    train, val : sequence of PropertyRecord
        ``val`` may be empty, in which case the final epoch is kept.
    config : PredictorConfig, optional
        Defaults to ``model.config``.

    Returns
    -------
    (PredictorModel, TrainReport)
    """
    train, val = list(train), list(val)
    if not train:
        raise EmptyTrainingSet("training set is empty")
    g_train = featurize([r.structure for r in train], model.neighbor)
    g_val = featurize([r.structure for r in val], model.neighbor)
    return fit_graphs(
        model, g_train, [r.property for r in train],
        g_val, [r.property for r in val], config,
    )


# -- checkpoints ------------------------------------------------------------

def _encode_params(params):
    return {k: {"shape": list(v.shape), "data": np.asarray(v, dtype=np.float64).ravel().tolist()}
            for k, v in params.items()}


def _decode_params(blob):
    return {k: np.array(v["data"], dtype=np.float64).reshape(v["shape"]) for k, v in blob.items()}


def predictor_to_dict(model: PredictorModel) -> dict:
    return {
        "format": "matwheel-predictor",
        "version": CHECKPOINT_VERSION,
        "config": asdict(model.config),
        "neighbor": asdict(model.neighbor),
        "target_mean": model.target_mean,
        "target_std": model.target_std,
        "params": _encode_params(model.params),
    }


def predictor_from_dict(blob: dict) -> PredictorModel:
    if blob.get("format") != "matwheel-predictor" or blob.get("version") != CHECKPOINT_VERSION:
        raise ValueError("not a version-1 predictor checkpoint")
    return PredictorModel(
        _decode_params(blob["params"]),
        PredictorConfig(**blob["config"]),
        NeighborParams(**blob["neighbor"]),
        float(blob["target_mean"]),
        float(blob["target_std"]),
    )


def save_predictor(model: PredictorModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(predictor_to_dict(model), fh)


def load_predictor(path) -> PredictorModel:
    with open(path, encoding="utf-8") as fh:
        return predictor_from_dict(json.load(fh))


# -- estimator --------------------------------------------------------------

class CGCNNRegressor(RegressorMixin, BaseEstimator):
    """scikit-learn style wrapper around the graph regressor.

    ``X`` is a sequence of :class:`~matwheel.data.CrystalStructure` (or
    property records, whose structures are used).

    Attributes
    ----------
    model_ : PredictorModel
    report_ : TrainReport
    """

    def __init__(self, embed_dim=32, n_conv=2, hidden_dim=32, learning_rate=0.01, epochs=200,
                 batch_size=32, patience=30, optimizer="sgd", cutoff=6.0, max_neighbors=12,
                 n_centers=31, gauss_width=0.5, random_state=0):
        self.embed_dim = embed_dim
        self.n_conv = n_conv
        self.hidden_dim = hidden_dim
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.patience = patience
        self.optimizer = optimizer
        self.cutoff = cutoff
        self.max_neighbors = max_neighbors
        self.n_centers = n_centers
        self.gauss_width = gauss_width
        self.random_state = random_state

    def _configs(self):
        config = PredictorConfig(self.embed_dim, self.n_conv, self.hidden_dim, self.learning_rate,
                                 self.epochs, self.batch_size, self.patience,
                                 int(self.random_state or 0), self.optimizer)
        return config, NeighborParams(self.cutoff, self.max_neighbors, self.n_centers, self.gauss_width)

    def fit(self, X, y, X_val=None, y_val=None):
        X = check_structures(X)
        y = check_targets(y, len(X))
        config, neighbor = self._configs()
        g_val, yv = [], np.zeros(0)
        if X_val is not None:
            X_val = check_structures(X_val, "X_val")
            yv = check_targets(y_val, len(X_val), "y_val")
            g_val = featurize(X_val, neighbor)
        model = init_predictor(config, neighbor)
        self.model_, self.report_ = fit_graphs(model, featurize(X, neighbor), y, g_val, yv, config)
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        return predict(self.model_, check_structures(X))
