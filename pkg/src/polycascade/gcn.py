"""
Graph-convolutional feature extractor with DiffPool coarsening.

Architecture (levels = 2)::

    nodes -> conv0+BN+ReLU -> DiffPool -> conv1+BN+ReLU -> DiffPool
          -> conv2+BN+ReLU -> mean over nodes      (tap L-2, hidden wide)
          -> FC+ReLU                                (tap L-1, hidden wide)
          -> FC -> de-standardized scalar           (tap L)

Convolutions follow the neighbour-only rule

    h_v = act( sum_{u in N(v)} (W h_u + b) / sqrt(|N(v)| |N(u)|) )

i.e. ``act(D^-1/2 A D^-1/2 (H W^T + b))`` with no self loop unless
``add_self_loops`` is set. On coarsened graphs the same normalization is
applied to the weighted adjacency ``S^T A S`` using weighted degrees.

Everything is float64 numpy with an explicit backward pass; graphs are
processed individually and batch normalization pools statistics over all
node rows of the current mini-batch.
"""

from __future__ import annotations

import copy
import enum
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import container
from .molgraph import MolecularGraph

logger = logging.getLogger(__name__)

NODE_ELEMENTS = ("C", "N", "O", "S", "F", "Cl", "Br", "I", "Si", "P")
NODE_DIM = len(NODE_ELEMENTS) + 1 + 3
MAGIC = b"PCGM"


class TrainingDivergedError(ArithmeticError):
    pass


class TapPoint(str, enum.Enum):
    L = "L"
    L_MINUS_1 = "L-1"
    L_MINUS_2 = "L-2"

    @classmethod
    def parse(cls, text: "str | TapPoint") -> "TapPoint":
        if isinstance(text, TapPoint):
            return text
        key = str(text).strip().upper().replace("_MINUS_", "-").replace("L_", "L-")
        aliases = {"OPT1": "L", "OPT2": "L-1", "OPT3": "L-2", "L-0": "L"}
        key = aliases.get(key, key)
        return cls(key)


@dataclass(frozen=True)
class GcnConfig:
    node_dim: int = NODE_DIM
    hidden: int = 64
    pool_ratio: float = 0.25
    levels: int = 2
    max_nodes: int = 256
    add_self_loops: bool = False
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5
    link_loss_weight: float = 0.0
    entropy_loss_weight: float = 0.0

    def cluster_count(self, n: int) -> int:
        return cluster_count(n, self.pool_ratio)

    def max_clusters(self) -> list[int]:
        out, n = [], self.max_nodes
        for _ in range(self.levels):
            n = self.cluster_count(n)
            out.append(n)
        return out


def cluster_count(n: int, ratio: float = 0.25) -> int:
    return max(1, math.ceil(ratio * n - 1e-9))


@dataclass
class GcnModel:
    config: GcnConfig
    params: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray]
    target_mean: float = 0.0
    target_std: float = 1.0
    seed: int = 0

    def copy(self) -> "GcnModel":
        return copy.deepcopy(self)

    def n_parameters(self) -> int:
        return sum(p.size for p in self.params.values())


@dataclass(frozen=True)
class EncodedGraph:
    x: np.ndarray
    adj: np.ndarray


# ---------------------------------------------------------------- encoding

def node_features(graph: MolecularGraph) -> np.ndarray:
    """14 columns: element one-hot (10 + other), mass/100, in_ring, aromatic."""
    x = np.zeros((graph.n_atoms, NODE_DIM))
    for i, a in enumerate(graph.atoms):
        try:
            col = NODE_ELEMENTS.index(a.element)
        except ValueError:
            col = len(NODE_ELEMENTS)
        x[i, col] = 1.0
        x[i, 11] = a.mass / 100.0
        x[i, 12] = float(a.in_ring)
        x[i, 13] = float(a.aromatic)
    return x


def encode_graph(graph: MolecularGraph) -> EncodedGraph:
    if graph.n_atoms == 0:
        raise ValueError("cannot encode an empty graph")
    return EncodedGraph(node_features(graph), graph.adjacency.astype(float))


def _as_encoded(graphs) -> list[EncodedGraph]:
    return [g if isinstance(g, EncodedGraph) else encode_graph(g) for g in graphs]


# ---------------------------------------------------------------- primitives

def normalize_adjacency(adj: np.ndarray, self_loops: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Return ``D^-1/2 A D^-1/2`` and the ``D^-1/2`` diagonal (0 for isolated nodes)."""
    a = adj + np.eye(adj.shape[0]) if self_loops else adj
    deg = a.sum(axis=1)
    dinv = np.zeros_like(deg)
    pos = deg > 0
    dinv[pos] = 1.0 / np.sqrt(deg[pos])
    return dinv[:, None] * a * dinv[None, :], dinv


def _normalize_adjacency_backward(dP: np.ndarray, adj: np.ndarray, dinv: np.ndarray, self_loops: bool) -> np.ndarray:
    a = adj + np.eye(adj.shape[0]) if self_loops else adj
    G = dP * a
    ddinv = G @ dinv + G.T @ dinv
    dd = -0.5 * ddinv * dinv**3
    return dP * np.outer(dinv, dinv) + dd[:, None]


_ACTIVATIONS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "identity": lambda z: z,
    "relu": lambda z: np.maximum(z, 0.0),
    "sigmoid": lambda z: 1.0 / (1.0 + np.exp(-z)),
    "tanh": np.tanh,
}


def gcn_layer(features, adjacency, W, b, activation="identity", self_loops: bool = False) -> np.ndarray:
    """One graph convolution with symmetric neighbour normalization.

    Args:
        features: (n, d_in) node matrix.
        adjacency: (n, n) symmetric, zero diagonal for the literal rule.
        W: (d_out, d_in) weights.
        b: (d_out,) bias, added before aggregation.
        activation: name ("identity", "relu", "sigmoid", "tanh") or callable.
    """
    H = np.asarray(features, dtype=float)
    vector_in = H.ndim == 1
    if vector_in:
        H = H[:, None]
    A = np.asarray(adjacency, dtype=float)
    W = np.atleast_2d(np.asarray(W, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    if A.shape != (H.shape[0], H.shape[0]):
        raise ValueError(f"adjacency {A.shape} does not match {H.shape[0]} nodes")
    if W.shape[1] != H.shape[1]:
        raise ValueError(f"weight expects {W.shape[1]} input features, got {H.shape[1]}")
    if b.shape != (W.shape[0],):
        raise ValueError(f"bias length {b.shape[0]} != output width {W.shape[0]}")
    act = _ACTIVATIONS[activation] if isinstance(activation, str) else activation
    P, _ = normalize_adjacency(A, self_loops)
    out = act(P @ (H @ W.T + b))
    return out[:, 0] if vector_in and out.shape[1] == 1 else out


def _softmax(logits: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    z = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    log_s = z - lse
    return np.exp(log_s), log_s


def diffpool_level(Z, assignment_logits, A) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Soft cluster assignment: ``S = softmax(logits)``, ``X' = S^T Z``, ``A' = S^T A S``."""
    Z = np.asarray(Z, dtype=float)
    L = np.asarray(assignment_logits, dtype=float)
    A = np.asarray(A, dtype=float)
    n = Z.shape[0]
    if L.shape[0] != n or A.shape != (n, n):
        raise ValueError(f"shape mismatch: Z {Z.shape}, logits {L.shape}, A {A.shape}")
    S, _ = _softmax(L)
    return S.T @ Z, S.T @ A @ S, S


# ---------------------------------------------------------------- model setup

def _glorot(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


# biases feeding a ReLU start slightly positive so a fresh model never sits on the kink
RELU_BIAS_INIT = 0.01


def init_model(config: GcnConfig | None = None, seed: int = 0) -> GcnModel:
    cfg = config or GcnConfig()
    rng = np.random.default_rng(seed)
    p: dict[str, np.ndarray] = {}
    buf: dict[str, np.ndarray] = {}
    h = cfg.hidden
    kmax = cfg.max_clusters()
    for l in range(cfg.levels + 1):
        d_in = cfg.node_dim if l == 0 else h
        p[f"conv{l}.W"] = _glorot(rng, h, d_in)
        p[f"conv{l}.b"] = np.zeros(h)
        p[f"bn{l}.gamma"] = np.ones(h)
        p[f"bn{l}.beta"] = np.full(h, RELU_BIAS_INIT)
        buf[f"bn{l}.running_mean"] = np.zeros(h)
        buf[f"bn{l}.running_var"] = np.ones(h)
        if l < cfg.levels:
            p[f"pool{l}.W"] = _glorot(rng, kmax[l], d_in)
            p[f"pool{l}.b"] = np.zeros(kmax[l])
    p["fc1.W"] = _glorot(rng, h, h)
    p["fc1.b"] = np.full(h, RELU_BIAS_INIT)
    p["fc2.W"] = _glorot(rng, 1, h)
    p["fc2.b"] = np.zeros(1)
    return GcnModel(cfg, p, buf, seed=seed)


# ---------------------------------------------------------------- forward / backward

def _bn_forward(U, gamma, beta, rmean, rvar, eps, train):
    if train:
        mu = U.mean(axis=0)
        var = U.var(axis=0)
    else:
        mu, var = rmean, rvar
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (U - mu) * inv
    return gamma * xhat + beta, (xhat, inv, mu, var, train)


def _bn_backward(dY, gamma, cache):
    xhat, inv, _, _, train = cache
    dgamma = (dY * xhat).sum(axis=0)
    dbeta = dY.sum(axis=0)
    dxhat = dY * gamma
    if not train:
        return dxhat * inv, dgamma, dbeta
    N = dY.shape[0]
    dU = (inv / N) * (N * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
    return dU, dgamma, dbeta


def _forward(model: GcnModel, batch: Sequence[EncodedGraph], train: bool):
    cfg, p = model.config, model.params
    H = [g.x for g in batch]
    A = [g.adj for g in batch]
    if any(h.shape[0] > cfg.max_nodes for h in H):
        raise ValueError(f"graph exceeds the model's max_nodes={cfg.max_nodes}")
    levels = []
    aux_link = 0.0
    aux_ent = 0.0
    for l in range(cfg.levels + 1):
        norm = [normalize_adjacency(a, cfg.add_self_loops) for a in A]
        sizes = [h.shape[0] for h in H]
        cuts = np.cumsum(sizes)[:-1]
        Hcat = np.vstack(H)
        Mcat = Hcat @ p[f"conv{l}.W"].T + p[f"conv{l}.b"]
        M = np.split(Mcat, cuts)
        U = np.vstack([P @ m for (P, _), m in zip(norm, M)])
        Y, bn_cache = _bn_forward(
            U,
            p[f"bn{l}.gamma"],
            p[f"bn{l}.beta"],
            model.buffers[f"bn{l}.running_mean"],
            model.buffers[f"bn{l}.running_var"],
            cfg.bn_eps,
            train,
        )
        Zcat = np.maximum(Y, 0.0)
        Z = np.split(Zcat, cuts)
        lv = dict(H=H, A=A, norm=norm, M=M, Hcat=Hcat, Y=Y, bn=bn_cache, sizes=sizes, cuts=cuts, Z=Z)
        if l < cfg.levels:
            Wp, bp = p[f"pool{l}.W"], p[f"pool{l}.b"]
            pools = []
            H_next, A_next = [], []
            for h, a, (P, _), z in zip(H, A, norm, Z):
                k = cfg.cluster_count(h.shape[0])
                Mp = h @ Wp[:k].T + bp[:k]
                S, logS = _softmax(P @ Mp)
                pools.append((k, Mp, S, logS))
                H_next.append(S.T @ z)
                A_next.append(S.T @ a @ S)
                n = h.shape[0]
                if cfg.link_loss_weight:
                    aux_link += np.sum((a - S @ S.T) ** 2) / n**2
                if cfg.entropy_loss_weight:
                    aux_ent += -np.sum(S * logS) / n
            lv["pools"] = pools
            H, A = H_next, A_next
        levels.append(lv)
    E = np.vstack([z.mean(axis=0) for z in levels[-1]["Z"]])
    Fpre = E @ p["fc1.W"].T + p["fc1.b"]
    F = np.maximum(Fpre, 0.0)
    out = (F @ p["fc2.W"].T + p["fc2.b"]).ravel()
    B = len(batch)
    aux = (cfg.link_loss_weight * aux_link + cfg.entropy_loss_weight * aux_ent) / B
    cache = dict(levels=levels, E=E, Fpre=Fpre, F=F, aux=aux)
    return out, cache


def _update_running_stats(model: GcnModel, cache) -> None:
    m = model.config.bn_momentum
    for l, lv in enumerate(cache["levels"]):
        _, _, mu, var, _ = lv["bn"]
        N = lv["Y"].shape[0]
        unbiased = var * N / (N - 1) if N > 1 else var
        rm = model.buffers[f"bn{l}.running_mean"]
        rv = model.buffers[f"bn{l}.running_var"]
        model.buffers[f"bn{l}.running_mean"] = (1 - m) * rm + m * mu
        model.buffers[f"bn{l}.running_var"] = (1 - m) * rv + m * unbiased


def _backward(model: GcnModel, cache, d_out: np.ndarray) -> dict[str, np.ndarray]:
    cfg, p = model.config, model.params
    g = {k: np.zeros_like(v) for k, v in p.items()}
    levels = cache["levels"]
    B = len(d_out)
    d2 = d_out[:, None]
    g["fc2.W"] += d2.T @ cache["F"]
    g["fc2.b"] += d2.sum(axis=0)
    dFpre = (d2 @ p["fc2.W"]) * (cache["Fpre"] > 0)
    g["fc1.W"] += dFpre.T @ cache["E"]
    g["fc1.b"] += dFpre.sum(axis=0)
    dE = dFpre @ p["fc1.W"]

    dH_in = dA_in = None  # gradients w.r.t. the inputs of level l+1
    for l in range(cfg.levels, -1, -1):
        lv = levels[l]
        H, A, norm, Z = lv["H"], lv["A"], lv["norm"], lv["Z"]
        dP = [np.zeros_like(P) for P, _ in norm]
        dH_pool = [None] * len(H)
        if l == cfg.levels:
            dZ = [np.broadcast_to(dE[i] / z.shape[0], z.shape) for i, z in enumerate(Z)]
        else:
            dZ = []
            dA = []
            Wp = p[f"pool{l}.W"]
            for i, (h, a, (P, _), z, (k, Mp, S, logS)) in enumerate(zip(H, A, norm, Z, lv["pools"])):
                dHn, dAn = dH_in[i], dA_in[i]
                dZ.append(S @ dHn)
                dS = z @ dHn.T + a @ S @ dAn.T + a.T @ S @ dAn
                da = S @ dAn @ S.T
                n = h.shape[0]
                if cfg.link_loss_weight:
                    R = a - S @ S.T
                    w = cfg.link_loss_weight / B
                    dS += -w * 2.0 / n**2 * (R + R.T) @ S
                    da = da + w * 2.0 / n**2 * R
                if cfg.entropy_loss_weight:
                    dS += -(cfg.entropy_loss_weight / B) * (logS + 1.0) / n
                dlog = S * (dS - (dS * S).sum(axis=1, keepdims=True))
                dMp = P.T @ dlog
                dP[i] += dlog @ Mp.T
                g[f"pool{l}.W"][:k] += dMp.T @ h
                g[f"pool{l}.b"][:k] += dMp.sum(axis=0)
                dH_pool[i] = dMp @ Wp[:k]
                dA.append(da)
        dY = np.vstack(dZ) * (lv["Y"] > 0)
        dU, dgamma, dbeta = _bn_backward(dY, p[f"bn{l}.gamma"], lv["bn"])
        g[f"bn{l}.gamma"] += dgamma
        g[f"bn{l}.beta"] += dbeta
        dUs = np.split(dU, lv["cuts"])
        dM = []
        for i, ((P, _), m, du) in enumerate(zip(norm, lv["M"], dUs)):
            dM.append(P.T @ du)
            dP[i] += du @ m.T
        dMcat = np.vstack(dM)
        W = p[f"conv{l}.W"]
        g[f"conv{l}.W"] += dMcat.T @ lv["Hcat"]
        g[f"conv{l}.b"] += dMcat.sum(axis=0)
        if l == 0:
            break
        dHs = np.split(dMcat @ W, lv["cuts"])
        dH_in = [dh + dp if dp is not None else dh for dh, dp in zip(dHs, dH_pool)]
        dA_level = [
            _normalize_adjacency_backward(dp, a, dinv, cfg.add_self_loops)
            for dp, a, (_, dinv) in zip(dP, A, norm)
        ]
        if l < cfg.levels:
            dA_level = [x + y for x, y in zip(dA_level, dA)]
        dA_in = dA_level
    return g


def loss_and_grads(model: GcnModel, batch: Sequence[EncodedGraph], targets_std: np.ndarray, train: bool = True, update_stats: bool = False):
    """Mean squared error on standardized targets (plus auxiliary pooling terms) and its gradient."""
    out, cache = _forward(model, batch, train)
    resid = out - targets_std
    mse = float(np.mean(resid**2))
    grads = _backward(model, cache, 2.0 * resid / len(batch))
    if update_stats:
        _update_running_stats(model, cache)
    return mse + cache["aux"], mse, grads


def _loss_only(model, batch, targets_std, train=True):
    out, cache = _forward(model, batch, train)
    return np.mean((out - targets_std) ** 2) + cache["aux"]


# ---------------------------------------------------------------- public inference

def _infer(model: GcnModel, graphs, batch_size: int = 256):
    enc = _as_encoded(graphs)
    outs, emb, hid = [], [], []
    for s in range(0, len(enc), batch_size):
        out, cache = _forward(model, enc[s : s + batch_size], train=False)
        outs.append(out)
        emb.append(cache["E"])
        hid.append(cache["F"])
    return np.concatenate(outs), np.vstack(emb), np.vstack(hid)


def predict(model: GcnModel, graphs) -> np.ndarray:
    """Predictions in target units (inference-mode batch norm)."""
    out, _, _ = _infer(model, graphs)
    return out * model.target_std + model.target_mean


def tap_matrix(model: GcnModel, graphs, tap: TapPoint | str) -> np.ndarray:
    tap = TapPoint.parse(tap)
    out, emb, hid = _infer(model, graphs)
    if tap is TapPoint.L:
        return (out * model.target_std + model.target_mean)[:, None]
    return hid if tap is TapPoint.L_MINUS_1 else emb


def forward(model: GcnModel, graph: MolecularGraph | EncodedGraph, tap: TapPoint | str | None = None):
    """Scalar prediction for one graph, or the activation vector at ``tap``."""
    if tap is None:
        return float(predict(model, [graph])[0])
    return tap_matrix(model, [graph], tap)[0]


# ---------------------------------------------------------------- training

@dataclass
class TrainOptions:
    lr: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 2000
    patience: int = 50
    min_delta: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8


@dataclass
class TrainingLog:
    epochs: list[tuple[int, float, float]] = field(default_factory=list)
    best_epoch: int = 0
    stopped_epoch: int = 0
    options: dict = field(default_factory=dict)

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("epoch,train_mse,val_mse\n")
            for e, tr, va in self.epochs:
                fh.write(f"{e},{tr!r},{va!r}\n")


class _Adam:
    def __init__(self, params: dict[str, np.ndarray], opts: TrainOptions):
        self.opts = opts
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        o = self.opts
        self.t += 1
        c1 = 1 - o.beta1**self.t
        c2 = 1 - o.beta2**self.t
        for k, gk in grads.items():
            self.m[k] = o.beta1 * self.m[k] + (1 - o.beta1) * gk
            self.v[k] = o.beta2 * self.v[k] + (1 - o.beta2) * gk * gk
            params[k] = params[k] - o.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + o.adam_eps)


def evaluate_mse(model: GcnModel, graphs, targets) -> float:
    """MSE in standardized target units, inference mode."""
    pred = predict(model, graphs)
    return float(np.mean(((pred - np.asarray(targets, float)) / model.target_std) ** 2))


def train(
    config: GcnConfig | None,
    train_graphs,
    train_targets,
    val_graphs,
    val_targets,
    seed: int = 0,
    options: TrainOptions | None = None,
    callback: Callable[[int, float, float], None] | None = None,
) -> tuple[GcnModel, TrainingLog]:
    """Fit the extractor with Adam and early stopping on validation MSE.

    Returns the parameters of the best validation epoch together with a
    per-epoch log. Raises TrainingDivergedError on a non-finite loss.
    """
    opts = options or TrainOptions()
    if not len(train_graphs) or not len(val_graphs):
        raise ValueError("training and validation sets must be non-empty")
    y = np.asarray(train_targets, dtype=float)
    yv = np.asarray(val_targets, dtype=float)
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(yv))):
        raise ValueError("targets must be finite")
    model = init_model(config, seed)
    model.target_mean = float(y.mean())
    std = float(y.std())
    model.target_std = std if std > 0 else 1.0
    ys = (y - model.target_mean) / model.target_std

    tr = _as_encoded(train_graphs)
    va = _as_encoded(val_graphs)
    rng = np.random.default_rng(seed + 1)
    adam = _Adam(model.params, opts)
    log = TrainingLog(options=asdict(opts) | {"optimizer": "adam", "seed": seed})

    best = math.inf
    best_state = (copy.deepcopy(model.params), copy.deepcopy(model.buffers))
    wait = 0
    for epoch in range(1, opts.max_epochs + 1):
        order = rng.permutation(len(tr))
        total = 0.0
        for s in range(0, len(order), opts.batch_size):
            idx = order[s : s + opts.batch_size]
            _, mse, grads = loss_and_grads(model, [tr[i] for i in idx], ys[idx], train=True, update_stats=True)
            if not math.isfinite(mse) or not all(np.all(np.isfinite(gv)) for gv in grads.values()):
                raise TrainingDivergedError(f"non-finite loss or gradient at epoch {epoch}, batch starting {s}")
            adam.step(model.params, grads)
            total += mse * len(idx)
        train_mse = total / len(tr)
        val_mse = evaluate_mse(model, va, yv)
        if not math.isfinite(val_mse):
            raise TrainingDivergedError(f"non-finite validation loss at epoch {epoch}")
        log.epochs.append((epoch, train_mse, val_mse))
        if callback:
            callback(epoch, train_mse, val_mse)
        if val_mse < best - opts.min_delta:
            best = val_mse
            log.best_epoch = epoch
            best_state = (copy.deepcopy(model.params), copy.deepcopy(model.buffers))
            wait = 0
        else:
            wait += 1
        log.stopped_epoch = epoch
        if wait >= opts.patience:
            logger.info("early stop at epoch %d (best %d, val %.5f)", epoch, log.best_epoch, best)
            break
    model.params, model.buffers = best_state
    return model, log


# ---------------------------------------------------------------- gradient check

def gradient_check_report(
    model: GcnModel,
    graphs,
    targets,
    epsilon: float = 1e-5,
    train_mode: bool = False,
    max_entries: int | None = None,
    seed: int = 0,
    corrupt: str | None = None,
    extended_precision: bool = True,
) -> dict[str, float]:
    """Per-tensor max relative error between analytic and central-difference gradients.

    ``targets`` are in target units. ``max_entries`` samples that many
    entries per tensor instead of checking all of them. ``corrupt`` names a
    tensor whose analytic gradient is sign-flipped (negative control).

    The default checks the inference-mode network. In training mode a batch
    with a single node row at some level normalizes that row to exactly
    ``beta``, which sits on a ReLU kink at initialization; check training
    mode on batches of several graphs instead.

    The analytic gradient is computed in float64. With ``extended_precision``
    the perturbed losses are evaluated in ``np.longdouble`` so that roundoff
    in the difference quotient does not swamp gradients near 1e-9.
    """
    if isinstance(graphs, (MolecularGraph, EncodedGraph)):
        graphs, targets = [graphs], [targets]
    enc = _as_encoded(graphs)
    ys = (np.asarray(targets, dtype=float) - model.target_mean) / model.target_std
    _, _, grads = loss_and_grads(model.copy(), enc, ys, train=train_mode)
    work = model.copy()
    if extended_precision:
        ld = np.longdouble
        work.params = {k: v.astype(ld) for k, v in work.params.items()}
        work.buffers = {k: v.astype(ld) for k, v in work.buffers.items()}
        enc = [EncodedGraph(e.x.astype(ld), e.adj.astype(ld)) for e in enc]
        ys = ys.astype(ld)
    if corrupt is not None:
        grads[corrupt] = -grads[corrupt]
    rng = np.random.default_rng(seed)
    report = {}
    for name, param in work.params.items():
        flat = param.reshape(-1)
        ga = grads[name].reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        worst = 0.0
        for j in idx:
            orig = flat[j]
            flat[j] = orig + epsilon
            lp = _loss_only(work, enc, ys, train_mode)
            flat[j] = orig - epsilon
            lm = _loss_only(work, enc, ys, train_mode)
            flat[j] = orig
            gn = float((lp - lm) / (2 * epsilon))
            err = abs(ga[j] - gn) / max(1e-8, abs(ga[j]) + abs(gn))
            worst = max(worst, err)
        report[name] = worst
    return report


def gradient_check(model, graph, target, epsilon: float = 1e-5, **kwargs) -> float:
    """Max relative error over all parameters (see gradient_check_report)."""
    return max(gradient_check_report(model, graph, target, epsilon, **kwargs).values())


# ---------------------------------------------------------------- persistence

def save_model(model: GcnModel, path) -> None:
    meta = {
        "kind": "gcn",
        "config": asdict(model.config),
        "target_mean": model.target_mean,
        "target_std": model.target_std,
        "seed": model.seed,
        "params": list(model.params),
        "buffers": list(model.buffers),
    }
    arrays = {f"param:{k}": v for k, v in model.params.items()}
    arrays.update({f"buffer:{k}": v for k, v in model.buffers.items()})
    container.dump(path, MAGIC, meta, arrays)


def load_model(path) -> GcnModel:
    meta, arrays = container.load(path, MAGIC)
    cfg = GcnConfig(**meta["config"])
    params = {k: arrays[f"param:{k}"] for k in meta["params"]}
    buffers = {k: arrays[f"buffer:{k}"] for k in meta["buffers"]}
    return GcnModel(cfg, params, buffers, meta["target_mean"], meta["target_std"], meta["seed"])
