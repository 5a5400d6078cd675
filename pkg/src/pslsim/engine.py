"""Parallel split learning training loop and the centralized baseline.

One optimisation step:

1. every scheduled client draws its local batch and runs the client stack;
2. the server concatenates activations (ascending client index) and computes
   the mean cross-entropy over the global batch;
3. the server backpropagates, updates its own parameters and hands each
   client its slice of the cut-layer gradient;
4. clients backpropagate to get their parameter gradients;
5. the server averages them with weights D_k / D_0;
6. every client replica applies the same averaged update.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .deviation import l1_deviation
from .nn import LayerSpec, Stack, dense, group_norm, softmax_cross_entropy
from .sampling import DepletionState, client_rng, draw_local_batch

CHECKPOINT_VERSION = 1
SIZE_WEIGHTING = "size"
BATCH_WEIGHTING = "batch"


class ClientDesync(RuntimeError):
    pass


@dataclass
class ModelConfig:
    client_hidden: tuple = (64,)
    server_hidden: tuple = (64,)
    group_norm_groups: int = 0  # 0 disables client-side group normalisation

    def layers(self, num_classes: int):
        """Returns ``(layer specs, cut index)`` for a ReLU MLP split after the client stack."""
        layers = []
        for width in self.client_hidden:
            if self.group_norm_groups:
                layers += [dense(width), group_norm(width, self.group_norm_groups, "relu")]
            else:
                layers.append(dense(width, "relu"))
        cut = len(layers)
        layers += [dense(width, "relu") for width in self.server_hidden]
        layers.append(dense(num_classes))
        return layers, cut


class SplitModel:
    """Client stack replicated once per client, plus one server stack."""

    def __init__(self, input_dim, layers, cut_layer, K, seed=None, client_params=None,
                 server_params=None):
        if not 0 < cut_layer < len(layers):
            raise ValueError("cut layer must leave at least one layer on each side")
        if K < 1:
            raise ValueError("K must be >= 1")
        self.input_dim = int(input_dim)
        self.layers = list(layers)
        self.cut_layer = int(cut_layer)
        self.client_stack = Stack(input_dim, self.layers[:cut_layer])
        self.server_stack = Stack(self.client_stack.output_dim, self.layers[cut_layer:])
        if client_params is None or server_params is None:
            rng = np.random.default_rng(seed)
            client_params = self.client_stack.init(rng)
            server_params = self.server_stack.init(rng)
        client_params = np.asarray(client_params, dtype=np.float64)
        if client_params.ndim == 1:
            client_params = np.stack([client_params] * K)
        if client_params.shape != (K, self.client_stack.n_params):
            raise ValueError("client parameter block has the wrong shape")
        # row k is client k's replica
        self.client_params = client_params.copy()
        self.server_params = np.array(server_params, dtype=np.float64)
        if self.server_params.shape != (self.server_stack.n_params,):
            raise ValueError("server parameter vector has the wrong shape")

    @classmethod
    def build(cls, input_dim, num_classes, K, seed, config: ModelConfig | None = None):
        layers, cut = (config or ModelConfig()).layers(num_classes)
        return cls(input_dim, layers, cut, K, seed)

    @property
    def K(self) -> int:
        return self.client_params.shape[0]

    def in_sync(self) -> bool:
        return bool((self.client_params == self.client_params[0]).all())

    def logits(self, x, client=0):
        acts, _ = self.client_stack.forward(self.client_params[client], x)
        out, _ = self.server_stack.forward(self.server_params, acts)
        return out

    def save(self, path):
        header = {
            "version": CHECKPOINT_VERSION,
            "input_dim": self.input_dim,
            "cut_layer": self.cut_layer,
            "K": self.K,
            "layers": [spec.to_dict() for spec in self.layers],
        }
        np.savez(path, header=np.array(json.dumps(header, sort_keys=True)),
                 client=self.client_params, server=self.server_params)

    @classmethod
    def load(cls, path) -> "SplitModel":
        with np.load(path, allow_pickle=False) as data:
            header = json.loads(str(data["header"]))
            if header.get("version") != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {header.get('version')}")
            layers = [LayerSpec(**spec) for spec in header["layers"]]
            return cls(header["input_dim"], layers, header["cut_layer"], header["K"],
                       client_params=data["client"], server_params=data["server"])


@dataclass
class SGD:
    """SGD with heavy-ball momentum and L2 weight decay folded into the gradient."""

    lr: float = 1e-2
    momentum: float = 0.9
    weight_decay: float = 5e-4
    velocity: np.ndarray | None = None

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight decay must be non-negative")

    def step(self, params, grad):
        """Returns the updated parameter vector; ``params`` itself is untouched."""
        g = grad + self.weight_decay * params
        if self.velocity is None:
            self.velocity = np.zeros_like(params)
        if self.velocity.shape != params.shape:
            raise ValueError("velocity shape does not match parameters")
        self.velocity = self.momentum * self.velocity + g
        return params - self.lr * self.velocity


@dataclass
class OptimizerConfig:
    lr: float = 1e-2
    momentum: float = 0.9
    weight_decay: float = 5e-4

    def make(self) -> "Optimizers":
        return Optimizers(SGD(self.lr, self.momentum, self.weight_decay),
                          SGD(self.lr, self.momentum, self.weight_decay))


@dataclass
class Optimizers:
    """Server state plus one shared client state driving every replica identically."""

    server: SGD
    client: SGD


@dataclass
class StepTrace:
    step: int
    local_batches: list
    global_size: int
    loss: float
    cut_grad_norm: float
    client_grad_norm: float
    deviation: float = float("nan")
    seconds: float = 0.0


@dataclass
class ClientCache:
    client: int
    rows: int
    cache: list = field(repr=False)


@dataclass
class ServerCache:
    labels: np.ndarray
    clients: list
    splits: list
    cache: list = field(repr=False)
    grad_logits: np.ndarray = field(repr=False)
    consumed: bool = False


def client_forward(model: SplitModel, k: int, features):
    features = np.asarray(features, dtype=np.float64)
    if features.shape[0] == 0:
        raise ValueError("empty local batch")
    acts, cache = model.client_stack.forward(model.client_params[k], features)
    return acts, ClientCache(k, features.shape[0], cache)


def server_forward_loss(model: SplitModel, activations, labels, clients=None, weights=None):
    """Concatenate per-client activations in the given order and compute the mean loss."""
    activations = list(activations)
    labels = [np.asarray(y, dtype=np.int64) for y in labels]
    if len(activations) != len(labels) or not activations:
        raise ValueError("need one label vector per activation block")
    for a, y in zip(activations, labels):
        if a.shape[0] != y.shape[0]:
            raise ValueError(f"{a.shape[0]} activation rows but {y.shape[0]} labels")
    acts = np.concatenate(activations)
    y = np.concatenate(labels)
    logits, cache = model.server_stack.forward(model.server_params, acts)
    loss, grad_logits = softmax_cross_entropy(logits, y, weights)
    clients = list(range(len(activations))) if clients is None else list(clients)
    splits = [a.shape[0] for a in activations]
    return loss, logits, ServerCache(y, clients, splits, cache, grad_logits)


def server_backward(model: SplitModel, cache: ServerCache, optimizer: SGD | None):
    """Server gradients, server update, and per-client cut-layer gradient slices.

    The cut gradient is taken w.r.t. the pre-update server parameters.
    """
    if cache is None or cache.consumed:
        raise RuntimeError("server_backward needs a fresh server_forward_loss")
    grad_w, grad_cut = model.server_stack.backward(model.server_params, cache.cache,
                                                   cache.grad_logits)
    cache.consumed = True
    if optimizer is not None:
        model.server_params = optimizer.step(model.server_params, grad_w)
    return np.split(grad_cut, np.cumsum(cache.splits)[:-1])


def client_backward(model: SplitModel, cache: ClientCache, cut_grad):
    cut_grad = np.asarray(cut_grad, dtype=np.float64)
    if cut_grad.shape != (cache.rows, model.client_stack.output_dim):
        raise ValueError(f"cut gradient of shape {cut_grad.shape} for {cache.rows} rows")
    grad, _ = model.client_stack.backward(model.client_params[cache.client], cache.cache,
                                          cut_grad)
    return grad


def average_client_gradients(gradients, weights):
    """Weighted sum with weights normalised to 1, accumulated in ascending client order."""
    weights = np.asarray(weights, dtype=np.float64)
    if len(gradients) != weights.size or weights.size == 0:
        raise ValueError("need one weight per gradient")
    if (weights < 0).any() or weights.sum() <= 0:
        raise ValueError("weights must be non-negative with a positive sum")
    shape = np.shape(gradients[0])
    total = weights.sum()
    out = np.zeros(shape)
    for g, w in zip(gradients, weights):
        if np.shape(g) != shape:
            raise ValueError("gradient shapes differ between clients")
        out += (w / total) * g
    return out


def client_update(model: SplitModel, averaged_gradient, optimizer: SGD):
    if not model.in_sync():
        raise ClientDesync("client desync: replicas differ before the update")
    new = optimizer.step(model.client_params[0], averaged_gradient)
    model.client_params[:] = new
    return model


def _map(fn, items, workers):
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


def train_step(model, features, labels, local_batches, client_weights, optimizers,
               workers=1):
    """One full protocol step for the given per-client index arrays.

    ``client_weights`` holds the averaging weight of every client (zero for
    clients that sent nothing this step).
    """
    active = [k for k, ix in enumerate(local_batches) if len(ix)]
    if not active:
        raise ValueError("empty global batch")

    forwards = _map(lambda k: client_forward(model, k, features[local_batches[k]]), active,
                    workers)
    loss, _, scache = server_forward_loss(
        model, [a for a, _ in forwards], [labels[local_batches[k]] for k in active], active)
    cut = server_backward(model, scache, optimizers.server)
    grads = _map(lambda pair: client_backward(model, pair[0][1], pair[1]),
                 list(zip(forwards, cut)), workers)

    full = [np.zeros(model.client_stack.n_params) for _ in range(model.K)]
    for k, g in zip(active, grads):
        full[k] = g
    avg = average_client_gradients(full, client_weights)
    client_update(model, avg, optimizers.client)
    cut_norm = float(np.sqrt(sum(float((c * c).sum()) for c in cut)))
    return loss, cut_norm, float(np.linalg.norm(avg))


def train_epoch(model, dataset, partition, schedule, optimizers, seed, weighting=SIZE_WEIGHTING,
                workers=1, check_sync=False):
    """Run one epoch of the schedule; returns the list of StepTraces."""
    if schedule.K != partition.K or model.K != partition.K:
        raise ValueError(
            f"schedule ({schedule.K}), partition ({partition.K}) and model ({model.K}) "
            "disagree on the client count")
    sizes = partition.client_sizes
    if (schedule.client_totals() > sizes).any():
        raise ValueError("schedule asks for more samples than some client holds")
    if weighting not in (SIZE_WEIGHTING, BATCH_WEIGHTING):
        raise ValueError(f"unknown weighting {weighting!r}")

    beta0 = partition.pool_distribution()
    state = DepletionState.from_partition(partition)
    rngs = [client_rng(seed, k) for k in range(partition.K)]
    traces = []
    for t, row in enumerate(schedule.steps):
        if row.sum() == 0:
            continue
        start = time.perf_counter()
        local = [draw_local_batch(state, k, int(n), rngs[k]) for k, n in enumerate(row)]
        weights = sizes if weighting == SIZE_WEIGHTING else row
        loss, cut_norm, avg_norm = train_step(model, dataset.features, dataset.labels, local,
                                              weights, optimizers, workers)
        if check_sync and not model.in_sync():
            raise ClientDesync(f"client desync after step {t}")
        batch_labels = dataset.labels[np.concatenate(local)]
        traces.append(StepTrace(t, local, int(row.sum()), loss, cut_norm, avg_norm,
                                l1_deviation(batch_labels, beta0),
                                time.perf_counter() - start))
    return traces


def shuffled_batches(pool_size, B, seed):
    if not 1 <= B <= pool_size:
        raise ValueError("need 1 <= B <= pool size")
    order = np.random.default_rng(seed).permutation(pool_size)
    return [order[i:i + B] for i in range(0, pool_size, B)]


def centralized_train_epoch(model, dataset, B, optimizers, seed, batches=None):
    """Plain mini-batch SGD over a uniformly shuffled pool using client replica 0.

    Pass ``batches`` to replay a fixed sequence of global batches instead.
    """
    if batches is None:
        batches = shuffled_batches(dataset.size, B, seed)
    beta0 = np.bincount(dataset.labels, minlength=dataset.num_classes) / dataset.size
    traces = []
    for t, ix in enumerate(batches):
        ix = np.asarray(ix, dtype=np.int64)
        start = time.perf_counter()
        local = [ix] + [np.empty(0, np.int64)] * (model.K - 1)
        weights = np.zeros(model.K)
        weights[0] = 1.0
        loss, cut_norm, avg_norm = train_step(model, dataset.features, dataset.labels, local,
                                              weights, optimizers)
        traces.append(StepTrace(t, [ix], int(ix.size), loss, cut_norm, avg_norm,
                                l1_deviation(dataset.labels[ix], beta0),
                                time.perf_counter() - start))
    return traces


def evaluate(model, dataset) -> float:
    if dataset.size == 0:
        raise ValueError("empty test set")
    return float((model.logits(dataset.features).argmax(axis=1) == dataset.labels).mean())
