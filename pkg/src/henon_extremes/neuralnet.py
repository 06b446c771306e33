"""Fully connected ReLU/softmax classifier with hand-written backprop and Adam.

All weights and biases live in one contiguous float64 vector; per-layer
matrices are views into it. The optimizer then updates a single array, and
checkpoints are that array written out verbatim.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

LOG_CLIP = 1e-9


class TrainingDivergedError(FloatingPointError):
    def __init__(self, message: str, epoch: int | None = None):
        self.epoch = epoch
        if epoch is not None:
            message = f"{message} (epoch {epoch})"
        super().__init__(message)


@dataclass(frozen=True)
class NetworkTopology:
    layer_widths: tuple[int, ...]

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        if len(widths) < 3:
            raise ValueError("a topology needs at least 3 layers")
        if min(widths) < 1:
            raise ValueError("all layer widths must be >= 1")
        if widths[-1] != 2:
            raise ValueError("the output layer must have exactly 2 units")

    @classmethod
    def baseline(cls, history_length: int = 10) -> "NetworkTopology":
        return cls((2 * history_length, 32, 32, 25, 20, 18, 16, 2))

    @property
    def input_dim(self) -> int:
        return self.layer_widths[0]

    @property
    def n_layers(self) -> int:
        return len(self.layer_widths)

    @property
    def weight_shapes(self) -> list[tuple[int, int]]:
        w = self.layer_widths
        return [(w[i], w[i - 1]) for i in range(1, len(w))]


def count_parameters(topology: NetworkTopology, biases: bool = True) -> int:
    n = sum(r * c for r, c in topology.weight_shapes)
    if biases:
        n += sum(topology.layer_widths[1:])
    return n


class NetworkParameters:
    """Weights W[i] of shape (width_i, width_{i-1}) and biases b[i].

    Flat layout, layer by layer: W row-major, then b (omitted when the
    network has no biases).
    """

    def __init__(self, topology: NetworkTopology, flat: np.ndarray | None = None,
                 use_bias: bool = True):
        self.topology = topology
        self.use_bias = use_bias
        n = count_parameters(topology, use_bias)
        if flat is None:
            flat = np.zeros(n)
        flat = np.ascontiguousarray(flat, dtype=np.float64)
        if flat.shape != (n,):
            raise ValueError(f"expected {n} parameters, got shape {flat.shape}")
        self.flat = flat
        self.weights, self.biases = self.unpack(flat)

    def unpack(self, buf: np.ndarray):
        weights, biases = [], []
        o = 0
        for rows, cols in self.topology.weight_shapes:
            weights.append(buf[o:o + rows * cols].reshape(rows, cols))
            o += rows * cols
            if self.use_bias:
                biases.append(buf[o:o + rows])
                o += rows
            else:
                biases.append(None)
        return weights, biases

    def like(self, flat: np.ndarray | None = None) -> "NetworkParameters":
        return NetworkParameters(self.topology, flat, self.use_bias)

    def copy(self) -> "NetworkParameters":
        return self.like(self.flat.copy())

    def __len__(self) -> int:
        return self.flat.size


INIT_SCHEMES = ("glorot_uniform", "he_uniform")


def init_parameters(topology: NetworkTopology, rng: np.random.Generator,
                    use_bias: bool = True, scheme: str = "glorot_uniform") -> NetworkParameters:
    """Uniform random weights and zero biases.

    ``glorot_uniform`` draws from +-sqrt(6 / (fan_in + fan_out)) and
    ``he_uniform`` from +-sqrt(6 / fan_in).
    """
    if scheme not in INIT_SCHEMES:
        raise ValueError(f"unknown init scheme {scheme!r}")
    params = NetworkParameters(topology, use_bias=use_bias)
    for W in params.weights:
        fan_out, fan_in = W.shape
        denom = fan_in + fan_out if scheme == "glorot_uniform" else fan_in
        limit = math.sqrt(6.0 / denom)
        W[...] = rng.uniform(-limit, limit, size=W.shape)
    return params


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def forward_pass(params: NetworkParameters, X: np.ndarray):
    """Class probabilities for a feature vector or an (n, 2N) batch.

    Returns (probabilities, activations) where activations[0] is the input
    and activations[i] the post-ReLU output of hidden layer i; the final
    entry holds the output logits.
    """
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    h = X[None, :] if single else X
    if h.shape[1] != params.topology.input_dim:
        raise ValueError(f"input has {h.shape[1]} features, network expects "
                         f"{params.topology.input_dim}")
    acts = [h]
    last = len(params.weights) - 1
    with np.errstate(over="ignore", invalid="ignore"):
        for i, (W, b) in enumerate(zip(params.weights, params.biases)):
            z = h @ W.T
            if b is not None:
                z += b
            h = np.maximum(z, 0.0) if i < last else z
            acts.append(h)
        probs = softmax(h)
    if not np.isfinite(probs).all():
        raise TrainingDivergedError("non-finite network output")
    return (probs[0] if single else probs), acts


def _nll(probs: np.ndarray, labels: np.ndarray) -> float:
    p = np.clip(probs[:, 1], LOG_CLIP, 1.0 - LOG_CLIP)
    y = labels.astype(np.float64)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def loss(params: NetworkParameters, X: np.ndarray, labels) -> float:
    """Mean binary cross-entropy, as the positive quantity being minimised."""
    labels = np.asarray(labels, dtype=bool).reshape(-1)
    if labels.size == 0:
        raise ValueError("empty batch")
    probs, _ = forward_pass(params, np.atleast_2d(X))
    return _nll(probs, labels)


def loss_and_gradient(params: NetworkParameters, X: np.ndarray, labels,
                      out: np.ndarray | None = None):
    """Loss and its exact gradient, written into `out` (flat, congruent to params)."""
    labels = np.asarray(labels, dtype=bool).reshape(-1)
    n = labels.size
    if n == 0:
        raise ValueError("empty batch")
    probs, acts = forward_pass(params, np.atleast_2d(X))
    value = _nll(probs, labels)
    if out is None:
        out = np.empty_like(params.flat)
    gW, gb = params.unpack(out)
    # softmax + cross-entropy combined: dL/dlogits = p - onehot
    delta = probs.copy()
    delta[np.arange(n), labels.astype(np.intp)] -= 1.0
    delta /= n
    for i in range(len(params.weights) - 1, -1, -1):
        np.matmul(delta.T, acts[i], out=gW[i])
        if gb[i] is not None:
            np.sum(delta, axis=0, out=gb[i])
        if i:
            delta = delta @ params.weights[i]
            delta *= acts[i] > 0.0
    if not np.isfinite(out).all():
        raise TrainingDivergedError("non-finite gradient")
    return value, out


def backward_pass(params: NetworkParameters, X: np.ndarray, labels) -> NetworkParameters:
    """Gradient of `loss` with respect to every weight and bias."""
    _, g = loss_and_gradient(params, X, labels)
    return params.like(g)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: NetworkParameters, **hyper) -> "AdamState":
        return cls(np.zeros_like(params.flat), np.zeros_like(params.flat), **hyper)


def adam_step(params: NetworkParameters, grad, state: AdamState):
    """Bias-corrected Adam update, applied in place; returns (params, state)."""
    g = grad.flat if isinstance(grad, NetworkParameters) else grad
    if g.shape != params.flat.shape or state.m.shape != g.shape:
        raise ValueError("gradient, moments and parameters must be congruent")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    state.m *= b1
    state.m += (1.0 - b1) * g
    state.v *= b2
    state.v += (1.0 - b2) * (g * g)
    m_hat = state.m / (1.0 - b1 ** state.step)
    v_hat = state.v / (1.0 - b2 ** state.step)
    params.flat -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state


@dataclass
class TrainingConfig:
    batch_size: int = 128
    epochs: int = 5000
    seed: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    use_bias: bool = True
    init: str = "glorot_uniform"

    def __post_init__(self):
        if self.init not in INIT_SCHEMES:
            raise ValueError(f"unknown init scheme {self.init!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


def train(topology: NetworkTopology, X: np.ndarray, labels, config: TrainingConfig,
          init: NetworkParameters | None = None):
    """Minibatch Adam on standardised features.

    Each epoch reshuffles with the run's generator and visits every sample
    once; the final short batch is kept. Returns (params, per-epoch mean loss).
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if X.ndim != 2 or X.shape[1] != topology.input_dim or len(X) != len(labels):
        raise ValueError("training data does not match the topology")
    rng = np.random.default_rng(config.seed)
    params = init.copy() if init is not None else init_parameters(topology, rng, config.use_bias,
                                                                     config.init)
    state = AdamState.zeros_like(params, learning_rate=config.learning_rate,
                                 beta1=config.beta1, beta2=config.beta2, eps=config.eps)
    grad = np.empty_like(params.flat)
    n, m = len(X), config.batch_size
    history = []
    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        Xs, ys = X[perm], labels[perm]
        total = 0.0
        try:
            for lo in range(0, n, m):
                value, _ = loss_and_gradient(params, Xs[lo:lo + m], ys[lo:lo + m], out=grad)
                total += value * len(ys[lo:lo + m])
                adam_step(params, grad, state)
        except TrainingDivergedError as exc:
            raise TrainingDivergedError(str(exc), epoch) from None
        epoch_loss = total / n
        if not math.isfinite(epoch_loss):
            raise TrainingDivergedError("non-finite training loss", epoch)
        history.append(epoch_loss)
    return params, history


def predict(params: NetworkParameters, X: np.ndarray, chunk: int = 65536) -> np.ndarray:
    """Predicted exceedance flags (argmax of the two probabilities)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    out = np.empty(len(X), dtype=bool)
    for lo in range(0, len(X), chunk):
        probs, _ = forward_pass(params, X[lo:lo + chunk])
        out[lo:lo + chunk] = probs[:, 1] > probs[:, 0]
    return out


def accuracy(params: NetworkParameters, X: np.ndarray, labels) -> float:
    labels = np.asarray(labels, dtype=bool)
    if labels.size == 0:
        raise ValueError("empty corpus")
    return float(np.mean(predict(params, X) == labels))


def evaluate(params: NetworkParameters, corpus, std) -> float:
    """Fraction of windows in `corpus` classified correctly."""
    if len(corpus) == 0:
        raise ValueError("empty corpus")
    return accuracy(params, std.transform(corpus.flat()), corpus.labels)


def save_checkpoint(path, params: NetworkParameters, header: dict | None = None) -> None:
    """One JSON header line, then the flat parameters as little-endian float64."""
    meta = dict(header or {})
    meta.update(
        topology=list(params.topology.layer_widths),
        use_bias=params.use_bias,
        n_params=len(params),
        dtype="<f8",
    )
    with Path(path).open("wb") as fh:
        fh.write(json.dumps(meta, sort_keys=True).encode() + b"\n")
        fh.write(params.flat.astype("<f8").tobytes())


def load_checkpoint(path) -> tuple[NetworkParameters, dict]:
    with Path(path).open("rb") as fh:
        meta = json.loads(fh.readline())
        flat = np.frombuffer(fh.read(), dtype="<f8").astype(np.float64)
    if flat.size != meta["n_params"]:
        raise ValueError(f"checkpoint {path} is truncated")
    topology = NetworkTopology(tuple(meta["topology"]))
    return NetworkParameters(topology, flat, meta["use_bias"]), meta

