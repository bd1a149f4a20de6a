"""Dense encoder-decoder networks with hand-written backpropagation.

The encoder narrows ``d0 > d1 > ... > d_k`` through ReLU layers; the decoder
mirrors it back up to ``d1`` and then maps to the head's output width with an
identity layer. Two heads exist: a softmax cross-entropy over dummy columns and
a mean-squared error over numerical columns.

Arrays are batch-first: a batch of ``b`` inputs is a ``(b, d0)`` matrix.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, DivergenceDetected, InvalidSpec, ShapeMismatch, StaleCache

CHECKPOINT_FORMAT = "kmfm-net"
CHECKPOINT_VERSION = 1


# --------------------------------------------------------------------- heads

def _as_batch(a, width: int, what: str) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2 or a.shape[1] != width:
        raise ShapeMismatch(f"{what}: expected width {width}, got shape {a.shape}")
    return a


def _log_softmax(z: np.ndarray, blocks: Optional[Sequence[slice]]) -> np.ndarray:
    if blocks is None:
        blocks = [slice(0, z.shape[1])]
    out = np.empty_like(z)
    for sl in blocks:
        zb = z[:, sl]
        shifted = zb - zb.max(axis=1, keepdims=True)
        out[:, sl] = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    return out


def softmax_probs(logits, blocks: Optional[Sequence[slice]] = None) -> np.ndarray:
    """Softmax over all entries (or independently per block)."""
    z = _as_batch(logits, np.shape(logits)[-1], "logits")
    p = np.exp(_log_softmax(z, blocks))
    return p[0] if np.ndim(logits) == 1 else p


def softmax_nll(logits, onehot, blocks: Optional[Sequence[slice]] = None):
    """Negative log-likelihood of the active dummy entries under a softmax.

    With ``blocks=None`` a single softmax spans every dummy column; otherwise
    each category block gets its own softmax. Returns a scalar for vector input
    and a per-sample vector for batch input.
    """
    width = np.shape(logits)[-1]
    z = _as_batch(logits, width, "logits")
    y = _as_batch(onehot, width, "onehot")
    loss = -(y * _log_softmax(z, blocks)).sum(axis=1)
    return float(loss[0]) if np.ndim(logits) == 1 else loss


def mse(pred, target):
    """Per-sample ``||target - pred||^2 / p1``."""
    width = np.shape(target)[-1]
    if np.shape(pred)[-1] != width:
        raise ShapeMismatch(f"pred width {np.shape(pred)[-1]} != target width {width}")
    a = _as_batch(pred, width, "pred")
    b = _as_batch(target, width, "target")
    if a.shape != b.shape:
        raise ShapeMismatch(f"pred {a.shape} vs target {b.shape}")
    loss = ((b - a) ** 2).sum(axis=1) / width
    return float(loss[0]) if np.ndim(pred) == 1 else loss


@dataclass(frozen=True)
class SoftmaxCategorical:
    output_dim: int
    block_sizes: Optional[Tuple[int, ...]] = None  # set for per-category softmax

    kind = "softmax"

    @property
    def blocks(self):
        if self.block_sizes is None:
            return None
        out, start = [], 0
        for m in self.block_sizes:
            out.append(slice(start, start + m))
            start += m
        return out

    def loss(self, out, target):
        return softmax_nll(out, target, self.blocks)

    def grad(self, out, target):
        """d(per-sample loss)/d(logits) for a batch."""
        p = np.exp(_log_softmax(out, self.blocks))
        if self.blocks is None:
            return p * target.sum(axis=1, keepdims=True) - target
        g = np.empty_like(out)
        for sl in self.blocks:
            g[:, sl] = p[:, sl] * target[:, sl].sum(axis=1, keepdims=True) - target[:, sl]
        return g

    def to_dict(self):
        return {"kind": self.kind, "output_dim": self.output_dim,
                "block_sizes": None if self.block_sizes is None else list(self.block_sizes)}


@dataclass(frozen=True)
class MseNumerical:
    output_dim: int

    kind = "mse"

    def loss(self, out, target):
        return mse(out, target)

    def grad(self, out, target):
        return 2.0 * (out - target) / self.output_dim

    def to_dict(self):
        return {"kind": self.kind, "output_dim": self.output_dim}


def head_from_dict(d):
    if d["kind"] == "softmax":
        bs = d.get("block_sizes")
        return SoftmaxCategorical(d["output_dim"], None if bs is None else tuple(bs))
    if d["kind"] == "mse":
        return MseNumerical(d["output_dim"])
    raise InvalidSpec(f"unknown head {d['kind']!r}")


# ------------------------------------------------------------------- network

@dataclass(frozen=True)
class NetworkSpec:
    layer_dims: Tuple[int, ...]
    head: object
    use_bias: bool = True
    seed: int = 0

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        object.__setattr__(self, "layer_dims", dims)
        if len(dims) < 2:
            raise InvalidSpec("need at least one encoder layer")
        if min(dims) < 1:
            raise InvalidSpec(f"all widths must be >= 1: {dims}")
        if any(a <= b for a, b in zip(dims, dims[1:])):
            raise InvalidSpec(f"encoder widths must strictly decrease: {dims}")
        if self.head.output_dim < 1:
            raise InvalidSpec("head output_dim must be >= 1")

    @property
    def kappa(self) -> int:
        return len(self.layer_dims) - 1

    def to_dict(self):
        return {"layer_dims": list(self.layer_dims), "head": self.head.to_dict(),
                "use_bias": self.use_bias, "seed": int(self.seed)}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["layer_dims"]), head_from_dict(d["head"]), d["use_bias"], d["seed"])


def layer_widths(d0: int, kappa: int, latent: Optional[int] = None) -> Tuple[int, ...]:
    """Geometric widths from ``d0`` down to the latent width, forced strictly decreasing.

    The latent width defaults to ``min(16, d0 - 1)`` and is capped at ``d0 - kappa``,
    the widest latent that still leaves room for ``kappa`` strict decrements.
    """
    if kappa < 1:
        raise InvalidSpec("kappa must be >= 1")
    cap = d0 - kappa
    if cap < 1:
        raise InvalidSpec(f"input width {d0} cannot shrink through {kappa} layers")
    latent = min(16, d0 - 1) if latent is None else int(latent)
    latent = max(1, min(latent, cap))
    dims = [d0]
    for v in range(1, kappa + 1):
        target = d0 * (latent / d0) ** (v / kappa)
        w = int(round(target))
        w = min(w, dims[-1] - 1)
        w = max(w, latent + (kappa - v))
        dims.append(w)
    return tuple(dims)


@dataclass
class DenseLayer:
    weights: np.ndarray  # (d_out, d_in)
    bias: np.ndarray  # (d_out,)
    activation: str = "relu"

    @property
    def d_in(self):
        return self.weights.shape[1]

    @property
    def d_out(self):
        return self.weights.shape[0]


@dataclass
class EncoderDecoderNet:
    spec: NetworkSpec
    encoder: List[DenseLayer]
    decoder: List[DenseLayer]
    version: int = field(default=0, compare=False)

    @property
    def head(self):
        return self.spec.head

    @property
    def layers(self) -> List[DenseLayer]:
        return self.encoder + self.decoder

    @property
    def input_dim(self) -> int:
        return self.spec.layer_dims[0]

    @property
    def latent_dim(self) -> int:
        return self.spec.layer_dims[-1]

    def parameters(self) -> List[np.ndarray]:
        out = []
        for layer in self.layers:
            out += [layer.weights, layer.bias]
        return out

    def copy(self) -> "EncoderDecoderNet":
        dup = lambda ls: [DenseLayer(l.weights.copy(), l.bias.copy(), l.activation) for l in ls]
        return EncoderDecoderNet(self.spec, dup(self.encoder), dup(self.decoder), self.version)


def init_network(spec: NetworkSpec) -> EncoderDecoderNet:
    """Fan-in scaled uniform weights (He-uniform bound), zero biases, seeded."""
    rng = np.random.default_rng(spec.seed)
    dims = spec.layer_dims
    enc_pairs = list(zip(dims[:-1], dims[1:]))
    rev = dims[::-1]
    dec_pairs = list(zip(rev[:-2], rev[1:-1])) + [(dims[1], spec.head.output_dim)]

    def make(d_in, d_out, act):
        bound = math.sqrt(6.0 / d_in)
        return DenseLayer(rng.uniform(-bound, bound, size=(d_out, d_in)), np.zeros(d_out), act)

    encoder = [make(a, b, "relu") for a, b in enc_pairs]
    decoder = [make(a, b, "relu") for a, b in dec_pairs]
    decoder[-1].activation = "identity"
    return EncoderDecoderNet(spec, encoder, decoder)


@dataclass
class ForwardCache:
    inputs: List[np.ndarray]  # input to each layer
    pre: List[np.ndarray]  # pre-activation of each layer
    version: int
    net_id: int
    batched: bool


def forward(net: EncoderDecoderNet, x):
    """Run one input (vector) or a batch (matrix).

    Returns ``(latent, output, cache)`` where ``output`` is the decoder's final
    pre-head vector (logits for the softmax head, predictions for MSE).
    """
    batched = np.ndim(x) == 2
    h = _as_batch(x, net.input_dim, "forward input")
    if not np.all(np.isfinite(h)):
        raise ShapeMismatch("forward input must be finite")
    inputs, pre = [], []
    latent = None
    for i, layer in enumerate(net.layers):
        inputs.append(h)
        z = h @ layer.weights.T
        if net.spec.use_bias:
            z = z + layer.bias
        pre.append(z)
        h = np.maximum(z, 0.0) if layer.activation == "relu" else z
        if i == len(net.encoder) - 1:
            latent = h
    cache = ForwardCache(inputs, pre, net.version, id(net), batched)
    if batched:
        return latent, h, cache
    return latent[0], h[0], cache


def backward(net: EncoderDecoderNet, cache: ForwardCache, loss_grad, latent_grad=None):
    """Gradients of a loss w.r.t. every ``(weights, bias)`` pair, summed over the batch.

    ``loss_grad`` is dL/d(output); ``latent_grad`` optionally adds dL/d(latent)
    for losses that also depend on the code. ReLU' is 0 at exactly 0.
    """
    if cache.version != net.version or cache.net_id != id(net):
        raise StaleCache("forward cache does not match the network's current parameters")
    g = _as_batch(loss_grad, net.layers[-1].d_out, "loss_grad")
    if g.shape[0] != cache.inputs[0].shape[0]:
        raise ShapeMismatch("loss_grad batch size differs from cached batch")
    lg = None
    if latent_grad is not None:
        lg = _as_batch(latent_grad, net.latent_dim, "latent_grad")
    grads = [None] * len(net.layers)
    n_enc = len(net.encoder)
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        if i == n_enc - 1 and lg is not None:
            g = g + lg
        if layer.activation == "relu":
            g = g * (cache.pre[i] > 0)
        dw = g.T @ cache.inputs[i]
        db = g.sum(axis=0) if net.spec.use_bias else np.zeros(layer.d_out)
        grads[i] = (dw, db)
        if i > 0:
            g = g @ layer.weights
    return grads


def encode_all(net: EncoderDecoderNet, inputs, chunk: int = 8192) -> np.ndarray:
    """Latent codes for every row of ``inputs``."""
    x = np.asarray(inputs, dtype=float)
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise ShapeMismatch(f"encode_all expects (n, {net.input_dim}), got {x.shape}")
    out = np.empty((x.shape[0], net.latent_dim))
    for s in range(0, x.shape[0], chunk):
        h = x[s:s + chunk]
        for layer in net.encoder:
            z = h @ layer.weights.T
            if net.spec.use_bias:
                z = z + layer.bias
            h = np.maximum(z, 0.0)
        out[s:s + chunk] = h
    return out


def predict(net: EncoderDecoderNet, inputs) -> np.ndarray:
    _, out, _ = forward(net, np.atleast_2d(inputs))
    return out


def mean_loss(net: EncoderDecoderNet, inputs, targets) -> float:
    _, out, _ = forward(net, inputs)
    return float(np.mean(net.head.loss(out, np.asarray(targets, dtype=float))))


# ----------------------------------------------------------------- optimizers

class Sgd:
    def __init__(self, lr):
        self.lr = lr

    def step(self, params, grads):
        for p, g in zip(params, grads):
            p -= self.lr * g


class Momentum:
    def __init__(self, lr, mu=0.9):
        self.lr, self.mu = lr, mu
        self.vel = None

    def step(self, params, grads):
        if self.vel is None:
            self.vel = [np.zeros_like(p) for p in params]
        for p, g, v in zip(params, grads, self.vel):
            v *= self.mu
            v -= self.lr * g
            p += v


class Adam:
    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = self.v = None

    def step(self, params, grads):
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 32
    learning_rate: float = 1e-3
    optimizer: str = "adam"  # sgd | momentum | adam
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    shuffle_seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")
        if self.optimizer not in ("sgd", "momentum", "adam"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")

    def make_optimizer(self):
        if self.optimizer == "sgd":
            return Sgd(self.learning_rate)
        if self.optimizer == "momentum":
            return Momentum(self.learning_rate, self.momentum)
        return Adam(self.learning_rate, self.beta1, self.beta2, self.eps)


@dataclass
class LossHistory:
    train: List[float] = field(default_factory=list)
    validation: List[Optional[float]] = field(default_factory=list)

    def __len__(self):
        return len(self.train)

    def rows(self):
        return list(zip(range(1, len(self.train) + 1), self.train, self.validation))

    def to_dict(self):
        return {"train": list(self.train), "validation": list(self.validation)}

    @classmethod
    def from_dict(cls, d):
        return cls(list(d["train"]), list(d["validation"]))


def flat_grads(grads):
    out = []
    for dw, db in grads:
        out += [dw, db]
    return out


def train(net: EncoderDecoderNet, train_data, validation_data=None, cfg: TrainConfig = TrainConfig()):
    """Mini-batch training on the mean per-sample head loss.

    Returns a trained copy of ``net`` and the per-epoch mean train/validation losses.
    """
    x, y = (np.asarray(a, dtype=float) for a in train_data)
    if x.ndim != 2 or y.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ShapeMismatch("train inputs and targets must be matrices with equal row counts")
    if x.shape[1] != net.input_dim or y.shape[1] != net.head.output_dim:
        raise ShapeMismatch("train data width does not match the network")
    n = x.shape[0]
    if cfg.batch_size > n:
        raise ConfigError(f"batch_size {cfg.batch_size} exceeds {n} training rows")
    if validation_data is not None:
        xv, yv = (np.asarray(a, dtype=float) for a in validation_data)

    net = net.copy()
    opt = cfg.make_optimizer()
    rng = np.random.default_rng(cfg.shuffle_seed)
    hist = LossHistory()
    params = net.parameters()
    with np.errstate(over="ignore", invalid="ignore"):  # divergence is reported below
        for epoch in range(1, cfg.epochs + 1):
            _run_epoch(net, opt, params, x, y, rng.permutation(n), cfg.batch_size)
            tl = mean_loss(net, x, y)
            vl = mean_loss(net, xv, yv) if validation_data is not None else None
            if not math.isfinite(tl) or (vl is not None and not math.isfinite(vl)):
                raise DivergenceDetected(epoch)
            hist.train.append(tl)
            hist.validation.append(vl)
    return net, hist


def _run_epoch(net, opt, params, x, y, order, batch_size):
    for s in range(0, len(order), batch_size):
        idx = order[s:s + batch_size]
        _, out, cache = forward(net, x[idx])
        g = net.head.grad(out, y[idx]) / len(idx)
        opt.step(params, flat_grads(backward(net, cache, g)))
        net.version += 1


# ---------------------------------------------------------------- checkpoints

def net_to_arrays(net: EncoderDecoderNet, prefix: str = "") -> dict:
    arrays = {}
    for part, layers in (("enc", net.encoder), ("dec", net.decoder)):
        for i, layer in enumerate(layers):
            arrays[f"{prefix}{part}{i}_W"] = layer.weights
            arrays[f"{prefix}{part}{i}_b"] = layer.bias
    return arrays


def net_from_arrays(spec: NetworkSpec, arrays, prefix: str = "") -> EncoderDecoderNet:
    net = init_network(spec)
    for part, layers in (("enc", net.encoder), ("dec", net.decoder)):
        for i, layer in enumerate(layers):
            w = np.array(arrays[f"{prefix}{part}{i}_W"], dtype=float)
            b = np.array(arrays[f"{prefix}{part}{i}_b"], dtype=float)
            if w.shape != layer.weights.shape or b.shape != layer.bias.shape:
                raise ShapeMismatch(f"checkpoint layer {part}{i} has wrong shape")
            layer.weights, layer.bias = w, b
    return net


def save_network(net: EncoderDecoderNet, path) -> None:
    """Write spec + parameters to an uncompressed ``.npz`` container (float64, exact)."""
    meta = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION, "spec": net.spec.to_dict()}
    with open(path, "wb") as fh:
        np.savez(fh, meta=np.array(json.dumps(meta, sort_keys=True)), **net_to_arrays(net))


def load_network(path) -> EncoderDecoderNet:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["meta"]))
        if meta.get("format") != CHECKPOINT_FORMAT or meta.get("version") != CHECKPOINT_VERSION:
            raise InvalidSpec(f"{path} is not a version-{CHECKPOINT_VERSION} network checkpoint")
        return net_from_arrays(NetworkSpec.from_dict(meta["spec"]), z)
