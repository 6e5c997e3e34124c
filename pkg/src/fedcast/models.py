"""The four forecasting architectures and client-side local training.

Every model consumes a (|F|+1) x (H+1) input (continuous features plus the
throughput history as an extra row) and emits an F-step throughput
forecast. Batch-norm parameters, including running statistics, are tagged
so the aggregation layer can treat them as client-local state.
"""

import json
import math
from dataclasses import dataclass, asdict

import numpy as np

from . import tensor as T
from .preprocess import stack_samples

ARCHS = ("CNN", "LSTM", "LSTM_CNN", "TRANSFORMER")

_TABLE_LR = {"CNN": 1e-3, "LSTM": 3e-4, "LSTM_CNN": 3e-3, "TRANSFORMER": 1e-3}
_DEFAULT_EPOCHS = {"CNN": 2, "LSTM": 3, "LSTM_CNN": 2, "TRANSFORMER": 3}


class ModelError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class ModelSpec:
    arch: str
    in_features: int          # |F|+1 input rows (throughput history included)
    history: int              # H
    horizon: int              # F
    hidden: int = 32          # LSTM hidden size / transformer d_model
    num_layers: int = 1       # recurrent layers
    num_heads: int = 2
    conv_channels: tuple = (8, 8)
    ff_dim: int = 0           # transformer feed-forward width; 0 -> 2*hidden
    use_batchnorm: bool = True
    use_positional: bool = True

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ModelError(f"unknown architecture {self.arch!r}")
        if self.in_features < 1 or self.history < 1 or self.horizon < 1:
            raise ModelError("in_features, history and horizon must be >= 1")
        if isinstance(self.conv_channels, list):
            self.conv_channels = tuple(self.conv_channels)
        if self.arch == "TRANSFORMER" and self.hidden % self.num_heads != 0:
            raise ModelError("hidden must be divisible by num_heads")
        if self.ff_dim == 0:
            self.ff_dim = 2 * self.hidden

    @property
    def steps(self):
        return self.history + 1


@dataclass
class TrainConfig:
    learning_rate: float
    batch_size: int = 32
    local_epochs: int = 2
    optimizer: str = "adam"
    prox_mu: float = 0.0
    include_bn_in_prox: bool = False

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ModelError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ModelError("batch_size must be >= 1")
        if self.optimizer not in ("sgd", "adam"):
            raise ModelError(f"unknown optimizer {self.optimizer!r}")
        if self.prox_mu < 0:
            raise ModelError("prox_mu must be >= 0")


def default_train_config(arch, **overrides):
    """Per-architecture learning rate and epoch defaults, batch size 32."""
    cfg = dict(learning_rate=_TABLE_LR[arch], batch_size=32,
               local_epochs=_DEFAULT_EPOCHS[arch])
    cfg.update(overrides)
    return TrainConfig(**cfg)


class ParamSet:
    """Ordered named parameters; the unit of federated exchange."""

    def __init__(self, entries):
        # entries: list of (name, Tensor, is_batchnorm)
        self.entries = list(entries)
        self._index = {}
        for name, t, _ in self.entries:
            if name in self._index:
                raise ModelError(f"duplicate parameter {name!r}")
            self._index[name] = t

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)

    def get(self, name):
        return self._index[name]

    def names(self):
        return [name for name, _, _ in self.entries]

    def trainable(self):
        return [t for _, t, _ in self.entries if t.requires_grad]

    def copy(self):
        out = []
        for name, t, is_bn in self.entries:
            nt = T.Tensor(t.data.copy(), requires_grad=t.requires_grad)
            out.append((name, nt, is_bn))
        return ParamSet(out)

    def same_structure(self, other):
        if len(self.entries) != len(other.entries):
            return False
        for (n1, t1, b1), (n2, t2, b2) in zip(self.entries, other.entries):
            if n1 != n2 or b1 != b2 or t1.data.shape != t2.data.shape:
                return False
        return True

    def zero_grad(self):
        for _, t, _ in self.entries:
            t.grad = None

    def to_bytes(self):
        return T.write_named_arrays(
            (name, t.data, is_bn, t.requires_grad)
            for name, t, is_bn in self.entries)

    @classmethod
    def from_bytes(cls, blob):
        return cls([(name, T.Tensor(arr, requires_grad=trainable), is_bn)
                    for name, arr, is_bn, trainable in T.read_named_arrays(blob)])


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------


def _uniform(rng, shape, fan_in):
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _bn_entries(name, channels, entries):
    entries.append((f"{name}.gamma", T.Tensor(np.ones(channels), requires_grad=True), True))
    entries.append((f"{name}.beta", T.Tensor(np.zeros(channels), requires_grad=True), True))
    entries.append((f"{name}.running_mean", T.Tensor(np.zeros(channels)), True))
    entries.append((f"{name}.running_var", T.Tensor(np.ones(channels)), True))


def init_model(spec, seed):
    """Fresh ParamSet for the spec; deterministic in (spec, seed)."""
    rng = np.random.default_rng(seed)
    e = []

    def w(name, shape, fan_in):
        e.append((name, T.Tensor(_uniform(rng, shape, fan_in), requires_grad=True), False))

    d_in = spec.in_features
    steps = spec.steps
    if spec.arch == "CNN":
        c1, c2 = spec.conv_channels
        w("conv1.w", (c1, 1, 3, 3), 9)
        w("conv1.b", (c1,), 9)
        if spec.use_batchnorm:
            _bn_entries("bn1", c1, e)
        w("conv2.w", (c2, c1, 3, 3), c1 * 9)
        w("conv2.b", (c2,), c1 * 9)
        if spec.use_batchnorm:
            _bn_entries("bn2", c2, e)
        flat = c2 * d_in * steps
        w("head.w", (flat, spec.horizon), flat)
        w("head.b", (spec.horizon,), flat)
    elif spec.arch in ("LSTM", "LSTM_CNN"):
        layers = spec.num_layers if spec.arch == "LSTM" else 1
        size_in = d_in
        for layer in range(layers):
            w(f"lstm{layer}.w_ih", (size_in, 4 * spec.hidden), size_in)
            w(f"lstm{layer}.w_hh", (spec.hidden, 4 * spec.hidden), spec.hidden)
            w(f"lstm{layer}.b", (4 * spec.hidden,), spec.hidden)
            size_in = spec.hidden
        if spec.arch == "LSTM":
            if spec.use_batchnorm:
                _bn_entries("bn", spec.hidden, e)
            w("fc.w", (spec.hidden, spec.hidden), spec.hidden)
            w("fc.b", (spec.hidden,), spec.hidden)
            w("head.w", (spec.hidden, spec.horizon), spec.hidden)
            w("head.b", (spec.horizon,), spec.hidden)
        else:
            c1 = spec.conv_channels[0]
            w("conv1.w", (c1, 1, 3, 3), 9)
            w("conv1.b", (c1,), 9)
            if spec.use_batchnorm:
                _bn_entries("bn1", c1, e)
            flat = c1 * steps * spec.hidden
            w("head.w", (flat, spec.horizon), flat)
            w("head.b", (spec.horizon,), flat)
    else:  # TRANSFORMER
        d = spec.hidden
        w("embed.w", (d_in, d), d_in)
        w("embed.b", (d,), d_in)
        for k in range(2):
            for proj in ("wq", "wk", "wv", "wo"):
                w(f"blk{k}.attn.{proj}", (d, d), d)
            for proj in ("bq", "bk", "bv", "bo"):
                w(f"blk{k}.attn.{proj}", (d,), d)
            w(f"blk{k}.ff.w1", (d, spec.ff_dim), d)
            w(f"blk{k}.ff.b1", (spec.ff_dim,), d)
            if spec.use_batchnorm:
                _bn_entries(f"blk{k}.ff.bn", spec.ff_dim, e)
            w(f"blk{k}.ff.w2", (spec.ff_dim, d), spec.ff_dim)
            w(f"blk{k}.ff.b2", (d,), spec.ff_dim)
        w("head.w", (d, spec.horizon), d)
        w("head.b", (spec.horizon,), d)
    return ParamSet(e)


# ---------------------------------------------------------------------------
# forward graphs
# ---------------------------------------------------------------------------


def _bn(params, name, x, channel_axis, training):
    return T.batch_norm(x, params.get(f"{name}.gamma"), params.get(f"{name}.beta"),
                        params.get(f"{name}.running_mean"),
                        params.get(f"{name}.running_var"),
                        channel_axis=channel_axis, training=training)


def _lstm_layer(params, prefix, x_seq, hidden):
    b_n, steps, _ = x_seq.data.shape
    w_ih = params.get(f"{prefix}.w_ih")
    w_hh = params.get(f"{prefix}.w_hh")
    bias = params.get(f"{prefix}.b")
    h = T.Tensor(np.zeros((b_n, hidden)))
    c = T.Tensor(np.zeros((b_n, hidden)))
    outputs = []
    for t in range(steps):
        xt = x_seq[:, t, :]
        gates = T.add(T.add(T.matmul(xt, w_ih), T.matmul(h, w_hh)), bias)
        i = T.sigmoid(gates[:, :hidden])
        f = T.sigmoid(gates[:, hidden:2 * hidden])
        g = T.tanh(gates[:, 2 * hidden:3 * hidden])
        o = T.sigmoid(gates[:, 3 * hidden:])
        c = T.add(T.mul(f, c), T.mul(i, g))
        h = T.mul(o, T.tanh(c))
        outputs.append(T.reshape(h, (b_n, 1, hidden)))
    return h, T.concat(outputs, axis=1)


def _positional_encoding(steps, dim):
    pe = np.zeros((steps, dim))
    pos = np.arange(steps)[:, None]
    idx = np.arange(0, dim, 2)
    freq = np.exp(-math.log(10000.0) * idx / dim)
    pe[:, 0::2] = np.sin(pos * freq)
    pe[:, 1::2] = np.cos(pos * freq[: pe[:, 1::2].shape[1]])
    return pe


def _attention_block(params, prefix, x, heads):
    b_n, steps, d = x.data.shape
    dh = d // heads
    heads_out = []
    q = T.add(T.matmul(x, params.get(f"{prefix}.wq")), params.get(f"{prefix}.bq"))
    k = T.add(T.matmul(x, params.get(f"{prefix}.wk")), params.get(f"{prefix}.bk"))
    v = T.add(T.matmul(x, params.get(f"{prefix}.wv")), params.get(f"{prefix}.bv"))

    def split(t):
        return T.transpose(T.reshape(t, (b_n, steps, heads, dh)), (0, 2, 1, 3))

    qh, kh, vh = split(q), split(k), split(v)
    scores = T.mul(T.matmul(qh, T.transpose(kh, (0, 1, 3, 2))),
                   T.Tensor(1.0 / math.sqrt(dh)))
    attn = T.softmax(scores, axis=-1)
    ctx = T.matmul(attn, vh)
    merged = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (b_n, steps, d))
    return T.add(T.matmul(merged, params.get(f"{prefix}.wo")),
                 params.get(f"{prefix}.bo"))


def forward_graph(spec, params, x_raw, training=False):
    """Differentiable forward pass; x_raw is (B, |F|+1, H+1)."""
    x_raw = np.asarray(x_raw, dtype=np.float64)
    if x_raw.ndim != 3 or x_raw.shape[1] != spec.in_features \
            or x_raw.shape[2] != spec.steps:
        raise ModelError(f"bad input shape {x_raw.shape} for {spec.arch}")
    if x_raw.shape[0] == 0:
        raise ModelError("empty batch")
    b_n = x_raw.shape[0]

    if spec.arch == "CNN":
        x = T.Tensor(x_raw[:, None, :, :])
        for i, bname in ((1, "bn1"), (2, "bn2")):
            conv_w = params.get(f"conv{i}.w")
            conv_b = params.get(f"conv{i}.b")
            x = T.conv2d(x, conv_w)
            x = T.add(x, T.reshape(conv_b, (1, conv_b.data.shape[0], 1, 1)))
            x = T.leaky_relu(x)
            if spec.use_batchnorm:
                x = _bn(params, bname, x, channel_axis=1, training=training)
        flat = T.reshape(x, (b_n, -1))
        return T.add(T.matmul(flat, params.get("head.w")), params.get("head.b"))

    if spec.arch == "LSTM":
        x = T.Tensor(np.ascontiguousarray(x_raw.transpose(0, 2, 1)))
        h = x
        layers = spec.num_layers
        for layer in range(layers):
            last, seq = _lstm_layer(params, f"lstm{layer}", h, spec.hidden)
            h = seq
        feat = last
        if spec.use_batchnorm:
            feat = _bn(params, "bn", feat, channel_axis=1, training=training)
        feat = T.relu(T.add(T.matmul(feat, params.get("fc.w")), params.get("fc.b")))
        return T.add(T.matmul(feat, params.get("head.w")), params.get("head.b"))

    if spec.arch == "LSTM_CNN":
        x = T.Tensor(np.ascontiguousarray(x_raw.transpose(0, 2, 1)))
        _, seq = _lstm_layer(params, "lstm0", x, spec.hidden)
        img = T.reshape(seq, (b_n, 1, spec.steps, spec.hidden))
        conv_w = params.get("conv1.w")
        conv_b = params.get("conv1.b")
        y = T.conv2d(img, conv_w)
        y = T.add(y, T.reshape(conv_b, (1, conv_b.data.shape[0], 1, 1)))
        y = T.relu(y)
        if spec.use_batchnorm:
            y = _bn(params, "bn1", y, channel_axis=1, training=training)
        flat = T.reshape(y, (b_n, -1))
        return T.add(T.matmul(flat, params.get("head.w")), params.get("head.b"))

    # TRANSFORMER
    x = T.Tensor(np.ascontiguousarray(x_raw.transpose(0, 2, 1)))
    h = T.add(T.matmul(x, params.get("embed.w")), params.get("embed.b"))
    if spec.use_positional:
        h = T.add(h, T.Tensor(_positional_encoding(spec.steps, spec.hidden)))
    for k in range(2):
        attn = _attention_block(params, f"blk{k}.attn", h, spec.num_heads)
        h = T.add(h, attn)
        ff = T.add(T.matmul(h, params.get(f"blk{k}.ff.w1")),
                   params.get(f"blk{k}.ff.b1"))
        if spec.use_batchnorm:
            ff = _bn(params, f"blk{k}.ff.bn", ff, channel_axis=2, training=training)
        ff = T.relu(ff)
        ff = T.add(T.matmul(ff, params.get(f"blk{k}.ff.w2")),
                   params.get(f"blk{k}.ff.b2"))
        h = T.add(h, ff)
    pooled = T.reduce_mean(h, axis=1)
    return T.add(T.matmul(pooled, params.get("head.w")), params.get("head.b"))


def batch_to_arrays(samples):
    """Stack WindowSamples into the (B, |F|+1, H+1) model input layout."""
    feats, hist, target = stack_samples(samples)
    x = np.concatenate([feats, hist[:, None, :]], axis=1)
    return x, target


def forward(spec, params, batch, training=False):
    """Predictions (B, F) for a batch of WindowSamples or a raw array."""
    if isinstance(batch, np.ndarray):
        x = batch
    else:
        x, _ = batch_to_arrays(batch)
    out = forward_graph(spec, params, x, training=training).data
    if not np.isfinite(out).all():
        raise TrainingDiverged("non-finite predictions")
    return out


# ---------------------------------------------------------------------------
# optimizers and local training
# ---------------------------------------------------------------------------


class SGD:
    def __init__(self, params, lr):
        self.params = params
        self.lr = lr

    def step(self):
        for p in self.params:
            if p.grad is not None:
                p.data -= self.lr * p.grad


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            m *= b1
            m += (1 - b1) * p.grad
            v *= b2
            v += (1 - b2) * p.grad * p.grad
            mhat = m / (1 - b1 ** self.t)
            vhat = v / (1 - b2 ** self.t)
            p.data -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def _prox_penalty(params, anchor, include_bn):
    total = None
    for name, t, is_bn in params.entries:
        if not t.requires_grad:
            continue
        if is_bn and not include_bn:
            continue
        diff = T.sub(t, T.Tensor(anchor.get(name).data.copy()))
        term = T.reduce_sum(T.mul(diff, diff))
        total = term if total is None else T.add(total, term)
    return total


def local_train(spec, params, samples, cfg, global_anchor=None, rng=None):
    """Run cfg.local_epochs of mini-batch training; returns (params, loss).

    The optimized objective is the MSE forecasting loss plus, when
    cfg.prox_mu > 0, the proximal term (mu/2) * ||w - w_anchor||^2 over
    the non-batch-norm trainable parameters.
    """
    if cfg.prox_mu > 0 and global_anchor is None:
        raise ModelError("prox_mu > 0 requires a global anchor")
    if global_anchor is not None and not params.same_structure(global_anchor):
        raise ModelError("anchor structure mismatch")
    if rng is None:
        rng = np.random.default_rng(0)
    x_all, y_all = batch_to_arrays(samples)
    n = x_all.shape[0]
    trainable = params.trainable()
    if cfg.optimizer == "adam":
        opt = Adam(trainable, cfg.learning_rate)
    else:
        opt = SGD(trainable, cfg.learning_rate)

    last_epoch_losses = []
    for epoch in range(cfg.local_epochs):
        perm = rng.permutation(n)
        losses = []
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            pred = forward_graph(spec, params, x_all[idx], training=True)
            loss = T.mse(pred, y_all[idx])
            if cfg.prox_mu > 0:
                penalty = _prox_penalty(params, global_anchor,
                                        cfg.include_bn_in_prox)
                if penalty is not None:
                    loss = T.add(loss, T.mul(T.Tensor(cfg.prox_mu / 2.0), penalty))
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch} ({spec.arch})")
            params.zero_grad()
            loss.backward()
            opt.step()
            losses.append(value)
        last_epoch_losses = losses
    return params, float(np.mean(last_epoch_losses)) if last_epoch_losses else 0.0


def predict_trace(spec, params, samples):
    """Stitched eval-mode forecasts and aligned ground truth."""
    if not samples:
        raise ModelError("no evaluation windows")
    x, y = batch_to_arrays(samples)
    preds = []
    for start in range(0, x.shape[0], 256):
        preds.append(forward(spec, params, x[start:start + 256], training=False))
    yhat = np.concatenate(preds, axis=0)
    return yhat.ravel(), y.ravel()


# ---------------------------------------------------------------------------
# checkpoints: one JSON spec header line + the ParamSet blob
# ---------------------------------------------------------------------------


def save_checkpoint(path, spec, params):
    header = json.dumps(asdict(spec), sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(header + b"\n")
        fh.write(params.to_bytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        header = fh.readline().decode("utf-8")
        blob = fh.read()
    fields = json.loads(header)
    fields["conv_channels"] = tuple(fields["conv_channels"])
    spec = ModelSpec(**fields)
    return spec, ParamSet.from_bytes(blob)
