"""Small fully-connected network engine with hand-written backprop.

Layers are ``linear -> [batch norm] -> activation``. Everything runs in
float64 so that finite-difference checks stay tight.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CHECKPOINT_MAGIC = "isacbf-net"
CHECKPOINT_VERSION = 1
ACTIVATIONS = ("relu", "tanh", "identity")
BN_EPS = 1e-5
BN_DECAY = 0.9


@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int
    activation: str = "relu"
    batch_norm: bool = False

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1:
            raise ValueError("layer dims must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


def mlp_specs(dims: list[int], hidden_act="relu", out_act="identity", batch_norm=False) -> list[LayerSpec]:
    """Specs for a plain MLP; batch norm (if any) goes on hidden layers only."""
    specs = []
    for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
        last = i == len(dims) - 2
        specs.append(LayerSpec(a, b, out_act if last else hidden_act, batch_norm and not last))
    return specs


def _act(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return z


def _act_grad(name, z, a):
    if name == "relu":
        return (z > 0).astype(float)
    if name == "tanh":
        return 1.0 - a * a
    return np.ones_like(z)


@dataclass
class Cache:
    net_id: int
    version: int
    inputs: list = field(default_factory=list)
    pre: list = field(default_factory=list)  # pre-activation values
    post: list = field(default_factory=list)
    bn: list = field(default_factory=list)  # (xhat, inv_std) per layer or None


class Network:
    """Parameters and forward/backward for an MLP.

    ``params()`` returns the live arrays in a fixed order (per layer: W, b,
    then gamma, beta if batch-normed); optimizers update them in place.
    """

    def __init__(self, layers: list[LayerSpec], rng: np.random.Generator | None = None):
        if not layers:
            raise ValueError("network needs at least one layer")
        for a, b in zip(layers[:-1], layers[1:]):
            if a.out_dim != b.in_dim:
                raise ValueError(f"layer dims do not chain: {a.out_dim} -> {b.in_dim}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.layers = list(layers)
        self.W, self.b = [], []
        self.gamma, self.beta, self.run_mean, self.run_var = [], [], [], []
        for spec in layers:
            lim = np.sqrt(6.0 / (spec.in_dim + spec.out_dim))
            self.W.append(rng.uniform(-lim, lim, size=(spec.out_dim, spec.in_dim)))
            self.b.append(np.zeros(spec.out_dim))
            if spec.batch_norm:
                self.gamma.append(np.ones(spec.out_dim))
                self.beta.append(np.zeros(spec.out_dim))
                self.run_mean.append(np.zeros(spec.out_dim))
                self.run_var.append(np.ones(spec.out_dim))
            else:
                for lst in (self.gamma, self.beta, self.run_mean, self.run_var):
                    lst.append(None)
        self._version = 0

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def has_batch_norm(self) -> bool:
        return any(s.batch_norm for s in self.layers)

    def params(self) -> list[np.ndarray]:
        out = []
        for i, spec in enumerate(self.layers):
            out += [self.W[i], self.b[i]]
            if spec.batch_norm:
                out += [self.gamma[i], self.beta[i]]
        return out

    def n_params(self) -> int:
        return sum(p.size for p in self.params())

    def mark_updated(self):
        self._version += 1

    def copy(self) -> "Network":
        new = Network.__new__(Network)
        new.layers = list(self.layers)
        for name in ("W", "b", "gamma", "beta", "run_mean", "run_var"):
            setattr(new, name, [None if a is None else a.copy() for a in getattr(self, name)])
        new._version = 0
        return new

    def forward(self, x, train: bool = False, update_stats: bool = True):
        """Return ``(output, cache)``. Train mode uses batch statistics."""
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ValueError(f"expected input width {self.in_dim}, got shape {x.shape}")
        if train and self.has_batch_norm and x.shape[0] < 2:
            raise ValueError("batch norm in train mode needs a batch of at least 2")
        cache = Cache(id(self), self._version)
        h = x
        for i, spec in enumerate(self.layers):
            cache.inputs.append(h)
            z = h @ self.W[i].T + self.b[i]
            bn = None
            if spec.batch_norm:
                if train:
                    mu = z.mean(axis=0)
                    var = z.var(axis=0)
                    if update_stats:
                        self.run_mean[i] = BN_DECAY * self.run_mean[i] + (1 - BN_DECAY) * mu
                        self.run_var[i] = BN_DECAY * self.run_var[i] + (1 - BN_DECAY) * var
                else:
                    mu, var = self.run_mean[i], self.run_var[i]
                inv_std = 1.0 / np.sqrt(var + BN_EPS)
                xhat = (z - mu) * inv_std
                bn = (xhat, inv_std, train)
                z = self.gamma[i] * xhat + self.beta[i]
            a = _act(spec.activation, z)
            cache.pre.append(z)
            cache.post.append(a)
            cache.bn.append(bn)
            h = a
        return cache.post[-1], cache

    def __call__(self, x) -> np.ndarray:
        return self.forward(x, train=False)[0]

    def backward(self, cache: Cache, grad_out):
        """Gradients w.r.t. ``params()`` (same order) and w.r.t. the input."""
        if cache.net_id != id(self) or cache.version != self._version:
            raise ValueError("stale or foreign forward cache")
        g = np.asarray(grad_out, dtype=float)
        if g.shape != cache.post[-1].shape:
            raise ValueError("loss gradient shape does not match network output")
        per_layer = []
        for i in reversed(range(len(self.layers))):
            spec = self.layers[i]
            z, a = cache.pre[i], cache.post[i]
            g = g * _act_grad(spec.activation, z, a)
            grads = []
            if spec.batch_norm:
                xhat, inv_std, batch_stats = cache.bn[i]
                grads = [np.sum(g * xhat, axis=0), np.sum(g, axis=0)]
                gx = g * self.gamma[i]
                if batch_stats:
                    n = gx.shape[0]
                    g = inv_std / n * (n * gx - gx.sum(axis=0) - xhat * np.sum(gx * xhat, axis=0))
                else:
                    g = gx * inv_std
            h = cache.inputs[i]
            per_layer.append([g.T @ h, g.sum(axis=0)] + grads)
            g = g @ self.W[i]
        flat = [arr for layer in reversed(per_layer) for arr in layer]
        return flat, g

    # -- serialization -------------------------------------------------

    def state_arrays(self) -> list[np.ndarray]:
        out = []
        for i, spec in enumerate(self.layers):
            out += [self.W[i], self.b[i]]
            if spec.batch_norm:
                out += [self.gamma[i], self.beta[i], self.run_mean[i], self.run_var[i]]
        return out

    def save(self, path, extra: dict[str, np.ndarray] | None = None, meta: dict[str, str] | None = None):
        save_checkpoint(path, self, extra, meta)

    @classmethod
    def load(cls, path) -> "Network":
        return load_checkpoint(path)[0]


def save_checkpoint(path, net: Network, extra: dict[str, np.ndarray] | None = None,
                    meta: dict[str, str] | None = None):
    """Text header, then little-endian float64 payload.

    Header: magic line, ``version``, ``meta`` lines, ``layer`` lines
    (in out activation bn), ``extra`` lines (name length), ``end``.
    Payload order: per layer W (row-major out x in), b, then gamma, beta,
    running mean, running var when batch-normed; then extras in order.
    """
    extra = extra or {}
    meta = meta or {}
    head = [CHECKPOINT_MAGIC, f"version {CHECKPOINT_VERSION}"]
    for k, v in meta.items():
        if any(c.isspace() for c in k) or "\n" in str(v):
            raise ValueError("meta keys may not contain whitespace")
        head.append(f"meta {k} {v}")
    for s in net.layers:
        head.append(f"layer {s.in_dim} {s.out_dim} {s.activation} {int(s.batch_norm)}")
    for name, arr in extra.items():
        head.append(f"extra {name} {np.asarray(arr).size}")
    head.append("end")
    payload = [np.ascontiguousarray(a, dtype="<f8").ravel() for a in net.state_arrays()]
    payload += [np.ascontiguousarray(v, dtype="<f8").ravel() for v in extra.values()]
    with open(path, "wb") as fh:
        fh.write(("\n".join(head) + "\n").encode())
        for arr in payload:
            fh.write(arr.tobytes())


def load_checkpoint(path):
    """Return ``(network, extras, meta)``."""
    raw = Path(path).read_bytes()
    buf = io.BytesIO(raw)
    if buf.readline().decode().strip() != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a network checkpoint")
    layers, extras_spec, meta, version = [], [], {}, None
    while True:
        line = buf.readline().decode()
        if not line:
            raise ValueError(f"{path}: truncated header")
        parts = line.split()
        if parts == ["end"]:
            break
        tag = parts[0]
        if tag == "version":
            version = int(parts[1])
            if version != CHECKPOINT_VERSION:
                raise ValueError(f"{path}: unsupported checkpoint version {version}")
        elif tag == "meta":
            meta[parts[1]] = line.rstrip("\n").split(" ", 2)[2] if len(parts) > 2 else ""
        elif tag == "layer":
            layers.append(LayerSpec(int(parts[1]), int(parts[2]), parts[3], bool(int(parts[4]))))
        elif tag == "extra":
            extras_spec.append((parts[1], int(parts[2])))
        else:
            raise ValueError(f"{path}: unknown header line {line!r}")
    if version is None:
        raise ValueError(f"{path}: missing version")
    data = np.frombuffer(buf.read(), dtype="<f8").astype(float)
    net = Network(layers)
    pos = 0

    def take(shape):
        nonlocal pos
        n = int(np.prod(shape))
        if pos + n > data.size:
            raise ValueError(f"{path}: payload too short")
        out = data[pos:pos + n].reshape(shape).copy()
        pos += n
        return out

    for i, s in enumerate(layers):
        net.W[i] = take((s.out_dim, s.in_dim))
        net.b[i] = take((s.out_dim,))
        if s.batch_norm:
            net.gamma[i] = take((s.out_dim,))
            net.beta[i] = take((s.out_dim,))
            net.run_mean[i] = take((s.out_dim,))
            net.run_var[i] = take((s.out_dim,))
    extras = {name: take((n,)) for name, n in extras_spec}
    if pos != data.size:
        raise ValueError(f"{path}: trailing payload data")
    return net, extras, meta


class Adam:
    def __init__(self, params: list[np.ndarray], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8, owner: Network | None = None):
        self.params = params
        self.owner = owner
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, grads: list[np.ndarray]):
        if len(grads) != len(self.params):
            raise ValueError("gradient list does not match parameters")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1 ** self.t
        c2 = 1 - b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        if self.owner is not None:
            self.owner.mark_updated()


def adam_for(net: Network, lr: float, **kw) -> Adam:
    return Adam(net.params(), lr=lr, owner=net, **kw)


def adam_step(params, grads, state: Adam):
    """Functional alias; updates ``params`` in place and returns them with the state."""
    if state.params is not params:
        state.params = params
    state.step(grads)
    return params, state


# -- losses ------------------------------------------------------------------


def mse_loss(pred, target):
    """Mean over batch of the summed squared error, and its gradient."""
    diff = pred - target
    n = pred.shape[0]
    return float(np.sum(diff * diff) / n), 2.0 * diff / n


def log_softmax(logits, axis=-1):
    z = logits - logits.max(axis=axis, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=axis, keepdims=True))


def policy_loss(logits, actions, weights):
    """``-mean(weight * log softmax(logits)[action])`` over the batch.

    ``logits`` is (B, C); gives the loss and its gradient w.r.t. logits.
    """
    n = logits.shape[0]
    logp = log_softmax(logits)
    picked = logp[np.arange(n), actions]
    onehot = np.zeros_like(logits)
    onehot[np.arange(n), actions] = 1.0
    grad = -(weights[:, None] * (onehot - np.exp(logp))) / n
    return float(-np.mean(weights * picked)), grad


def _loss_fn(kind, out, target):
    if kind == "mse":
        return mse_loss(out, target)
    if kind == "policy":
        actions, weights = target
        return policy_loss(out, actions, weights)
    raise ValueError(f"unknown loss {kind!r}")


def grad_check(net: Network, batch, loss: str = "mse", target=None, train: bool = True,
               step: float = 1e-5, atol: float = 1e-6) -> float:
    """Max relative error between ``backward`` and central differences.

    Parameters whose perturbation flips any relu gate are skipped, since
    the loss is not differentiable there. The denominator is floored at
    ``max(atol, 1e-5 * max|grad|)`` so that near-zero gradients (e.g. biases
    feeding a batch norm) are judged against rounding noise, not zero.
    """
    batch = np.asarray(batch, dtype=float)
    rng = np.random.default_rng(1234)
    if target is None:
        if loss == "mse":
            target = rng.standard_normal((batch.shape[0], net.out_dim))
        else:
            target = (rng.integers(0, net.out_dim, batch.shape[0]), rng.standard_normal(batch.shape[0]))

    def run():
        out, cache = net.forward(batch, train=train, update_stats=False)
        return _loss_fn(loss, out, target), cache

    (_, gout), cache = run()
    analytic, _ = net.backward(cache, gout)
    gates = _relu_gates(net, cache)
    floor = max(atol, 1e-5 * max(float(np.max(np.abs(g))) for g in analytic))
    worst = 0.0
    for p, g in zip(net.params(), analytic):
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            (lp, _), cp = run()
            kink = not np.array_equal(_relu_gates(net, cp), gates)
            flat[j] = orig - step
            (lm, _), cm = run()
            kink = kink or not np.array_equal(_relu_gates(net, cm), gates)
            flat[j] = orig
            if kink:
                continue
            num = (lp - lm) / (2 * step)
            err = abs(num - gflat[j]) / max(abs(num), abs(gflat[j]), floor)
            worst = max(worst, err)
    return worst


def _relu_gates(net, cache):
    return np.concatenate([
        (cache.pre[i] > 0).ravel() for i, s in enumerate(net.layers) if s.activation == "relu"
    ] or [np.zeros(0, bool)])
