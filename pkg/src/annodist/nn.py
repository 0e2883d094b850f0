"""Small feed-forward predictors with explicit backprop and Adam.

All variants share the same bottleneck layout: two hidden ReLU layers at 75%
and 50% of the input width (round half up).  Four head arrangements exist:

* ``independent``  - two disjoint networks, one per moment (mu, sigma)
* ``shared_first`` - one shared first layer, split second layers and heads
* ``fully_shared`` - one shared trunk with a two-unit head
* ``point``        - a single scalar head, used for per-descriptor baselines

Moment heads squash: the mu output passes through a logistic so it stays in
(0, 1), the sigma output through a softplus so it stays positive.  Validity
of sigma^2 against mu(1-mu) is NOT enforced here; the Beta conversion clamps
downstream.  Point heads are identity (descriptor targets can be negative).

Training minimises the joint MSE of mu and sigma (plain MSE for point nets)
with Adam (beta1=0.9, beta2=0.999, eps=1e-8) and patience-based early
stopping on the validation loss, restoring the best-epoch parameters.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DomainError, TrainingError

KINDS = ("independent", "shared_first", "fully_shared", "point")
MOMENT_KINDS = ("independent", "shared_first", "fully_shared")

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
MIN_IMPROVEMENT = 1e-6
# Output heads start near-neutral (mu ~ 0.5, sigma ~ softplus(0)); large head
# weights at init make convergence within the 50-epoch budget a seed lottery.
HEAD_INIT_SCALE = 0.05


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def hidden_dims(input_dim: int) -> tuple[int, int]:
    """Hidden widths at 75% and 50% of the input size (round half up)."""
    return round_half_up(0.75 * input_dim), round_half_up(0.5 * input_dim)


@dataclass(frozen=True)
class NetworkVariant:
    kind: str
    input_dim: int

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError(f"NetworkVariant: unknown kind {self.kind!r}")
        if self.input_dim < 2:
            raise DomainError("NetworkVariant: input_dim must be >= 2")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 128
    max_epochs: int = 50
    patience: int = 5
    seed: int = 0

    def __post_init__(self):
        if (
            self.learning_rate <= 0
            or self.batch_size < 1
            or self.max_epochs < 1
            or self.patience < 1
        ):
            raise DomainError("TrainConfig: all fields must be positive")


# Layers as (param prefix, fan-in, fan-out, activation) per chain.
def _chains(variant: NetworkVariant) -> dict[str, list[tuple[str, int, int, str]]]:
    d = variant.input_dim
    h1, h2 = hidden_dims(d)
    if variant.kind == "point":
        return {"trunk": [("l1", d, h1, "relu"), ("l2", h1, h2, "relu"),
                          ("head", h2, 1, "identity")]}
    if variant.kind == "fully_shared":
        return {"trunk": [("l1", d, h1, "relu"), ("l2", h1, h2, "relu"),
                          ("head", h2, 2, "moment")]}
    if variant.kind == "shared_first":
        return {
            "shared": [("shared", d, h1, "relu")],
            "mu": [("mu_l2", h1, h2, "relu"), ("mu_head", h2, 1, "sigmoid")],
            "sigma": [("sigma_l2", h1, h2, "relu"),
                      ("sigma_head", h2, 1, "softplus")],
        }
    return {
        "mu": [("mu_l1", d, h1, "relu"), ("mu_l2", h1, h2, "relu"),
               ("mu_head", h2, 1, "sigmoid")],
        "sigma": [("sigma_l1", d, h1, "relu"), ("sigma_l2", h1, h2, "relu"),
                  ("sigma_head", h2, 1, "softplus")],
    }


@dataclass
class Network:
    variant: NetworkVariant
    params: dict[str, np.ndarray]

    @property
    def kind(self) -> str:
        return self.variant.kind

    @property
    def input_dim(self) -> int:
        return self.variant.input_dim

    def copy_params(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params.items()}


def build(variant: NetworkVariant, seed: int) -> Network:
    """Initialise a network with He-style uniform fan-in scaling.

    Head layers are scaled down by ``HEAD_INIT_SCALE``; biases start at zero.
    """
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    for layers in _chains(variant).values():
        for name, fan_in, fan_out, _ in layers:
            limit = math.sqrt(6.0 / fan_in)
            if name.endswith("head"):
                limit *= HEAD_INIT_SCALE
            params[f"{name}.w"] = rng.uniform(-limit, limit, (fan_in, fan_out))
            params[f"{name}.b"] = np.zeros(fan_out)
    return Network(variant, params)


def count_params(kind: str, input_dim: int) -> int:
    """Closed-form trainable parameter count for one variant."""
    d = input_dim
    h1, h2 = hidden_dims(d)
    trunk = d * h1 + h1 + h1 * h2 + h2
    if kind == "point":
        return trunk + h2 + 1
    if kind == "fully_shared":
        return trunk + 2 * h2 + 2
    if kind == "shared_first":
        return d * h1 + h1 + 2 * (h1 * h2 + h2) + 2 * (h2 + 1)
    if kind == "independent":
        return 2 * (trunk + h2 + 1)
    raise DomainError(f"count_params: unknown kind {kind!r}")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _softplus(z: np.ndarray) -> np.ndarray:
    return np.where(z > 30.0, z, np.log1p(np.exp(np.minimum(z, 30.0))))


def _activate(kind: str, z: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "identity":
        return z
    if kind == "sigmoid":
        return _sigmoid(z)
    if kind == "softplus":
        return _softplus(z)
    if kind == "moment":
        out = np.empty_like(z)
        out[:, 0] = _sigmoid(z[:, 0])
        out[:, 1] = _softplus(z[:, 1])
        return out
    raise DomainError(f"unknown activation {kind!r}")


def _activate_grad(kind: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    # Derivative w.r.t. the pre-activation, using the activation value where
    # that is cheaper.
    if kind == "relu":
        return (z > 0.0).astype(np.float64)
    if kind == "identity":
        return np.ones_like(z)
    if kind == "sigmoid":
        return a * (1.0 - a)
    if kind == "softplus":
        return _sigmoid(z)
    if kind == "moment":
        g = np.empty_like(z)
        g[:, 0] = a[:, 0] * (1.0 - a[:, 0])
        g[:, 1] = _sigmoid(z[:, 1])
        return g
    raise DomainError(f"unknown activation {kind!r}")


def _chain_forward(params, layers, x, cache=None):
    a = x
    for name, _, _, act in layers:
        z = a @ params[f"{name}.w"] + params[f"{name}.b"]
        a_next = _activate(act, z)
        if cache is not None:
            cache.append((name, act, a, z, a_next))
        a = a_next
    return a


def _chain_backward(params, cache, dout, grads):
    # Walks the cached layer records in reverse; returns dL/d(chain input).
    for name, act, a_in, z, a_out in reversed(cache):
        dz = dout * _activate_grad(act, z, a_out)
        grads[f"{name}.w"] = grads.get(f"{name}.w", 0.0) + a_in.T @ dz
        grads[f"{name}.b"] = grads.get(f"{name}.b", 0.0) + dz.sum(axis=0)
        dout = dz @ params[f"{name}.w"].T
    return dout


def _check_input(net: Network, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise DomainError(
            f"forward: expected (n, {net.input_dim}) inputs, got {x.shape}"
        )
    if not np.all(np.isfinite(x)):
        raise DomainError("forward: inputs must be finite")
    return x


def forward(net: Network, x, caches: dict | None = None) -> np.ndarray:
    """Batch forward pass.

    Moment variants return an (n, 2) array of (mu_hat, sigma_hat); point
    variants an (n,) array.  ``caches`` collects per-chain activation records
    for the backward pass.
    """
    x = _check_input(net, x)
    chains = _chains(net.variant)
    record = (lambda key: caches.setdefault(key, [])) if caches is not None else (
        lambda key: None
    )
    if net.kind in ("point", "fully_shared"):
        out = _chain_forward(net.params, chains["trunk"], x, record("trunk"))
        return out[:, 0] if net.kind == "point" else out
    if net.kind == "shared_first":
        h = _chain_forward(net.params, chains["shared"], x, record("shared"))
        mu = _chain_forward(net.params, chains["mu"], h, record("mu"))
        sigma = _chain_forward(net.params, chains["sigma"], h, record("sigma"))
        return np.column_stack([mu[:, 0], sigma[:, 0]])
    mu = _chain_forward(net.params, chains["mu"], x, record("mu"))
    sigma = _chain_forward(net.params, chains["sigma"], x, record("sigma"))
    return np.column_stack([mu[:, 0], sigma[:, 0]])


def predict_moments(net: Network, x) -> tuple[np.ndarray, np.ndarray]:
    """(mu_hat, sigma_hat) arrays; only for the moment-predicting kinds."""
    if net.kind not in MOMENT_KINDS:
        raise DomainError(f"predict_moments: not a moment variant: {net.kind!r}")
    out = forward(net, x)
    return out[:, 0], out[:, 1]


def loss_value(net: Network, out: np.ndarray, targets: np.ndarray) -> float:
    """Joint MSE over (mu, sigma) for moment nets, plain MSE for point nets."""
    targets = np.asarray(targets, dtype=np.float64)
    if net.kind == "point":
        return float(np.mean((out - targets) ** 2))
    return float(
        np.mean((out[:, 0] - targets[:, 0]) ** 2)
        + np.mean((out[:, 1] - targets[:, 1]) ** 2)
    )


def loss(net: Network, x, targets) -> float:
    return loss_value(net, forward(net, x), targets)


def gradients(net: Network, x, targets) -> tuple[float, dict[str, np.ndarray]]:
    """Loss and analytic gradients of every parameter for one batch."""
    x = _check_input(net, x)
    targets = np.asarray(targets, dtype=np.float64)
    caches: dict = {}
    out = forward(net, x, caches)
    n = x.shape[0]
    grads: dict[str, np.ndarray] = {}
    value = loss_value(net, out, targets)
    if net.kind == "point":
        dout = (2.0 / n) * (out - targets)[:, None]
        _chain_backward(net.params, caches["trunk"], dout, grads)
    elif net.kind == "fully_shared":
        dout = (2.0 / n) * (out - targets)
        _chain_backward(net.params, caches["trunk"], dout, grads)
    else:
        d_mu = (2.0 / n) * (out[:, 0] - targets[:, 0])[:, None]
        d_sigma = (2.0 / n) * (out[:, 1] - targets[:, 1])[:, None]
        if net.kind == "shared_first":
            dh = _chain_backward(net.params, caches["mu"], d_mu, grads)
            dh = dh + _chain_backward(net.params, caches["sigma"], d_sigma, grads)
            _chain_backward(net.params, caches["shared"], dh, grads)
        else:
            _chain_backward(net.params, caches["mu"], d_mu, grads)
            _chain_backward(net.params, caches["sigma"], d_sigma, grads)
    return value, grads


def finite_difference_gradients(
    net: Network, x, targets, h: float = 1e-5
) -> dict[str, np.ndarray]:
    """Central-difference gradients; the oracle for gradient validation."""
    grads = {}
    for name, value in net.params.items():
        g = np.zeros_like(value)
        flat = value.ravel()
        gflat = g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss(net, x, targets)
            flat[i] = orig - h
            down = loss(net, x, targets)
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * h)
        grads[name] = g
    return grads


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
) -> None:
    state.step += 1
    t = state.step
    for name in sorted(params):
        g = grads[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(params[name])
        v = state.v.get(name)
        if v is None:
            v = state.v[name] = np.zeros_like(params[name])
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * g * g
        m_hat = m / (1.0 - ADAM_BETA1**t)
        v_hat = v / (1.0 - ADAM_BETA2**t)
        params[name] -= lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)


def backward_and_step(
    net: Network, x, targets, state: AdamState, cfg: TrainConfig
) -> float:
    """One gradient step; aborts on non-finite gradients."""
    value, grads = gradients(net, x, targets)
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(
                f"non-finite gradient in {name!r} (loss={value!r}); aborting"
            )
    adam_step(net.params, grads, state, cfg.learning_rate)
    return value


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = 0

    @property
    def n_epochs(self) -> int:
        return len(self.train_loss)


def train(
    net: Network,
    train_x,
    train_y,
    val_x,
    val_y,
    cfg: TrainConfig,
) -> TrainHistory:
    """Mini-batch Adam with early stopping on the validation loss.

    Stops after ``cfg.patience`` epochs without a strict improvement
    (>= 1e-6 lower validation loss) or at ``cfg.max_epochs``; the network
    keeps the parameters of its best validation epoch.
    """
    train_x = np.asarray(train_x, dtype=np.float64)
    train_y = np.asarray(train_y, dtype=np.float64)
    if train_x.shape[0] == 0 or np.asarray(val_x).shape[0] == 0:
        raise TrainingError("train: empty training or validation split")
    rng = np.random.default_rng(cfg.seed)
    state = AdamState()
    history = TrainHistory()
    best_val = math.inf
    best_params = net.copy_params()
    bad_epochs = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(train_x.shape[0])
        batch_losses = []
        for lo in range(0, order.size, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            batch_losses.append(
                backward_and_step(net, train_x[idx], train_y[idx], state, cfg)
            )
        history.train_loss.append(float(np.mean(batch_losses)))
        val = loss(net, val_x, val_y)
        history.val_loss.append(val)
        if val < best_val - MIN_IMPROVEMENT:
            best_val = val
            best_params = net.copy_params()
            history.best_epoch = epoch
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= cfg.patience:
                break
    net.params = best_params
    return history


def save_checkpoint(net: Network, path, manifest: dict | None = None) -> None:
    """Write parameters (npz) plus a JSON manifest alongside."""
    path = Path(path)
    np.savez(path.with_suffix(".npz"), **net.params)
    meta = {
        "kind": net.kind,
        "input_dim": net.input_dim,
        "param_count": count_params(net.kind, net.input_dim),
    }
    meta.update(manifest or {})
    with open(path.with_suffix(".json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")


def load_checkpoint(path) -> tuple[Network, dict]:
    path = Path(path)
    with open(path.with_suffix(".json"), "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    with np.load(path.with_suffix(".npz")) as data:
        params = {k: data[k].copy() for k in data.files}
    net = Network(NetworkVariant(meta["kind"], int(meta["input_dim"])), params)
    return net, meta
