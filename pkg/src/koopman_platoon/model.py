"""Lifted linear model: embedding network, operator matrices, training, persistence.

The physical state x is concatenated with a learned feature vector psi(x) to
form the lifted state Z = [x; psi(x)]. Dynamics are linear in the lifted space,
Z' = A Z + B u, and the physical state is recovered by dropping the feature
block, so no decoder is needed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, NormScales

MODEL_FORMAT = "platoon-linear-model"
MODEL_VERSION = 1


class ModelFormatError(ValueError):
    """Unreadable or incompatible model file."""


class DivergedError(RuntimeError):
    """Non-finite values encountered during rollout or training."""


@dataclass
class EncoderParams:
    """Fully connected network x -> psi(x) in R^d; empty layers mean d = 0."""

    weights: list[np.ndarray] = field(default_factory=list)  # each (out, in)
    biases: list[np.ndarray] = field(default_factory=list)
    activation: str = "tanh"

    def __post_init__(self):
        if len(self.weights) != len(self.biases):
            raise ValueError("weights/biases length mismatch")
        for i in range(1, len(self.weights)):
            if self.weights[i].shape[1] != self.weights[i - 1].shape[0]:
                raise ValueError(f"layer {i} input dim does not chain")
        if self.activation != "tanh":
            raise ValueError(f"unsupported activation {self.activation!r}")

    @property
    def d(self) -> int:
        return self.weights[-1].shape[0] if self.weights else 0

    @property
    def n_x(self) -> int | None:
        return self.weights[0].shape[1] if self.weights else None


def init_encoder(n_x: int, hidden: tuple[int, ...], d: int, rng: np.random.Generator) -> EncoderParams:
    """Symmetric uniform fan-in initialization; d = 0 yields an empty encoder."""
    if d == 0:
        return EncoderParams()
    sizes = [n_x, *hidden, d]
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return EncoderParams(weights=weights, biases=biases)


def _encoder_forward(enc: EncoderParams, x: np.ndarray):
    """Forward pass on a batch (N, n_x); returns psi (N, d) and the cache for backprop."""
    if not enc.weights:
        return np.zeros((x.shape[0], 0)), []
    cache = []
    h = x
    last = len(enc.weights) - 1
    for i, (w, b) in enumerate(zip(enc.weights, enc.biases)):
        pre = h @ w.T + b
        act = pre if i == last else np.tanh(pre)
        cache.append((h, act))
        h = act
    return h, cache


def _encoder_backward(enc: EncoderParams, cache, dpsi: np.ndarray):
    """Gradients of sum(dpsi * psi) w.r.t. encoder parameters."""
    dws = [np.zeros_like(w) for w in enc.weights]
    dbs = [np.zeros_like(b) for b in enc.biases]
    if not enc.weights:
        return dws, dbs
    grad = dpsi
    last = len(enc.weights) - 1
    for i in range(last, -1, -1):
        inp, act = cache[i]
        if i != last:
            grad = grad * (1.0 - act * act)  # tanh'
        dws[i] = grad.T @ inp
        dbs[i] = grad.sum(axis=0)
        if i > 0:
            grad = grad @ enc.weights[i]
    return dws, dbs


@dataclass
class KoopmanOperator:
    A: np.ndarray  # (m, m)
    B: np.ndarray  # (m,)

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=float)
        self.B = np.asarray(self.B, dtype=float).reshape(-1)
        if self.A.ndim != 2 or self.A.shape[0] != self.A.shape[1]:
            raise ValueError("A must be square")
        if self.B.shape[0] != self.A.shape[0]:
            raise ValueError("B length must match A")
        if not (np.all(np.isfinite(self.A)) and np.all(np.isfinite(self.B))):
            raise ValueError("operator entries must be finite")

    @property
    def m(self) -> int:
        return self.A.shape[0]


@dataclass
class TrainConfig:
    lam: float = 0.98  # temporal decay weight of the rollout loss
    k_train: int = 50  # training window length (steps)
    learning_rate: float = 1e-3
    lr_decay: float = 1.0  # per-epoch multiplicative decay
    epochs: int = 2000
    batch_size: int = 32
    seed: int = 0
    hidden_sizes: tuple[int, ...] = (64, 64)
    d: int = 40

    def __post_init__(self):
        if not 0 < self.lam <= 1:
            raise ValueError("lam must be in (0, 1]")
        if self.k_train < 1:
            raise ValueError("k_train must be >= 1")
        if self.d < 0:
            raise ValueError("d must be >= 0")


@dataclass
class KoopmanModel:
    encoder: EncoderParams
    operator: KoopmanOperator
    norm: NormScales
    n_x: int
    dt: float
    loss_curve: list[float] = field(default_factory=list)

    @property
    def d(self) -> int:
        return self.encoder.d

    @property
    def m(self) -> int:
        return self.n_x + self.d

    @property
    def n_followers(self) -> int:
        return self.n_x // 3


def encode(x: np.ndarray, enc: EncoderParams) -> np.ndarray:
    """Lift a state (or batch of states): Z = [x; psi(x)]."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    if enc.weights and xb.shape[1] != enc.n_x:
        raise ValueError(f"expected state dim {enc.n_x}, got {xb.shape[1]}")
    psi, _ = _encoder_forward(enc, xb)
    z = np.concatenate([xb, psi], axis=1)
    return z[0] if single else z


def project(z: np.ndarray, n_x: int) -> np.ndarray:
    """Recover the physical state: the first n_x lifted coordinates."""
    z = np.asarray(z)
    if z.shape[-1] < n_x:
        raise ValueError(f"lifted state of length {z.shape[-1]} cannot hold {n_x} physical coords")
    return z[..., :n_x]


def step(z: np.ndarray, u: float | np.ndarray, op: KoopmanOperator) -> np.ndarray:
    """One linear update z' = A z + B u (batched when z is 2-D)."""
    z = np.asarray(z, dtype=float)
    if z.ndim == 1:
        return op.A @ z + op.B * float(u)
    return z @ op.A.T + np.outer(np.asarray(u, dtype=float), op.B)


def rollout(x0: np.ndarray, u_seq: np.ndarray, model: KoopmanModel) -> tuple[np.ndarray, np.ndarray]:
    """K-step linear generation from a single lifted initial state.

    x0 and u_seq must already be normalized with the model scales. The encoder
    runs exactly once, on x0; all later evolution is linear. Returns the lifted
    sequence Z[0..K] and the projected physical predictions X_hat[1..K].
    """
    z = encode(np.asarray(x0, dtype=float), model.encoder)
    zs = np.empty((len(u_seq) + 1, model.m))
    zs[0] = z
    for k, u in enumerate(np.asarray(u_seq, dtype=float)):
        z = step(z, u, model.operator)
        if not np.all(np.isfinite(z)):
            raise DivergedError(f"diverged at step {k + 1}")
        zs[k + 1] = z
    return zs, project(zs[1:], model.n_x)


def rollout_physical(model: KoopmanModel, x0_raw: np.ndarray, u_raw: np.ndarray) -> np.ndarray:
    """Rollout in raw physical units: normalize, generate, denormalize."""
    x0 = model.norm.apply_states(x0_raw)
    u = model.norm.apply_controls(u_raw)
    _, xh = rollout(x0, u, model)
    return model.norm.invert_states(xh)


def rollout_loss(z_target: np.ndarray, z_pred: np.ndarray, lam: float) -> float:
    """Decay-weighted squared error sum_k lam^(k-1) ||Z_k - Z_hat_k||^2.

    Inputs are (K, m) for one window or (B, K, m) for a batch; the batched form
    averages over the batch.
    """
    zt = np.asarray(z_target, dtype=float)
    zp = np.asarray(z_pred, dtype=float)
    if zt.shape != zp.shape:
        raise ValueError("target/prediction shape mismatch")
    if not 0 < lam <= 1:
        raise ValueError("lam must be in (0, 1]")
    k = zt.shape[-2]
    w = lam ** np.arange(k)
    sq = np.sum((zt - zp) ** 2, axis=-1)  # (..., K)
    per = sq @ w
    return float(np.mean(per))


def _extract_windows(ds: Dataset, k_train: int) -> tuple[np.ndarray, np.ndarray]:
    """Non-overlapping windows (stride = k_train) of K+1 states and K controls."""
    xs, us = [], []
    for seq in ds.sequences:
        states = ds.norm.apply_states(seq.states) if ds.norm else seq.states
        controls = ds.norm.apply_controls(seq.controls) if ds.norm else seq.controls
        for start in range(0, seq.steps - k_train, k_train):
            xs.append(states[start : start + k_train + 1])
            us.append(controls[start : start + k_train])
    if not xs:
        raise ValueError(f"no windows of length {k_train + 1} extractable")
    return np.stack(xs), np.stack(us)


def loss_gradients(
    x_windows: np.ndarray,
    u_windows: np.ndarray,
    enc: EncoderParams,
    op: KoopmanOperator,
    lam: float,
):
    """Loss and exact reverse-mode gradients through the K-step rollout.

    x_windows: (B, K+1, n_x) normalized ground-truth states; u_windows: (B, K).
    The targets Z_k = encode(x_k) depend on the encoder parameters, and that
    dependence is included in the gradients. Returns
    (loss, dweights, dbiases, dA, dB).
    """
    xb = np.asarray(x_windows, dtype=float)
    ub = np.asarray(u_windows, dtype=float)
    bsz, kp1, n_x = xb.shape
    k_steps = kp1 - 1
    if ub.shape != (bsz, k_steps):
        raise ValueError("control windows must be (B, K)")

    flat = xb.reshape(bsz * kp1, n_x)
    psi, cache = _encoder_forward(enc, flat)
    z_all = np.concatenate([flat, psi], axis=1).reshape(bsz, kp1, -1)
    m = z_all.shape[-1]

    # forward linear recurrence from Z_0
    z_pred = np.empty((bsz, kp1, m))
    z_pred[:, 0] = z_all[:, 0]
    for k in range(k_steps):
        z_pred[:, k + 1] = z_pred[:, k] @ op.A.T + np.outer(ub[:, k], op.B)

    w = lam ** np.arange(k_steps)
    err = z_all[:, 1:] - z_pred[:, 1:]  # (B, K, m)
    loss = float(np.mean(np.sum(err**2, axis=-1) @ w))

    # adjoints of predictions and targets
    d_pred = (-2.0 / bsz) * err * w[None, :, None]
    d_target = -d_pred

    dA = np.zeros_like(op.A)
    dB = np.zeros_like(op.B)
    g = np.zeros((bsz, m))
    for k in range(k_steps - 1, -1, -1):
        g = g + d_pred[:, k]  # adjoint of z_pred[:, k+1]
        dA += g.T @ z_pred[:, k]
        dB += ub[:, k] @ g
        g = g @ op.A  # adjoint of z_pred[:, k]
    # g is now the adjoint of Z_0, which is an encoder output
    d_z_all = np.concatenate([g[:, None, :], d_target], axis=1)  # (B, K+1, m)
    dpsi = d_z_all.reshape(bsz * kp1, m)[:, n_x:]
    dws, dbs = _encoder_backward(enc, cache, dpsi)
    return loss, dws, dbs, dA, dB


class _Adam:
    """Adaptive-moment optimizer over a flat list of parameter arrays."""

    def __init__(self, params: list[np.ndarray], lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def update(self, grads: list[np.ndarray], lr: float | None = None):
        self.t += 1
        lr = self.lr if lr is None else lr
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)


def train(train_set: Dataset, cfg: TrainConfig) -> KoopmanModel:
    """Jointly fit the embedding network and the operator matrices.

    Minimizes the decay-weighted K-step rollout loss with mini-batch Adam.
    Deterministic for a fixed config (single-threaded, fixed shuffle order).
    The dataset must carry its normalization scales.
    """
    if train_set.norm is None:
        raise ValueError("train_set must carry normalization scales (fit_normalization)")
    xw, uw = _extract_windows(train_set, cfg.k_train)
    return train_on_windows(xw, uw, cfg, dt=train_set.dt, norm=train_set.norm)


def train_on_windows(
    x_windows: np.ndarray,
    u_windows: np.ndarray,
    cfg: TrainConfig,
    dt: float,
    norm: NormScales | None = None,
) -> KoopmanModel:
    """Fit on pre-extracted normalized windows (B, K+1, n_x) / (B, K)."""
    xw = np.asarray(x_windows, dtype=float)
    uw = np.asarray(u_windows, dtype=float)
    n_x = xw.shape[-1]
    if norm is None:
        norm = NormScales(state_scale=np.ones(n_x), control_scale=1.0)
    rng = np.random.default_rng(cfg.seed)
    enc = init_encoder(n_x, tuple(cfg.hidden_sizes), cfg.d, rng)
    m = n_x + cfg.d
    # identity A / zero B start the K-step rollout at neutral, bounded dynamics
    op = KoopmanOperator(A=np.eye(m), B=np.zeros(m))

    n_win = xw.shape[0]
    params = [*enc.weights, *enc.biases, op.A, op.B]
    optimizer = _Adam(params, cfg.learning_rate)

    loss_curve = []
    lr = cfg.learning_rate
    for epoch in range(cfg.epochs):
        order = rng.permutation(n_win)
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, n_win, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, dws, dbs, dA, dB = loss_gradients(xw[idx], uw[idx], enc, op, cfg.lam)
            if not np.isfinite(loss):
                raise DivergedError(f"training diverged at epoch {epoch}")
            optimizer.update([*dws, *dbs, dA, dB], lr=lr)
            epoch_loss += loss
            n_batches += 1
        loss_curve.append(epoch_loss / n_batches)
        lr *= cfg.lr_decay

    return KoopmanModel(
        encoder=enc,
        operator=op,
        norm=norm,
        n_x=n_x,
        dt=dt,
        loss_curve=loss_curve,
    )


def _array(a: np.ndarray) -> list:
    return np.asarray(a, dtype=float).tolist()


def model_document(model: KoopmanModel) -> dict:
    """Self-describing dict for the versioned model file."""
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "kind": "koopman",
        "n_x": model.n_x,
        "d": model.d,
        "m": model.m,
        "dt": model.dt,
        "state_scale": _array(model.norm.state_scale),
        "control_scale": model.norm.control_scale,
        "encoder": {
            "activation": model.encoder.activation,
            "layers": [
                {"W": _array(w), "b": _array(b)}
                for w, b in zip(model.encoder.weights, model.encoder.biases)
            ],
        },
        "A": _array(model.operator.A),
        "B": _array(model.operator.B),
    }


def write_document(doc: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")


def read_document(path) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ModelFormatError(f"{path}: corrupt model file ({exc})") from None
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise ModelFormatError(f"{path}: not a {MODEL_FORMAT} file")
    if doc.get("version") != MODEL_VERSION:
        raise ModelFormatError(f"{path}: unsupported version {doc.get('version')!r}")
    return doc


def save_model(model: KoopmanModel, path) -> None:
    write_document(model_document(model), path)


def load_model(path) -> KoopmanModel:
    doc = read_document(path)
    if doc.get("kind") != "koopman":
        raise ModelFormatError(f"{path}: expected kind 'koopman', got {doc.get('kind')!r}")
    try:
        enc = EncoderParams(
            weights=[np.asarray(l["W"], dtype=float) for l in doc["encoder"]["layers"]],
            biases=[np.asarray(l["b"], dtype=float) for l in doc["encoder"]["layers"]],
            activation=doc["encoder"]["activation"],
        )
        op = KoopmanOperator(A=np.asarray(doc["A"], dtype=float), B=np.asarray(doc["B"], dtype=float))
        norm = NormScales(
            state_scale=np.asarray(doc["state_scale"], dtype=float),
            control_scale=float(doc["control_scale"]),
        )
        model = KoopmanModel(encoder=enc, operator=op, norm=norm, n_x=int(doc["n_x"]), dt=float(doc["dt"]))
    except (KeyError, TypeError) as exc:
        raise ModelFormatError(f"{path}: missing field {exc}") from None
    if model.m != op.m:
        raise ModelFormatError(f"{path}: inconsistent dimensions (n_x + d != m)")
    return model
