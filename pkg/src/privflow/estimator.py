"""Voltage magnitude estimator: a fully connected network trained on
(P, Q) features with an AdamW loop written directly in numpy.

The working configuration is six weight layers, 512-unit tanh hidden layers,
an identity output, and a standardizing input scaler; five-layer variants
without the scaler serve as baselines. Training is deterministic under a
fixed seed on one host: shuffling comes from the run seed, parameters update
in a fixed order, and no threading touches the accumulation order.

float32 is the default compute dtype (about 3.5x faster per step on one
core); float64 is available where gradient-check precision matters.
Checkpoints always store float64, so a float32 model round-trips exactly.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Scaler", "EstimatorModel", "TrainConfig", "TrainingError", "ErrorStats",
    "fit_scaler", "scale", "init_model", "build_preset", "forward",
    "mse_loss", "train", "evaluate", "save_model", "load_model",
    "features_from_profile", "targets_from_state", "PRESETS",
]

HIDDEN_WIDTH = 512


class TrainingError(Exception):
    pass


# ---------------------------------------------------------------------------
# Scaler
# ---------------------------------------------------------------------------


@dataclass
class Scaler:
    mean: np.ndarray
    std: np.ndarray             # floored copy actually used for scaling
    eps: float
    constant_features: list     # indices where the floor kicked in


def fit_scaler(X, eps=1e-8):
    """Per-feature standardization parameters from the training split."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("need a 2-D matrix with at least two samples")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    constant = np.flatnonzero(std <= eps)
    floored = std.copy()
    floored[constant] = eps
    for j in constant:
        # a truly constant column should scale to exact zeros, not mean noise
        if np.ptp(X[:, j]) == 0.0:
            mean[j] = X[0, j]
    return Scaler(mean, floored, eps, [int(i) for i in constant])


def scale(scaler, X):
    return (np.asarray(X, dtype=np.float64) - scaler.mean) / scaler.std


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------


class EstimatorModel:
    """Weight/bias pairs fc1..fcL with tanh between them and a linear output.

    frozen[i] marks layer i (0-based) as untouchable for the optimizer.
    """

    def __init__(self, weights, biases, dtype=np.float32):
        if len(weights) != len(biases):
            raise ValueError("weights and biases must pair up")
        for i in range(len(weights) - 1):
            if weights[i].shape[1] != weights[i + 1].shape[0]:
                raise ValueError("layer %d output width %d does not chain into "
                                 "layer %d" % (i + 1, weights[i].shape[1], i + 2))
        self.weights = [np.asarray(w, dtype=dtype) for w in weights]
        self.biases = [np.asarray(b, dtype=dtype) for b in biases]
        self.frozen = [False] * len(weights)
        self.dtype = np.dtype(dtype)

    @property
    def n_layers(self):
        return len(self.weights)

    @property
    def input_width(self):
        return self.weights[0].shape[0]

    @property
    def output_width(self):
        return self.weights[-1].shape[1]

    def copy(self):
        m = EstimatorModel([w.copy() for w in self.weights],
                           [b.copy() for b in self.biases], dtype=self.dtype)
        m.frozen = list(self.frozen)
        return m

    def astype(self, dtype):
        m = EstimatorModel(self.weights, self.biases, dtype=dtype)
        m.frozen = list(self.frozen)
        return m


def init_model(layer_sizes, seed=0, dtype=np.float32):
    """Uniform fan-in initialization: W, b ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return EstimatorModel(weights, biases, dtype=dtype)


# name -> (weight layer count, uses input scaler)
PRESETS = {
    "ann0": (5, False),
    "ann1": (5, False),
    "ann2": (6, True),
}


def build_preset(name, n_buses, seed=0, dtype=np.float32):
    """Model skeleton for a named preset; returns (model, wants_scaler)."""
    if name not in PRESETS:
        raise ValueError("unknown preset %r" % name)
    depth, wants_scaler = PRESETS[name]
    sizes = [2 * n_buses] + [HIDDEN_WIDTH] * (depth - 1) + [n_buses]
    return init_model(sizes, seed=seed, dtype=dtype), wants_scaler


def forward(model, x):
    """Network output for a batch (or single vector) of features."""
    a = np.asarray(x, dtype=model.dtype)
    single = a.ndim == 1
    if single:
        a = a[None, :]
    if a.shape[1] != model.input_width:
        raise ValueError("feature width %d, model expects %d"
                         % (a.shape[1], model.input_width))
    last = model.n_layers - 1
    for i, (W, b) in enumerate(zip(model.weights, model.biases)):
        a = a @ W + b
        if i < last:
            a = np.tanh(a)
    return a[0] if single else a


def mse_loss(pred, target):
    """Mean over nodes and batch of the squared error."""
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ValueError("shape mismatch %s vs %s" % (pred.shape, target.shape))
    d = pred.astype(np.float64) - target.astype(np.float64)
    return float(np.mean(d * d))


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    lr: float = 5.0e-6
    epochs: int = 1500
    batch: int = 25
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4
    seed: int = 0
    split: float = 0.8          # train fraction; rest reports as test loss
    stop_train_mse: float = None  # optional early stop under the epoch cap

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if not 0 < self.split < 1:
            raise ValueError("split must be in (0, 1)")
        if self.batch < 1 or self.epochs < 1:
            raise ValueError("batch and epochs must be at least 1")


def _forward_cached(model, X):
    acts = [X]
    a = X
    last = model.n_layers - 1
    for i, (W, b) in enumerate(zip(model.weights, model.biases)):
        a = a @ W + b
        if i < last:
            a = np.tanh(a)
        acts.append(a)
    return acts


def _backward(model, acts, target):
    """Gradients of mse_loss wrt every weight and bias."""
    B = target.shape[0]
    pred = acts[-1]
    delta = (2.0 / (B * target.shape[1])) * (pred - target)
    delta = delta.astype(model.dtype)
    gws = [None] * model.n_layers
    gbs = [None] * model.n_layers
    for i in range(model.n_layers - 1, -1, -1):
        a_prev = acts[i]
        gws[i] = a_prev.T @ delta
        gbs[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ model.weights[i].T) * (1.0 - a_prev * a_prev)
    return gws, gbs


class _AdamW:
    """Decoupled-weight-decay Adam with preallocated in-place buffers."""

    def __init__(self, model, cfg):
        self.cfg = cfg
        self.t = 0
        dt = model.dtype
        self.m = [(np.zeros_like(w, dtype=dt), np.zeros_like(b, dtype=dt))
                  for w, b in zip(model.weights, model.biases)]
        self.v = [(np.zeros_like(w, dtype=dt), np.zeros_like(b, dtype=dt))
                  for w, b in zip(model.weights, model.biases)]
        self.scratch = [(np.empty_like(w, dtype=dt), np.empty_like(b, dtype=dt))
                        for w, b in zip(model.weights, model.biases)]

    def step(self, model, gws, gbs, lr=None):
        cfg = self.cfg
        lr = cfg.lr if lr is None else lr
        self.t += 1
        bc1 = 1.0 - cfg.beta1 ** self.t
        bc2 = 1.0 - cfg.beta2 ** self.t
        step_size = lr / bc1
        inv_sqrt_bc2 = 1.0 / np.sqrt(bc2)
        decay = 1.0 - lr * cfg.weight_decay
        for i in range(model.n_layers):
            if model.frozen[i]:
                continue
            for param, g, m, v, sq in (
                (model.weights[i], gws[i], self.m[i][0], self.v[i][0], self.scratch[i][0]),
                (model.biases[i], gbs[i], self.m[i][1], self.v[i][1], self.scratch[i][1]),
            ):
                np.multiply(g, g, out=sq)
                v *= cfg.beta2
                sq *= (1.0 - cfg.beta2)
                v += sq
                m *= cfg.beta1
                g *= (1.0 - cfg.beta1)
                m += g
                np.sqrt(v, out=sq)
                sq *= inv_sqrt_bc2
                sq += cfg.eps
                np.divide(m, sq, out=sq)
                sq *= step_size
                param *= decay
                param -= sq


def train(model, X, Y, cfg, lr=None, holdout=None):
    """Mini-batch AdamW training; returns (model, history).

    X, Y are the full feature/target matrices; cfg.split carves off the
    leading train fraction after a seeded shuffle, unless an explicit
    (X_test, Y_test) holdout is given, in which case all of X trains.
    history carries per-epoch train and test mse plus the epoch count run.
    """
    X = np.asarray(X, dtype=model.dtype)
    Y = np.asarray(Y, dtype=model.dtype)
    if X.shape[0] != Y.shape[0]:
        raise ValueError("row counts differ: %d vs %d" % (X.shape[0], Y.shape[0]))
    if holdout is None:
        perm = np.random.default_rng([cfg.seed, 0xA11]).permutation(X.shape[0])
        n_train = int(round(cfg.split * X.shape[0]))
        tr, te = perm[:n_train], perm[n_train:]
        X_tr, Y_tr = X[tr], Y[tr]
        X_te, Y_te = X[te], Y[te]
    else:
        X_tr, Y_tr = X, Y
        X_te = np.asarray(holdout[0], dtype=model.dtype)
        Y_te = np.asarray(holdout[1], dtype=model.dtype)
    opt = _AdamW(model, cfg)
    history = {"train": [], "test": []}
    n = X_tr.shape[0]
    for epoch in range(cfg.epochs):
        order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
        for lo in range(0, n, cfg.batch):
            idx = order[lo:lo + cfg.batch]
            acts = _forward_cached(model, X_tr[idx])
            gws, gbs = _backward(model, acts, Y_tr[idx])
            opt.step(model, gws, gbs, lr=lr)
        train_mse = mse_loss(forward(model, X_tr), Y_tr)
        test_mse = mse_loss(forward(model, X_te), Y_te) if len(X_te) else float("nan")
        history["train"].append(train_mse)
        history["test"].append(test_mse)
        if not np.isfinite(train_mse):
            raise TrainingError(
                "loss went non-finite at epoch %d (lr=%g, batch=%d)"
                % (epoch + 1, lr if lr is not None else cfg.lr, cfg.batch))
        if cfg.stop_train_mse is not None and train_mse < cfg.stop_train_mse:
            break
    history["epochs_run"] = len(history["train"])
    return model, history


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


@dataclass
class ErrorStats:
    errors: np.ndarray          # signed, samples x nodes
    mean: float
    std: float
    max_abs: float
    mean_abs: float
    histogram: tuple            # (counts, bin edges)


def evaluate(model, scaler, X, Y, bins=60):
    """Signed estimation errors against ground truth."""
    X = scale(scaler, X) if scaler is not None else X
    pred = forward(model, X).astype(np.float64)
    err = pred - np.asarray(Y, dtype=np.float64)
    return ErrorStats(err, float(err.mean()), float(err.std()),
                      float(np.abs(err).max()), float(np.abs(err).mean()),
                      np.histogram(err, bins=bins))


# ---------------------------------------------------------------------------
# Checkpoint format
# ---------------------------------------------------------------------------

_MAGIC = b"PFNN\x01"


def save_model(model, path, scaler=None):
    """Binary layout: magic, layer count, dtype code, scaler flag; per layer a
    shape header (rows, cols, frozen); then row-major float64 little-endian
    weights and biases per layer; then the scaler arrays when present."""
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<BBB", model.n_layers,
                            model.dtype.itemsize, 1 if scaler else 0))
        for i in range(model.n_layers):
            rows, cols = model.weights[i].shape
            f.write(struct.pack("<IIB", rows, cols, 1 if model.frozen[i] else 0))
        for W, b in zip(model.weights, model.biases):
            f.write(W.astype("<f8").tobytes())
            f.write(b.astype("<f8").tobytes())
        if scaler:
            f.write(struct.pack("<I", len(scaler.mean)))
            f.write(scaler.mean.astype("<f8").tobytes())
            f.write(scaler.std.astype("<f8").tobytes())
            f.write(struct.pack("<d", scaler.eps))
            f.write(struct.pack("<I", len(scaler.constant_features)))
            for idx in scaler.constant_features:
                f.write(struct.pack("<I", idx))


def load_model(path):
    """Returns (model, scaler or None)."""
    with open(path, "rb") as f:
        if f.read(5) != _MAGIC:
            raise ValueError("not a model checkpoint: %s" % path)
        n_layers, itemsize, has_scaler = struct.unpack("<BBB", f.read(3))
        dtype = {4: np.float32, 8: np.float64}[itemsize]
        shapes, frozen = [], []
        for _ in range(n_layers):
            rows, cols, fz = struct.unpack("<IIB", f.read(9))
            shapes.append((rows, cols))
            frozen.append(bool(fz))
        weights, biases = [], []
        for rows, cols in shapes:
            W = np.frombuffer(f.read(rows * cols * 8), dtype="<f8").reshape(rows, cols)
            b = np.frombuffer(f.read(cols * 8), dtype="<f8")
            weights.append(W)
            biases.append(b)
        model = EstimatorModel(weights, biases, dtype=dtype)
        model.frozen = frozen
        scaler = None
        if has_scaler:
            (F,) = struct.unpack("<I", f.read(4))
            mean = np.frombuffer(f.read(F * 8), dtype="<f8").copy()
            std = np.frombuffer(f.read(F * 8), dtype="<f8").copy()
            (eps,) = struct.unpack("<d", f.read(8))
            (nc,) = struct.unpack("<I", f.read(4))
            constant = [struct.unpack("<I", f.read(4))[0] for _ in range(nc)]
            scaler = Scaler(mean, std, eps, constant)
        return model, scaler


# ---------------------------------------------------------------------------
# Feature assembly
# ---------------------------------------------------------------------------


def features_from_profile(profile):
    """T x 2N matrix: active powers for every bus, then reactive powers."""
    return np.hstack([profile.p.T, profile.q.T])


def targets_from_state(state, bus_ids):
    """T x N magnitude matrix for the chosen buses (meters sit on PQ buses)."""
    rows = [state.bus_ids.index(b) for b in bus_ids]
    return state.v[rows].T
