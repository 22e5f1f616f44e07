"""Distribution-drift detection on voltage magnitudes and the layer-freezing
incremental update that responds to it.

The indicator splits the training-era magnitude pool into chronological
windows, measures the 1-D Wasserstein distance from each window to the newly
collected pool, and sums the distances. The trigger threshold self-calibrates
from leave-one-out distances inside the training pool, so "how different is
new data" is judged against "how different training windows already are from
each other".
"""

from dataclasses import dataclass, field

import numpy as np

from .estimator import TrainConfig, scale, train

__all__ = [
    "DriftError", "DriftIndicator", "ILConfig",
    "wasserstein_1d", "drift_indicator", "incremental_update",
]


class DriftError(Exception):
    pass


def wasserstein_1d(a, b):
    """1-Wasserstein distance between two empirical distributions.

    Uses the quantile-coupling form: integrate |F_a^-1 - F_b^-1| over the
    unit interval, evaluated exactly from the sorted samples. Sizes may
    differ. Symmetric and nonnegative by construction.
    """
    a = np.sort(np.asarray(a, dtype=np.float64).ravel())
    b = np.sort(np.asarray(b, dtype=np.float64).ravel())
    if a.size == 0 or b.size == 0:
        raise DriftError("empty sample set")
    both = np.concatenate([a, b])
    both.sort(kind="mergesort")
    deltas = np.diff(both)
    cdf_a = np.searchsorted(a, both[:-1], side="right") / a.size
    cdf_b = np.searchsorted(b, both[:-1], side="right") / b.size
    return float(np.sum(np.abs(cdf_a - cdf_b) * deltas))


@dataclass
class DriftIndicator:
    n_windows: int
    distances: list                  # W_i, one per training window
    total: float                     # sum of the W_i
    threshold: float                 # self-calibrated trigger level
    calibration: list = field(default_factory=list)

    @property
    def triggered(self):
        return self.total > self.threshold

    def rows(self):
        """CSV-ready rows: window id, W_i, tt, tt*, triggered flag."""
        out = []
        for i, w in enumerate(self.distances):
            out.append((i, w, self.total, self.threshold, int(self.triggered)))
        return out


def _chronological_windows(pool, n_windows):
    pool = np.asarray(pool, dtype=np.float64)
    if pool.ndim == 1:
        pool = pool[:, None]
    if n_windows < 1:
        raise DriftError("need at least one window")
    if n_windows > pool.shape[0]:
        raise DriftError("cannot split %d time steps into %d windows"
                         % (pool.shape[0], n_windows))
    return np.array_split(pool, n_windows, axis=0)


def _pool_distance(a, b, per_node):
    if per_node:
        if a.shape[1] != b.shape[1]:
            raise DriftError("per-node mode needs matching node counts")
        return float(np.mean([wasserstein_1d(a[:, j], b[:, j])
                              for j in range(a.shape[1])]))
    return wasserstein_1d(a.ravel(), b.ravel())


def drift_indicator(training_pool, new_pool, n_windows, per_node=False):
    """Windowed drift indicator for a new magnitude pool.

    training_pool is time-major (steps, or steps x nodes) and is split into
    n_windows chronological sub-pools; each contributes one distance to the
    new pool. The threshold is mean + 3 std of leave-one-out indicator
    values inside the training pool, rescaled to the full window count
    (each leave-one-out value sums one fewer distance than the real
    indicator does). With a single window no calibration is possible and
    the threshold is infinite.
    """
    windows = _chronological_windows(training_pool, n_windows)
    new = np.asarray(new_pool, dtype=np.float64)
    if new.ndim == 1:
        new = new[:, None]
    if new.size == 0:
        raise DriftError("empty sample set")
    distances = [_pool_distance(w, new, per_node) for w in windows]
    total = float(sum(distances))

    calibration = []
    if n_windows >= 2:
        rescale = n_windows / (n_windows - 1)
        for j in range(n_windows):
            tt_j = sum(_pool_distance(windows[i], windows[j], per_node)
                       for i in range(n_windows) if i != j)
            calibration.append(rescale * tt_j)
        cal = np.array(calibration)
        threshold = float(cal.mean() + 3.0 * cal.std())
    else:
        threshold = float("inf")
    return DriftIndicator(n_windows, distances, total, threshold, calibration)


@dataclass
class ILConfig:
    frozen_layers: tuple = (4, 5, 6)   # 1-based layer indices, counted fc1..fcL
    lr: float = 5.0e-6
    decay: float = 1.0                 # per-round learning-rate factor
    max_epochs: int = 1000
    batch: int = 25
    weight_decay: float = 1e-4
    seed: int = 0
    stop_train_mse: float = None

    def __post_init__(self):
        if not 0.0 < self.decay <= 1.0:
            raise ValueError("decay must be in (0, 1]")
        if self.lr <= 0 or self.max_epochs < 1:
            raise ValueError("lr and max_epochs must be positive")
        if any(i < 1 for i in self.frozen_layers):
            raise ValueError("frozen layer indices are 1-based")


def incremental_update(model, scaler, new_train, new_holdout, cfg,
                       round_index=0):
    """Train a copy of the model on newly collected data with some layers
    frozen; the input model is left untouched so the old checkpoint stays
    valid. Returns (updated model, history); the history records the
    effective learning rate lr = cfg.lr * cfg.decay ** round_index.

    new_train and new_holdout are (features, targets) pairs; holdout may be
    None, in which case the train split fraction applies.
    """
    bad = [i for i in cfg.frozen_layers if i > model.n_layers]
    if bad:
        raise DriftError("frozen layer index %d exceeds depth %d"
                         % (bad[0], model.n_layers))
    if len(set(cfg.frozen_layers)) >= model.n_layers:
        raise DriftError("all layers frozen, nothing left to train")

    updated = model.copy()
    for i in cfg.frozen_layers:
        updated.frozen[i - 1] = True
    lr = cfg.lr * cfg.decay ** round_index

    X, Y = new_train
    if scaler is not None:
        X = scale(scaler, X)
    holdout = None
    if new_holdout is not None:
        Xh, Yh = new_holdout
        if scaler is not None:
            Xh = scale(scaler, Xh)
        holdout = (Xh, Yh)

    tc = TrainConfig(lr=cfg.lr, epochs=cfg.max_epochs, batch=cfg.batch,
                     weight_decay=cfg.weight_decay, seed=cfg.seed,
                     stop_train_mse=cfg.stop_train_mse)
    updated, history = train(updated, X, Y, tc, lr=lr, holdout=holdout)
    history["lr"] = lr
    history["round"] = round_index
    history["frozen_layers"] = sorted(set(cfg.frozen_layers))
    return updated, history
