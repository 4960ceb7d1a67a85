"""Lightweight predictors mapping feature vectors to parameter estimates.

Four families, all cheap to evaluate and fully deterministic given a seed:

* a compact 3-layer ReLU network trained with AMSGrad and early stopping;
* CART regression trees (variance-reduction splits, mean leaves);
* bagged forests of such trees (mean vote) and classification forests
  (Gini splits, majority vote, ties to the lowest class id);
* a minimum-distance classifier snapping estimates onto a finite mode set.

Trees are stored as flat node arrays so that predictors serialize to plain
JSON and evaluation cost never depends on the training-set size.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, NumericalError

__all__ = [
    "MlpHyper",
    "MlpPredictor",
    "TrainReport",
    "TreePredictor",
    "ForestPredictor",
    "train_mlp",
    "mlp_forward",
    "train_dtr",
    "train_rfr",
    "train_rfc",
    "min_distance_classify",
    "min_distance_labels",
    "predictor_from_dict",
]


def _frozen(a, dtype=float) -> np.ndarray:
    out = np.array(a, dtype=dtype)
    out.setflags(write=False)
    return out


# ---------------------------------------------------------------------------
# ReLU network
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MlpHyper:
    """Training hyper-parameters; the defaults are the reference setup.

    The architecture (two 30-neuron ReLU layers) is fixed by the design;
    the optimization settings were chosen empirically on the drift
    benchmark and are exposed for overriding.
    """

    hidden: int = 30
    lr: float = 3e-3
    batch: int = 64
    max_epochs: int = 1000
    patience: int = 30
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    val_fraction: float = 0.05


@dataclass(frozen=True)
class TrainReport:
    final_train_loss: float
    val_losses: tuple[float, ...]
    epochs: int
    seconds: float


@dataclass(frozen=True)
class MlpPredictor:
    """Two equal ReLU hidden layers with a linear output layer."""

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(_frozen(w) for w in self.weights))
        object.__setattr__(self, "biases", tuple(_frozen(b) for b in self.biases))
        if len(self.weights) != 3 or len(self.biases) != 3:
            raise ConfigError("expected exactly 3 layers")
        for w, b in zip(self.weights, self.biases):
            if w.shape[1] != b.shape[0]:
                raise ConfigError("bias width must match layer output width")
        if self.weights[0].shape[1] != self.weights[1].shape[0] or self.weights[
            1
        ].shape[1] != self.weights[2].shape[0]:
            raise ConfigError("consecutive layer dimensions must chain")

    @property
    def input_width(self) -> int:
        return self.weights[0].shape[0]

    @property
    def output_width(self) -> int:
        return self.weights[2].shape[1]

    def predict(self, X: np.ndarray) -> np.ndarray:
        return mlp_forward(self, X)

    def to_dict(self) -> dict:
        return {
            "kind": "mlp",
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "MlpPredictor":
        return cls(
            weights=tuple(np.asarray(w) for w in doc["weights"]),
            biases=tuple(np.asarray(b) for b in doc["biases"]),
        )


def mlp_forward(mlp: MlpPredictor, X: np.ndarray) -> np.ndarray:
    """Affine-ReLU-affine-ReLU-affine composition; accepts a row or a matrix."""
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.shape[1] != mlp.input_width:
        raise DataError(f"input width {X.shape[1]}, network expects {mlp.input_width}")
    h = np.maximum(X @ mlp.weights[0] + mlp.biases[0], 0.0)
    h = np.maximum(h @ mlp.weights[1] + mlp.biases[1], 0.0)
    out = h @ mlp.weights[2] + mlp.biases[2]
    return out[0] if single else out


def _mlp_loss_and_grads(weights, biases, X, Y):
    """MSE loss and its gradients for one batch (used by training and tests)."""
    z1 = X @ weights[0] + biases[0]
    h1 = np.maximum(z1, 0.0)
    z2 = h1 @ weights[1] + biases[1]
    h2 = np.maximum(z2, 0.0)
    pred = h2 @ weights[2] + biases[2]
    diff = pred - Y
    loss = float(np.mean(diff**2))
    g_out = 2.0 * diff / diff.size
    gw3 = h2.T @ g_out
    gb3 = g_out.sum(axis=0)
    g_h2 = (g_out @ weights[2].T) * (z2 > 0)
    gw2 = h1.T @ g_h2
    gb2 = g_h2.sum(axis=0)
    g_h1 = (g_h2 @ weights[1].T) * (z1 > 0)
    gw1 = X.T @ g_h1
    gb1 = g_h1.sum(axis=0)
    return loss, [gw1, gw2, gw3], [gb1, gb2, gb3]


def train_mlp(
    X: np.ndarray,
    Y: np.ndarray,
    seed,
    hyper: MlpHyper = MlpHyper(),
    X_val: np.ndarray | None = None,
    Y_val: np.ndarray | None = None,
) -> tuple[MlpPredictor, TrainReport]:
    """Fit the network with AMSGrad and patience-based early stopping.

    When no validation set is passed, the contiguous tail
    (``hyper.val_fraction`` of the rows) is held out for the stopping
    criterion.  The weights with the best validation MSE are returned.
    """
    started = time.perf_counter()
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if len(X) != len(Y):
        raise DataError(f"{len(X)} feature rows vs {len(Y)} target rows")
    if len(X) < 2:
        raise DataError("need at least 2 training rows")
    if X_val is None:
        n_val = max(1, int(round(hyper.val_fraction * len(X))))
        if n_val >= len(X):
            raise DataError("validation split leaves no training data")
        X, X_val = X[:-n_val], X[-n_val:]
        Y, Y_val = Y[:-n_val], Y[-n_val:]
    else:
        X_val = np.asarray(X_val, dtype=float)
        Y_val = np.asarray(Y_val, dtype=float)
        if Y_val.ndim == 1:
            Y_val = Y_val[:, None]

    rng = np.random.default_rng(seed)
    sizes = [X.shape[1], hyper.hidden, hyper.hidden, Y.shape[1]]
    weights = [
        rng.standard_normal((sizes[i], sizes[i + 1])) * np.sqrt(2.0 / sizes[i])
        for i in range(3)
    ]
    biases = [np.zeros(sizes[i + 1]) for i in range(3)]

    params = weights + biases
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    v_max = [np.zeros_like(p) for p in params]
    t = 0

    best_val = np.inf
    best_params = [p.copy() for p in params]
    bad_epochs = 0
    val_curve: list[float] = []
    train_loss = np.nan
    n = len(X)
    epoch = 0
    for epoch in range(1, hyper.max_epochs + 1):
        perm = rng.permutation(n)
        losses = []
        for start in range(0, n, hyper.batch):
            idx = perm[start : start + hyper.batch]
            loss, gw, gb = _mlp_loss_and_grads(weights, biases, X[idx], Y[idx])
            losses.append(loss)
            t += 1
            # max of the raw second moment; bias corrections fold into the step
            step = hyper.lr * np.sqrt(1.0 - hyper.beta2**t) / (1.0 - hyper.beta1**t)
            for p, g, mi, vi, vx in zip(params, gw + gb, m, v, v_max):
                mi *= hyper.beta1
                mi += (1 - hyper.beta1) * g
                vi *= hyper.beta2
                vi += (1 - hyper.beta2) * g * g
                np.maximum(vx, vi, out=vx)
                p -= step * mi / (np.sqrt(vx) + hyper.eps)
        train_loss = float(np.mean(losses))
        val_pred = np.maximum(X_val @ weights[0] + biases[0], 0.0)
        val_pred = np.maximum(val_pred @ weights[1] + biases[1], 0.0)
        val_pred = val_pred @ weights[2] + biases[2]
        val_loss = float(np.mean((val_pred - Y_val) ** 2))
        val_curve.append(val_loss)
        if not np.isfinite(train_loss) or not np.isfinite(val_loss):
            raise NumericalError(f"training loss became non-finite at epoch {epoch}")
        if val_loss < best_val:
            best_val = val_loss
            best_params = [p.copy() for p in params]
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= hyper.patience:
                break

    mlp = MlpPredictor(weights=tuple(best_params[:3]), biases=tuple(best_params[3:]))
    report = TrainReport(
        final_train_loss=train_loss,
        val_losses=tuple(val_curve),
        epochs=epoch,
        seconds=time.perf_counter() - started,
    )
    return mlp, report


# ---------------------------------------------------------------------------
# CART trees and forests
# ---------------------------------------------------------------------------

_LEAF = -1


@dataclass(frozen=True)
class TreePredictor:
    """Flat-array binary tree; ``feature == -1`` marks a leaf.

    ``value`` holds the mean target vector (regression) or the class id
    (classification) per node.
    """

    task: str
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def __post_init__(self):
        if self.task not in ("regression", "classification"):
            raise ConfigError(f"unknown tree task {self.task!r}")
        object.__setattr__(self, "feature", _frozen(self.feature, dtype=int))
        object.__setattr__(self, "threshold", _frozen(self.threshold))
        object.__setattr__(self, "left", _frozen(self.left, dtype=int))
        object.__setattr__(self, "right", _frozen(self.right, dtype=int))
        object.__setattr__(self, "value", _frozen(np.atleast_2d(self.value)))

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index for every row of ``X``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        node = np.zeros(len(X), dtype=int)
        while True:
            feat = self.feature[node]
            internal = feat != _LEAF
            if not internal.any():
                return node
            rows = np.nonzero(internal)[0]
            goes_left = X[rows, feat[rows]] <= self.threshold[node[rows]]
            node[rows] = np.where(
                goes_left, self.left[node[rows]], self.right[node[rows]]
            )

    def predict(self, X: np.ndarray) -> np.ndarray:
        single = np.asarray(X).ndim == 1
        leaf = self.apply(X)
        out = self.value[leaf]
        if self.task == "classification":
            out = out[:, 0].astype(int)
        return out[0] if single else out

    def max_depth(self) -> int:
        depth = 0
        stack = [(0, 0)]
        while stack:
            node, d = stack.pop()
            depth = max(depth, d)
            if self.feature[node] != _LEAF:
                stack.append((self.left[node], d + 1))
                stack.append((self.right[node], d + 1))
        return depth

    def to_dict(self) -> dict:
        return {
            "kind": "tree",
            "task": self.task,
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TreePredictor":
        return cls(
            task=doc["task"],
            feature=np.asarray(doc["feature"]),
            threshold=np.asarray(doc["threshold"]),
            left=np.asarray(doc["left"]),
            right=np.asarray(doc["right"]),
            value=np.asarray(doc["value"]),
        )


def _best_split_regression(Xf, Y, min_leaf):
    """Best (feature, threshold) by total child SSE; None when nothing is valid."""
    n = len(Y)
    best = None
    total_sq = (Y * Y).sum(axis=0)
    total_sum = Y.sum(axis=0)
    for f in range(Xf.shape[1]):
        vals = Xf[:, f]
        order = np.argsort(vals, kind="stable")
        sv = vals[order]
        cut = np.nonzero(sv[1:] > sv[:-1])[0]
        if cut.size == 0:
            continue
        sizes = cut + 1
        ok = (sizes >= min_leaf) & (n - sizes >= min_leaf)
        if not ok.any():
            continue
        sizes = sizes[ok]
        thresholds = (sv[cut[ok]] + sv[cut[ok] + 1]) / 2.0
        ys = Y[order]
        csum = np.cumsum(ys, axis=0)[sizes - 1]
        csq = np.cumsum(ys * ys, axis=0)[sizes - 1]
        nl = sizes[:, None]
        nr = n - nl
        sse = (csq - csum**2 / nl).sum(axis=1)
        sse += ((total_sq - csq) - (total_sum - csum) ** 2 / nr).sum(axis=1)
        i = int(np.argmin(sse))
        if best is None or sse[i] < best[0]:
            best = (float(sse[i]), f, float(thresholds[i]))
    return best


def _best_split_gini(Xf, onehot, min_leaf):
    """Best (feature, threshold) by weighted child Gini impurity."""
    n = len(onehot)
    best = None
    total = onehot.sum(axis=0)
    for f in range(Xf.shape[1]):
        vals = Xf[:, f]
        order = np.argsort(vals, kind="stable")
        sv = vals[order]
        cut = np.nonzero(sv[1:] > sv[:-1])[0]
        if cut.size == 0:
            continue
        sizes = cut + 1
        ok = (sizes >= min_leaf) & (n - sizes >= min_leaf)
        if not ok.any():
            continue
        sizes = sizes[ok]
        thresholds = (sv[cut[ok]] + sv[cut[ok] + 1]) / 2.0
        counts = np.cumsum(onehot[order], axis=0)[sizes - 1]
        nl = sizes.astype(float)
        nr = n - nl
        # weighted impurity: n_child * (1 - sum (c/n_child)^2)
        score = (nl - (counts**2).sum(axis=1) / nl) + (
            nr - ((total - counts) ** 2).sum(axis=1) / nr
        )
        i = int(np.argmin(score))
        if best is None or score[i] < best[0]:
            best = (float(score[i]), f, float(thresholds[i]))
    return best


def _grow_tree(X, Y, task, max_depth, min_leaf, classes=None):
    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    value: list[np.ndarray] = []

    if task == "classification":
        onehot = (Y[:, None] == classes[None, :]).astype(float)

    def leaf_value(rows):
        if task == "regression":
            return Y[rows].mean(axis=0)
        counts = onehot[rows].sum(axis=0)
        return np.array([float(classes[int(np.argmax(counts))])])

    def make(rows, depth) -> int:
        idx = len(feature)
        feature.append(_LEAF)
        threshold.append(0.0)
        left.append(_LEAF)
        right.append(_LEAF)
        value.append(leaf_value(rows))
        if depth >= max_depth or len(rows) < 2 * min_leaf:
            return idx
        if task == "regression":
            yr = Y[rows]
            if np.allclose(yr, yr[0]):
                return idx
            best = _best_split_regression(X[rows], yr, min_leaf)
        else:
            if len(np.unique(Y[rows])) == 1:
                return idx
            best = _best_split_gini(X[rows], onehot[rows], min_leaf)
        if best is None:
            return idx
        _, f, thr = best
        mask = X[rows, f] <= thr
        feature[idx] = f
        threshold[idx] = thr
        left[idx] = make(rows[mask], depth + 1)
        right[idx] = make(rows[~mask], depth + 1)
        return idx

    make(np.arange(len(X)), 0)
    return TreePredictor(
        task=task,
        feature=np.asarray(feature),
        threshold=np.asarray(threshold),
        left=np.asarray(left),
        right=np.asarray(right),
        value=np.vstack(value),
    )


def train_dtr(
    X: np.ndarray, Y: np.ndarray, max_depth: int = 15, min_leaf: int = 5
) -> TreePredictor:
    """CART regression tree: variance-reduction splits, mean leaf values."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if len(X) != len(Y):
        raise DataError(f"{len(X)} feature rows vs {len(Y)} target rows")
    if len(X) < 2 * min_leaf:
        raise DataError(f"need at least {2 * min_leaf} rows to consider a split")
    return _grow_tree(X, Y, "regression", max_depth, min_leaf)


@dataclass(frozen=True)
class ForestPredictor:
    """Bagged trees with mean (regression) or majority-vote aggregation."""

    task: str
    trees: tuple[TreePredictor, ...]
    classes: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "trees", tuple(self.trees))
        if self.task not in ("regression", "classification"):
            raise ConfigError(f"unknown forest task {self.task!r}")
        if self.task == "classification":
            if self.classes is None:
                raise ConfigError("classification forest needs its class list")
            object.__setattr__(self, "classes", _frozen(self.classes, dtype=int))

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def predict(self, X: np.ndarray) -> np.ndarray:
        single = np.asarray(X).ndim == 1
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.task == "regression":
            out = np.mean([t.predict(X) for t in self.trees], axis=0)
        else:
            votes = np.zeros((len(X), len(self.classes)), dtype=int)
            lookup = {int(c): i for i, c in enumerate(self.classes)}
            for t in self.trees:
                pred = t.predict(X)
                for c, i in lookup.items():
                    votes[:, i] += pred == c
            # ties resolve to the lowest class id because classes are sorted
            out = self.classes[np.argmax(votes, axis=1)]
        return out[0] if single else out

    def to_dict(self) -> dict:
        doc = {
            "kind": "forest",
            "task": self.task,
            "trees": [t.to_dict() for t in self.trees],
        }
        if self.classes is not None:
            doc["classes"] = self.classes.tolist()
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "ForestPredictor":
        return cls(
            task=doc["task"],
            trees=tuple(TreePredictor.from_dict(t) for t in doc["trees"]),
            classes=np.asarray(doc["classes"]) if "classes" in doc else None,
        )


def _bootstrap_rows(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.integers(0, n, size=n)


def train_rfr(
    X: np.ndarray,
    Y: np.ndarray,
    n_trees: int = 10,
    max_depth: int = 15,
    min_leaf: int = 5,
    seed=0,
    bootstrap: bool = True,
) -> ForestPredictor:
    """Bagged regression forest; every split sees the full feature set."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    seeds = np.random.SeedSequence(seed).spawn(n_trees)
    trees = []
    for s in seeds:
        rows = _bootstrap_rows(np.random.default_rng(s), len(X)) if bootstrap else slice(None)
        trees.append(_grow_tree(X[rows], Y[rows], "regression", max_depth, min_leaf))
    return ForestPredictor(task="regression", trees=tuple(trees))


def train_rfc(
    X: np.ndarray,
    labels: np.ndarray,
    n_trees: int = 10,
    max_depth: int = 15,
    min_leaf: int = 5,
    seed=0,
    bootstrap: bool = True,
) -> ForestPredictor:
    """Bagged classification forest with Gini splits and majority vote."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    labels = np.asarray(labels, dtype=int)
    classes = np.unique(labels)
    if len(classes) < 2:
        warnings.warn("single-class training data: classifier is constant")
    seeds = np.random.SeedSequence(seed).spawn(n_trees)
    trees = []
    for s in seeds:
        rows = _bootstrap_rows(np.random.default_rng(s), len(X)) if bootstrap else slice(None)
        trees.append(
            _grow_tree(X[rows], labels[rows], "classification", max_depth, min_leaf, classes=classes)
        )
    return ForestPredictor(task="classification", trees=tuple(trees), classes=classes)


# ---------------------------------------------------------------------------
# Minimum-distance mode classification
# ---------------------------------------------------------------------------


def min_distance_classify(rho_hat, modes) -> int:
    """Index of the mode value closest (Euclidean) to the estimate.

    Ties resolve to the lowest index.
    """
    modes = np.asarray(modes, dtype=float)
    if modes.size == 0:
        raise ConfigError("empty mode set")
    modes = np.atleast_2d(modes)
    if modes.shape[0] == 1 and modes.shape[1] > 1:
        modes = modes.T
    rho_hat = np.atleast_1d(np.asarray(rho_hat, dtype=float))
    d2 = ((modes - rho_hat[None, :]) ** 2).sum(axis=1)
    return int(np.argmin(d2))


def min_distance_labels(rho_hats: np.ndarray, modes) -> np.ndarray:
    """Vectorized :func:`min_distance_classify` over rows of estimates."""
    modes = np.atleast_2d(np.asarray(modes, dtype=float))
    if modes.shape[0] == 1 and modes.shape[1] > 1:
        modes = modes.T
    rho_hats = np.asarray(rho_hats, dtype=float)
    if rho_hats.ndim == 1:
        rho_hats = rho_hats[:, None]
    d2 = ((rho_hats[:, None, :] - modes[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d2, axis=1)


def predictor_from_dict(doc: dict):
    kind = doc.get("kind")
    if kind == "mlp":
        return MlpPredictor.from_dict(doc)
    if kind == "tree":
        return TreePredictor.from_dict(doc)
    if kind == "forest":
        return ForestPredictor.from_dict(doc)
    raise DataError(f"unknown predictor kind {kind!r}")
