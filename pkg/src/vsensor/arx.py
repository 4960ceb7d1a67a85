"""Local affine ARX identification and its observer-canonical realization.

One local model of order ``M`` with ``n_u`` inputs is the coefficient vector

    gamma = [a_M .. a_1 | b-block for u_{k-M} .. b-block for u_{k-1} | c]

paired with the regressor

    phi_k = [-y_{k-M} .. -y_{k-1}, u_{k-M} .. u_{k-1}, 1]

so that the one-step-ahead prediction is ``y_k ~ phi_k @ gamma``, i.e.

    y_k = -a_1 y_{k-1} - ... - a_M y_{k-M}
          + b_1' u_{k-1} + ... + b_M' u_{k-M} + c.

Time indices are 0-based throughout: the first usable regression row is
``k = M``.

A bank of representative local models is selected by growing a binary
regression tree over the measured parameter space: every candidate split is
scored by the total one-step-ahead squared error of the two children's
refitted least-squares models, and growth proceeds best-first until the
leaf cap is reached or no split helps.  Leaves keep the refit model, the
mean parameter vector of their members, and the member count.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from typing import Union

import numpy as np

from .dataset import TimeSeriesDataset
from .errors import ConfigError, DataError, NumericalError

__all__ = [
    "ArxCoefficients",
    "StateSpaceModel",
    "SegmentationTree",
    "TreeSplit",
    "TreeLeaf",
    "build_regressor",
    "regressor_matrix",
    "fit_arx_ls",
    "simulate_arx",
    "grow_segmentation_tree",
    "extract_local_models",
    "arx_to_statespace",
]

# Relative ridge weight applied to the normal equations when they are
# numerically singular (e.g. constant data).
RIDGE_FALLBACK_REL = 1e-8
# Much smaller uniform ridge used only while scanning split candidates,
# where thousands of little systems are solved in one batch and an exactly
# singular one must not abort the scan.
RIDGE_SCAN_REL = 1e-10


def _frozen(a) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class ArxCoefficients:
    """One local affine ARX model of order ``order`` with ``n_u`` inputs."""

    order: int
    n_u: int
    gamma: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "gamma", _frozen(self.gamma))
        if self.order < 1 or self.n_u < 1:
            raise ConfigError(f"order and n_u must be >= 1, got {self.order}, {self.n_u}")
        if self.gamma.shape != (self.n_gamma,):
            raise DataError(
                f"gamma has length {self.gamma.shape}, expected ({self.n_gamma},)"
            )
        if not np.isfinite(self.gamma).all():
            raise DataError("non-finite ARX coefficient")

    @property
    def n_gamma(self) -> int:
        return self.order * (1 + self.n_u) + 1

    @property
    def a_lags(self) -> np.ndarray:
        """``a_lags[i-1]`` multiplies ``y_{k-i}`` (after negation), i = 1..M."""
        return self.gamma[: self.order][::-1]

    @property
    def b_lags(self) -> np.ndarray:
        """``b_lags[i-1]`` is the row multiplying ``u_{k-i}``, i = 1..M."""
        blocks = self.gamma[self.order : -1].reshape(self.order, self.n_u)
        return blocks[::-1]

    @property
    def c(self) -> float:
        return float(self.gamma[-1])


def build_regressor(ds: TimeSeriesDataset, order: int, k: int) -> np.ndarray:
    """Regressor row for sample time ``k`` (0-based, requires ``k >= order``)."""
    if k < order:
        raise DataError(f"time index {k} has no full history for order {order}")
    if k > ds.sample_count:
        raise DataError(f"time index {k} beyond dataset of length {ds.sample_count}")
    y_part = -ds.y[k - order : k, 0]
    u_part = ds.u[k - order : k].ravel()
    return np.concatenate([y_part, u_part, [1.0]])


def regressor_matrix(ds: TimeSeriesDataset, order: int) -> tuple[np.ndarray, np.ndarray]:
    """All usable regressor rows and their targets: rows ``k = order..T-1``."""
    T = ds.sample_count
    if T <= order:
        raise DataError(f"need more than {order} samples, got {T}")
    n = T - order
    y = ds.y[:, 0]
    phi = np.empty((n, order * (1 + ds.n_u) + 1))
    for i in range(order):
        # column block for lag order - i (hence oldest history first)
        phi[:, i] = -y[i : i + n]
        phi[:, order + i * ds.n_u : order + (i + 1) * ds.n_u] = ds.u[i : i + n]
    phi[:, -1] = 1.0
    return phi, y[order:]


def _solve_normal_equations(G: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve ``G gamma = b`` with a relative ridge fallback on singularity."""
    try:
        np.linalg.cholesky(G)
        return np.linalg.solve(G, b)
    except np.linalg.LinAlgError:
        pass
    lam = RIDGE_FALLBACK_REL * np.trace(G) / len(G)
    if lam <= 0:
        raise NumericalError("normal equations are identically zero")
    try:
        return np.linalg.solve(G + lam * np.eye(len(G)), b)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"ARX identification failed even with ridge: {exc}") from None


def _fit_rows(phi: np.ndarray, targets: np.ndarray) -> tuple[np.ndarray, float]:
    """Least-squares gamma and its SSE over the given rows."""
    G = phi.T @ phi
    b = phi.T @ targets
    gamma = _solve_normal_equations(G, b)
    sse = float(np.sum(targets**2) - 2 * b @ gamma + gamma @ G @ gamma)
    return gamma, max(sse, 0.0)


def fit_arx_ls(
    ds: TimeSeriesDataset, order: int, sample_indices=None
) -> ArxCoefficients:
    """Least-squares ARX fit, optionally restricted to the given time indices.

    ``sample_indices`` are 0-based sample times ``k`` (each ``>= order``);
    by default every usable row of the dataset enters the fit.
    """
    phi, targets = regressor_matrix(ds, order)
    if sample_indices is not None:
        rows = np.asarray(sample_indices, dtype=int) - order
        if rows.size and (rows.min() < 0 or rows.max() >= len(phi)):
            raise DataError("sample index outside the usable range")
        phi, targets = phi[rows], targets[rows]
    n_gamma = order * (1 + ds.n_u) + 1
    if len(phi) < n_gamma:
        raise DataError(f"need at least {n_gamma} samples, got {len(phi)}")
    gamma, _ = _fit_rows(phi, targets)
    return ArxCoefficients(order=order, n_u=ds.n_u, gamma=gamma)


def simulate_arx(
    coeffs: ArxCoefficients,
    u: np.ndarray,
    y_init: np.ndarray | None = None,
    u_init: np.ndarray | None = None,
) -> np.ndarray:
    """Run the ARX difference equation on an input sequence.

    ``y_init`` / ``u_init`` provide the ``M`` history values at times
    ``-M..-1`` (default: all zero).  ``u[k]`` is the input applied at time
    ``k``; the returned output has the same length as ``u`` and ``y[k]``
    depends on inputs strictly before ``k``.
    """
    M = coeffs.order
    u = np.atleast_2d(np.asarray(u, dtype=float))
    if u.shape[1] != coeffs.n_u:
        raise DataError(f"u has {u.shape[1]} channels, model expects {coeffs.n_u}")
    T = len(u)
    y_hist = np.zeros(M) if y_init is None else np.asarray(y_init, dtype=float).copy()
    u_hist = np.zeros((M, coeffs.n_u)) if u_init is None else np.asarray(u_init, dtype=float).copy()
    if y_hist.shape != (M,) or u_hist.shape != (M, coeffs.n_u):
        raise DataError("history must provide exactly M past samples")
    a = coeffs.a_lags
    b = coeffs.b_lags
    y_full = np.concatenate([y_hist, np.zeros(T)])
    u_full = np.vstack([u_hist, u])
    for k in range(T):
        t = M + k
        acc = coeffs.c
        for i in range(1, M + 1):
            acc += -a[i - 1] * y_full[t - i] + b[i - 1] @ u_full[t - i]
        y_full[t] = acc
    return y_full[M:]


@dataclass(frozen=True)
class StateSpaceModel:
    """Observer-canonical realization of one ARX model.

    ``A`` has ones on the subdiagonal and ``[-a_M .. -a_1]`` as its last
    column, ``C = [0 .. 0 1]``, row ``i`` of ``B`` carries the input
    coefficients of lag ``M - i``, and the affine constant sits in the last
    entry of ``d`` (``e`` is 0).  The pair ``(A, C)`` is observable by
    construction.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    d: np.ndarray
    e: float

    def __post_init__(self):
        for name in ("A", "B", "C", "d"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        v = self.A.shape[0]
        if self.A.shape != (v, v) or self.B.shape[0] != v:
            raise DataError("A must be square and B row-conformal")
        if self.C.shape != (1, v) or self.d.shape != (v,):
            raise DataError("C must be 1 x v and d length v")

    @property
    def order(self) -> int:
        return self.A.shape[0]

    @property
    def n_u(self) -> int:
        return self.B.shape[1]

    def zero_history_state(self) -> np.ndarray:
        """State equivalent to an all-zero past of inputs and outputs."""
        return np.cumsum(self.d)

    def simulate(self, u: np.ndarray, x0: np.ndarray | None = None) -> np.ndarray:
        """Open-loop output sequence: ``y[k] = C x[k] + e`` with input ``u[k]``."""
        u = np.atleast_2d(np.asarray(u, dtype=float))
        x = np.zeros(self.order) if x0 is None else np.asarray(x0, dtype=float).copy()
        c_row = self.C[0]
        y = np.empty(len(u))
        for k in range(len(u)):
            y[k] = c_row @ x + self.e
            x = self.A @ x + self.B @ u[k] + self.d
        return y


def arx_to_statespace(coeffs: ArxCoefficients) -> StateSpaceModel:
    """Minimal observer-canonical state space matching the ARX recursion."""
    M = coeffs.order
    A = np.zeros((M, M))
    for i in range(1, M):
        A[i, i - 1] = 1.0
    A[:, -1] = -coeffs.a_lags[::-1]  # top-to-bottom: -a_M .. -a_1
    B = coeffs.b_lags[::-1].reshape(M, coeffs.n_u).copy()  # rows: b_M .. b_1
    C = np.zeros((1, M))
    C[0, -1] = 1.0
    d = np.zeros(M)
    d[-1] = coeffs.c
    return StateSpaceModel(A=A, B=B, C=C, d=d, e=0.0)


@dataclass(frozen=True)
class TreeLeaf:
    rho_centroid: np.ndarray
    model: ArxCoefficients
    sample_count: int
    sse: float

    def __post_init__(self):
        object.__setattr__(self, "rho_centroid", _frozen(np.atleast_1d(self.rho_centroid)))


@dataclass(frozen=True)
class TreeSplit:
    dim: int
    threshold: float
    left: Union["TreeSplit", TreeLeaf]
    right: Union["TreeSplit", TreeLeaf]


@dataclass(frozen=True)
class SegmentationTree:
    """Binary tree over the parameter space holding local ARX models."""

    root: Union[TreeSplit, TreeLeaf]
    order: int
    n_u: int
    n_rho: int

    def leaves(self) -> list[TreeLeaf]:
        """Depth-first (left before right) leaf list."""
        out: list[TreeLeaf] = []
        stack = [self.root]
        while stack:
            node = stack.pop()
            if isinstance(node, TreeLeaf):
                out.append(node)
            else:
                stack.extend([node.right, node.left])
        return out

    @property
    def leaf_count(self) -> int:
        return len(self.leaves())

    def lookup(self, rho: np.ndarray) -> TreeLeaf:
        """Route a parameter vector to its leaf (piecewise-constant model map)."""
        rho = np.atleast_1d(np.asarray(rho, dtype=float))
        node = self.root
        while isinstance(node, TreeSplit):
            node = node.left if rho[node.dim] <= node.threshold else node.right
        return node

    def to_dict(self) -> dict:
        def rec(node):
            if isinstance(node, TreeLeaf):
                return {
                    "rho": node.rho_centroid.tolist(),
                    "gamma": node.model.gamma.tolist(),
                    "count": node.sample_count,
                    "sse": node.sse,
                }
            return {
                "dim": node.dim,
                "threshold": node.threshold,
                "left": rec(node.left),
                "right": rec(node.right),
            }

        return {
            "order": self.order,
            "n_u": self.n_u,
            "n_rho": self.n_rho,
            "root": rec(self.root),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SegmentationTree":
        order, n_u = doc["order"], doc["n_u"]

        def rec(node):
            if "gamma" in node:
                return TreeLeaf(
                    rho_centroid=np.asarray(node["rho"]),
                    model=ArxCoefficients(order=order, n_u=n_u, gamma=np.asarray(node["gamma"])),
                    sample_count=int(node["count"]),
                    sse=float(node["sse"]),
                )
            return TreeSplit(
                dim=int(node["dim"]),
                threshold=float(node["threshold"]),
                left=rec(node["left"]),
                right=rec(node["right"]),
            )

        return cls(root=rec(doc["root"]), order=order, n_u=n_u, n_rho=doc["n_rho"])


class _GrowNode:
    """Mutable bookkeeping for one node while the tree is being grown."""

    __slots__ = ("rows", "gamma", "sse", "best", "children", "node_id")

    def __init__(self, node_id, rows, gamma, sse):
        self.node_id = node_id
        self.rows = rows
        self.gamma = gamma
        self.sse = sse
        self.best = None  # (total_child_sse, dim, threshold, left_row_mask_order)
        self.children = None


def _best_split(phi, targets, rho, rows, min_samples):
    """Scan every (dim, midpoint-threshold) candidate for one node.

    Returns ``(total_sse, dim, threshold, ordered_rows, left_size)`` for the
    best candidate or ``None`` when no candidate leaves both children with
    at least ``min_samples`` rows.  Candidate models are scored through the
    normal equations accumulated as prefix sums over the sorted rows; a
    minuscule uniform ridge keeps the batched solves well-posed without
    noticeably moving the scores.
    """
    n = len(rows)
    p = phi.shape[1]
    best = None
    for dim in range(rho.shape[1]):
        vals = rho[rows, dim]
        order = np.argsort(vals, kind="stable")
        sv = vals[order]
        boundaries = np.nonzero(sv[1:] > sv[:-1])[0]
        if boundaries.size == 0:
            continue
        left_sizes = boundaries + 1
        ok = (left_sizes >= min_samples) & (n - left_sizes >= min_samples)
        if not ok.any():
            continue
        left_sizes = left_sizes[ok]
        thresholds = (sv[boundaries[ok]] + sv[boundaries[ok] + 1]) / 2.0
        ordered_rows = rows[order]
        phi_o = phi[ordered_rows]
        t_o = targets[ordered_rows]
        G_cum = np.cumsum(np.einsum("ki,kj->kij", phi_o, phi_o), axis=0)
        b_cum = np.cumsum(phi_o * t_o[:, None], axis=0)
        q_cum = np.cumsum(t_o**2)
        GL = G_cum[left_sizes - 1]
        bL = b_cum[left_sizes - 1]
        qL = q_cum[left_sizes - 1]
        GR = G_cum[-1] - GL
        bR = b_cum[-1] - bL
        qR = q_cum[-1] - qL
        eye = np.eye(p)
        lamL = RIDGE_SCAN_REL * np.trace(GL, axis1=1, axis2=2) / p
        lamR = RIDGE_SCAN_REL * np.trace(GR, axis1=1, axis2=2) / p
        gL = np.linalg.solve(GL + lamL[:, None, None] * eye, bL[..., None])[..., 0]
        gR = np.linalg.solve(GR + lamR[:, None, None] * eye, bR[..., None])[..., 0]
        sseL = qL - 2 * np.einsum("ki,ki->k", bL, gL) + np.einsum("ki,kij,kj->k", gL, GL, gL)
        sseR = qR - 2 * np.einsum("ki,ki->k", bR, gR) + np.einsum("ki,kij,kj->k", gR, GR, gR)
        total = np.maximum(sseL, 0.0) + np.maximum(sseR, 0.0)
        i = int(np.argmin(total))
        cand = (float(total[i]), dim, float(thresholds[i]), ordered_rows, int(left_sizes[i]))
        if best is None or cand[0] < best[0]:
            best = cand
    return best


def grow_segmentation_tree(
    ds: TimeSeriesDataset, order: int, max_leaves: int
) -> SegmentationTree:
    """Grow the model-selection tree over the measured parameter space.

    Growth is greedy best-first: among current leaves, the one whose best
    split reduces the total one-step-ahead SSE the most is split, until
    ``max_leaves`` is reached or no split helps.  Ties are broken towards
    the lowest split dimension, then the lowest threshold, then the oldest
    leaf, so the result is independent of evaluation order.
    """
    if max_leaves < 1:
        raise ConfigError(f"max_leaves must be >= 1, got {max_leaves}")
    n_gamma = order * (1 + ds.n_u) + 1
    if ds.sample_count < max_leaves * n_gamma:
        raise ConfigError(
            f"{ds.sample_count} samples cannot support {max_leaves} leaves of "
            f"{n_gamma}-parameter models"
        )
    phi, targets = regressor_matrix(ds, order)
    rho = ds.rho[order:]
    all_rows = np.arange(len(phi))
    gamma, sse = _fit_rows(phi, targets)

    next_id = 0

    def new_node(rows, g, s):
        nonlocal next_id
        node = _GrowNode(next_id, rows, g, s)
        next_id += 1
        return node

    root = new_node(all_rows, gamma, sse)
    leaves = {root.node_id: root}
    heap: list[tuple[float, int, int, float]] = []

    def consider(node):
        cand = _best_split(phi, targets, rho, node.rows, n_gamma)
        if cand is not None and cand[0] < node.sse:
            node.best = cand
            gain = node.sse - cand[0]
            heapq.heappush(heap, (-gain, cand[1], cand[2], node.node_id))

    consider(root)
    while len(leaves) < max_leaves and heap:
        _, _, _, node_id = heapq.heappop(heap)
        node = leaves.get(node_id)
        if node is None or node.best is None:
            continue
        _, dim, threshold, ordered_rows, left_size = node.best
        left_rows = ordered_rows[:left_size]
        right_rows = ordered_rows[left_size:]
        gl, sl = _fit_rows(phi[left_rows], targets[left_rows])
        gr, sr = _fit_rows(phi[right_rows], targets[right_rows])
        left = new_node(left_rows, gl, sl)
        right = new_node(right_rows, gr, sr)
        node.children = (dim, threshold, left, right)
        del leaves[node_id]
        leaves[left.node_id] = left
        leaves[right.node_id] = right
        if len(leaves) < max_leaves:
            consider(left)
            consider(right)

    def freeze(node) -> Union[TreeSplit, TreeLeaf]:
        if node.children is None:
            return TreeLeaf(
                rho_centroid=rho[node.rows].mean(axis=0),
                model=ArxCoefficients(order=order, n_u=ds.n_u, gamma=node.gamma),
                sample_count=len(node.rows),
                sse=node.sse,
            )
        dim, threshold, left, right = node.children
        return TreeSplit(dim=dim, threshold=threshold, left=freeze(left), right=freeze(right))

    return SegmentationTree(root=freeze(root), order=order, n_u=ds.n_u, n_rho=ds.n_rho)


def extract_local_models(
    tree: SegmentationTree,
) -> list[tuple[np.ndarray, ArxCoefficients]]:
    """Leaf models ordered lexicographically by their parameter centroid.

    The returned order fixes the observer-bank indexing, so it must be (and
    is) deterministic for a given tree.
    """
    leaves = tree.leaves()
    keys = np.array([leaf.rho_centroid for leaf in leaves])
    idx = np.lexsort(keys.T[::-1])
    return [(leaves[i].rho_centroid, leaves[i].model) for i in idx]
