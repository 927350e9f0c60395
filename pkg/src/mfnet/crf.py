"""Binary grid CRF: linear unary model over 5x5 windows, Potts pairwise terms."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import meanfield
from .engine import Schedule, checkerboard_schedule
from .mrf import FactorialDistribution, GraphTopology, PairwiseMRF, softmax_init

WINDOW = 5
N_FEATURES = WINDOW * WINDOW + 1  # 5x5 window plus constant 1


@dataclass
class CrfParams:
    """28 scalars: 26 unary window weights, one Potts penalty per edge direction."""

    w: np.ndarray  # (26,)
    p_h: float
    p_v: float

    def __post_init__(self):
        w = np.asarray(self.w, dtype=np.float64).reshape(-1)
        if w.shape != (N_FEATURES,):
            raise ValueError(f"w must have {N_FEATURES} entries")
        self.w = w
        self.p_h = float(self.p_h)
        self.p_v = float(self.p_v)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.w, [self.p_h, self.p_v]])

    @classmethod
    def from_vector(cls, v: np.ndarray) -> "CrfParams":
        v = np.asarray(v, dtype=np.float64).reshape(-1)
        if v.shape != (N_FEATURES + 2,):
            raise ValueError("parameter vector must have 28 entries")
        return cls(w=v[:N_FEATURES].copy(), p_h=v[N_FEATURES], p_v=v[N_FEATURES + 1])

    def to_json_dict(self) -> dict:
        return {"w": self.w.tolist(), "p_h": self.p_h, "p_v": self.p_v}

    @classmethod
    def from_json_dict(cls, d: dict) -> "CrfParams":
        return cls(w=np.array(d["w"], dtype=np.float64), p_h=d["p_h"], p_v=d["p_v"])


def theta0() -> CrfParams:
    """Initial parameters: all ones, constant-feature weight -12.5."""
    w = np.ones(N_FEATURES)
    w[-1] = -WINDOW * WINDOW / 2.0
    return CrfParams(w=w, p_h=1.0, p_v=1.0)


@dataclass(frozen=True, eq=False)
class GridGraph:
    """4-connected grid topology plus the horizontal/vertical split of its edges."""

    height: int
    width: int
    topology: GraphTopology
    horizontal: np.ndarray  # (E,) bool


@lru_cache(maxsize=8)
def grid_graph(height: int, width: int) -> GridGraph:
    idx = np.arange(height * width).reshape(height, width)
    h_edges = np.stack([idx[:, :-1].ravel(), idx[:, 1:].ravel()], axis=1)
    v_edges = np.stack([idx[:-1, :].ravel(), idx[1:, :].ravel()], axis=1)
    edges = np.concatenate([h_edges, v_edges], axis=0)
    horizontal = np.zeros(len(edges), dtype=bool)
    horizontal[: len(h_edges)] = True
    topo = GraphTopology(n_vertices=height * width, edges=edges)
    return GridGraph(height=height, width=width, topology=topo, horizontal=horizontal)


# keyed by image identity; training loops pass the same arrays every step
_feature_cache: dict = {}


def feature_matrix(y: np.ndarray) -> np.ndarray:
    """Per-pixel 26-vectors: the 5x5 window in raster order, then a constant 1.

    Window cells outside the image read as 0. Results are cached per array
    object, so images must not be mutated in place between calls.
    """
    y = np.asarray(y, dtype=np.float64)
    hit = _feature_cache.get(id(y))
    if hit is not None and hit[0] is y:
        return hit[1]
    h, w = y.shape
    r = WINDOW // 2
    padded = np.pad(y, r)
    windows = np.lib.stride_tricks.sliding_window_view(padded, (WINDOW, WINDOW))
    feats = windows.reshape(h * w, WINDOW * WINDOW)
    phi = np.concatenate([feats, np.ones((h * w, 1))], axis=1)
    if len(_feature_cache) > 256:
        _feature_cache.clear()
    _feature_cache[id(y)] = (y, phi)
    return phi


def extract_features(y: np.ndarray, s: int) -> np.ndarray:
    """Feature vector for one pixel (linear index, raster order)."""
    y = np.asarray(y, dtype=np.float64)
    h, w = y.shape
    i, j = divmod(int(s), w)
    r = WINDOW // 2
    out = np.zeros(N_FEATURES)
    out[-1] = 1.0
    for di in range(-r, r + 1):
        for dj in range(-r, r + 1):
            ii, jj = i + di, j + dj
            if 0 <= ii < h and 0 <= jj < w:
                out[(di + r) * WINDOW + (dj + r)] = y[ii, jj]
    return out


def build_mrf(y: np.ndarray, theta: CrfParams) -> PairwiseMRF:
    """Binary grid MRF: unary rows (0, w.phi(y,s)), Potts tables per edge."""
    y = np.asarray(y, dtype=np.float64)
    h, w = y.shape
    grid = grid_graph(h, w)
    unary = np.zeros((h * w, 2))
    unary[:, 1] = feature_matrix(y) @ theta.w
    penalties = np.where(grid.horizontal, theta.p_h, theta.p_v)
    pairwise = penalties[:, None, None] * np.eye(2)[None, :, :]
    return PairwiseMRF(topology=grid.topology, K=2, unary=unary, pairwise=pairwise)


def cl_gradient(
    y: np.ndarray,
    x_hat: np.ndarray,
    q: FactorialDistribution,
    theta: CrfParams,
) -> np.ndarray:
    """Approximate conditional log-likelihood gradient, as a 28-vector.

    Model expectations use the factorial q in place of true marginals;
    pairwise expectations factor as q_s q_t.
    """
    y = np.asarray(y, dtype=np.float64)
    h, w = y.shape
    x_hat = np.asarray(x_hat, dtype=np.int64).reshape(h * w)
    grid = grid_graph(h, w)
    phi = feature_matrix(y)
    dw = phi.T @ (x_hat - q.probs[:, 1])
    lo = grid.topology.edges[:, 0]
    hi = grid.topology.edges[:, 1]
    agree = (x_hat[lo] == x_hat[hi]).astype(np.float64)
    expected_agree = np.sum(q.probs[lo] * q.probs[hi], axis=1)
    per_edge = agree - expected_agree
    dp_h = float(per_edge[grid.horizontal].sum())
    dp_v = float(per_edge[~grid.horizontal].sum())
    return np.concatenate([dw, [dp_h, dp_v]])


def mf_marginals(
    y: np.ndarray, theta: CrfParams, n_iters: int, schedule: Optional[Schedule] = None
) -> FactorialDistribution:
    """Mean field marginals for the CRF built from (y, theta)."""
    mrf = build_mrf(y, theta)
    if schedule is None:
        schedule = checkerboard_schedule(*y.shape)
    q, _ = meanfield.run(mrf, softmax_init(mrf), n_iters, schedule)
    return q


def predict_mf(
    y: np.ndarray, theta: CrfParams, n_iters: int, schedule: Optional[Schedule] = None
) -> np.ndarray:
    """Per-pixel argmax labels from mean field marginals, as an H x W image."""
    q = mf_marginals(y, theta, n_iters, schedule)
    return np.argmax(q.probs, axis=1).reshape(np.asarray(y).shape)


def train_baseline(
    train_set: Sequence[Tuple[np.ndarray, np.ndarray]],
    theta_init: CrfParams,
    steps: int = 100,
    learning_rate: float = 1e-5,
    mf_iters: int = 30,
    schedule: Optional[Schedule] = None,
    log: Optional[List[dict]] = None,
) -> CrfParams:
    """Full-batch gradient ascent on the mean-field-approximated log likelihood.

    train_set holds (noisy_image, label_image) pairs. When `log` is a list,
    one row per step (plus the initial point) records the mean pixel
    accuracy of the marginals used for that step's gradient.
    """
    if steps < 0:
        raise ValueError("steps must be >= 0")
    theta_vec = theta_init.to_vector()
    images = [(np.asarray(y, dtype=np.float64), np.asarray(x).ravel()) for y, x in train_set]
    if schedule is None and images:
        schedule = checkerboard_schedule(*images[0][0].shape)
    for step in range(steps + 1):
        theta = CrfParams.from_vector(theta_vec)
        grad = np.zeros(theta_vec.shape)
        correct = 0
        total = 0
        for y, x_hat in images:
            q = mf_marginals(y, theta, mf_iters, schedule)
            grad += cl_gradient(y, x_hat, q, theta)
            correct += int(np.sum(np.argmax(q.probs, axis=1) == x_hat))
            total += x_hat.size
        if not np.all(np.isfinite(grad)):
            raise FloatingPointError(f"non-finite gradient at step {step}")
        if log is not None:
            log.append({"step": step, "train_accuracy": correct / max(total, 1)})
        if step == steps:
            break
        theta_vec = theta_vec + learning_rate * grad
    return CrfParams.from_vector(theta_vec)
