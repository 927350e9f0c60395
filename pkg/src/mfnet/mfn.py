"""Unrolled mean field as a trainable feed-forward network.

One layer per mean field sweep, softmax nonlinearities, parameters either
shared across layers (tied, equivalent to plain mean field) or owned per
layer. The reverse pass runs over the recorded forward tape and supports
two losses: KL against a fixed target model, and an element-wise hinge
loss on the final activations.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from . import engine
from .crf import CrfParams, build_mrf, feature_matrix, grid_graph
from .engine import CompiledSchedule, Schedule, checkerboard_schedule
from .mrf import LOG_FLOOR, PairwiseMRF, row_softmax, unnormalized_kl_arrays


@dataclass
class MfnParams:
    """Per-layer CRF parameters; a single shared entry when tied."""

    tied: bool
    layers: List[CrfParams]

    def __post_init__(self):
        if self.tied and len(self.layers) != 1:
            raise ValueError("tied parameters hold exactly one layer entry")
        if not self.layers:
            raise ValueError("need at least one layer")

    def layer(self, m: int) -> CrfParams:
        return self.layers[0] if self.tied else self.layers[m]

    def to_vector(self) -> np.ndarray:
        return np.concatenate([p.to_vector() for p in self.layers])

    @classmethod
    def from_vector(cls, v: np.ndarray, tied: bool, n_layers: int) -> "MfnParams":
        v = np.asarray(v, dtype=np.float64).reshape(n_layers, -1)
        return cls(tied=tied, layers=[CrfParams.from_vector(row) for row in v])

    def to_json_dict(self) -> dict:
        return {"tied": self.tied, "layers": [p.to_json_dict() for p in self.layers]}

    @classmethod
    def from_json_dict(cls, d: dict) -> "MfnParams":
        return cls(
            tied=bool(d["tied"]),
            layers=[CrfParams.from_json_dict(x) for x in d["layers"]],
        )

    @classmethod
    def tied_from(cls, theta: CrfParams) -> "MfnParams":
        return cls(tied=True, layers=[CrfParams.from_vector(theta.to_vector())])

    def untied_copy(self, n_layers: int) -> "MfnParams":
        if not self.tied:
            raise ValueError("already untied")
        base = self.layers[0].to_vector()
        return MfnParams(
            tied=False, layers=[CrfParams.from_vector(base) for _ in range(n_layers)]
        )


@dataclass(frozen=True)
class KlToTarget:
    """Minimize KL between the network output and a fixed target model."""

    target: PairwiseMRF


@dataclass(frozen=True)
class Hinge:
    """Element-wise margin loss on final activations; c is the mislabeling cost."""

    c: float = 1.0

    def __post_init__(self):
        if self.c <= 0:
            raise ValueError("mislabeling cost must be positive")


LossSpec = Union[KlToTarget, Hinge]


@dataclass(frozen=True, eq=False)
class ForwardTrace:
    """Everything recorded during a forward pass that the reverse pass needs."""

    compiled: CompiledSchedule
    layer_potentials: List[Tuple[np.ndarray, np.ndarray]]
    q0: np.ndarray
    tape: List[engine.StepRecord]
    q_final: np.ndarray
    a_final: np.ndarray

    @property
    def n_layers(self) -> int:
        return len(self.layer_potentials)

    def replay(self) -> np.ndarray:
        """Recompute the output from recorded reads; must match q_final exactly."""
        q = self.q0.copy()
        steps = self.compiled.steps
        for gs, rec in enumerate(self.tape):
            st = steps[gs % len(steps)]
            unary, pairwise = self.layer_potentials[gs // len(steps)]
            a = unary[st.verts].astype(np.float64, copy=True)
            if st.e_lo.size:
                np.add.at(
                    a, st.pos_lo, np.einsum("ekl,el->ek", pairwise[st.e_lo], rec.q_read_lo)
                )
            if st.e_hi.size:
                np.add.at(
                    a, st.pos_hi, np.einsum("ekl,ek->el", pairwise[st.e_hi], rec.q_read_hi)
                )
            q[st.verts] = row_softmax(a)
        return q


def _unroll(
    layer_potentials: List[Tuple[np.ndarray, np.ndarray]],
    compiled: CompiledSchedule,
) -> ForwardTrace:
    q0 = row_softmax(layer_potentials[0][0])
    tape: List[engine.StepRecord] = []
    q_final = engine.run_unrolled(layer_potentials, q0, compiled, tape=tape)
    a_final = np.zeros_like(q_final)
    n_steps = len(compiled.steps)
    last_layer = len(layer_potentials) - 1
    for ls, st in enumerate(compiled.steps):
        rec = tape[last_layer * n_steps + ls]
        a_final[st.verts] = rec.activations
    return ForwardTrace(
        compiled=compiled,
        layer_potentials=layer_potentials,
        q0=q0,
        tape=tape,
        q_final=q_final,
        a_final=a_final,
    )


def forward(
    y: np.ndarray, params: MfnParams, n_layers: int, schedule: Schedule
) -> ForwardTrace:
    """Forward pass on an image: layer m uses potentials built from its own parameters."""
    if n_layers < 1:
        raise ValueError("need at least one layer")
    if not params.tied and len(params.layers) != n_layers:
        raise ValueError("untied parameters must provide one entry per layer")
    y = np.asarray(y, dtype=np.float64)
    mrfs = [build_mrf(y, params.layer(m)) for m in range(n_layers)]
    compiled = engine.compile_schedule(mrfs[0].topology, schedule)
    return _unroll([(m.unary, m.pairwise) for m in mrfs], compiled)


def forward_mrfs(mrfs: Sequence[PairwiseMRF], schedule: Schedule) -> ForwardTrace:
    """Graph-generic forward pass over explicit per-layer potential sets."""
    topo = mrfs[0].topology
    for m in mrfs:
        if m.topology is not topo:
            raise ValueError("all layers must share one topology")
    compiled = engine.compile_schedule(topo, schedule)
    return _unroll([(m.unary, m.pairwise) for m in mrfs], compiled)


def kl_grad_q(q: np.ndarray, target: PairwiseMRF) -> np.ndarray:
    """Gradient of the unnormalized KL loss with respect to the output q entries."""
    q = np.asarray(q, dtype=np.float64)
    if q.shape != target.unary.shape:
        raise ValueError("q shape does not match target model")
    g = np.log(np.maximum(q, LOG_FLOOR)) + 1.0 - target.unary
    edges = target.topology.edges
    if len(edges):
        lo, hi = edges[:, 0], edges[:, 1]
        np.subtract.at(g, lo, np.einsum("ekl,el->ek", target.pairwise, q[hi]))
        np.subtract.at(g, hi, np.einsum("ekl,ek->el", target.pairwise, q[lo]))
    return g


def _hinge_scores(a: np.ndarray, x_hat: np.ndarray, c: float) -> np.ndarray:
    delta = np.full(a.shape, c)
    delta[np.arange(len(a)), x_hat] = 0.0
    return a + delta


def hinge_loss(a: np.ndarray, x_hat: np.ndarray, c: float = 1.0) -> float:
    """Sum over sites of max_k(a_k + c[k != label]) minus the true label's activation."""
    a = np.asarray(a, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.int64).reshape(-1)
    scores = _hinge_scores(a, x_hat, c)
    return float(np.sum(scores.max(axis=1) - a[np.arange(len(a)), x_hat]))


def hinge_grad_a(a: np.ndarray, x_hat: np.ndarray, c: float = 1.0) -> np.ndarray:
    """Per-site hinge gradient: +1 at the loss-augmented argmax, -1 at the true label."""
    a = np.asarray(a, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.int64).reshape(-1)
    k_star = np.argmax(_hinge_scores(a, x_hat, c), axis=1)
    g = np.zeros_like(a)
    rows = np.arange(len(a))
    np.add.at(g, (rows, k_star), 1.0)
    np.add.at(g, (rows, x_hat), -1.0)
    return g


def backward(
    trace: ForwardTrace,
    y: np.ndarray,
    params: MfnParams,
    loss: LossSpec,
    x_hat: Optional[np.ndarray] = None,
) -> List[np.ndarray]:
    """Loss gradient as one 28-vector per parameter layer (a single vector when tied)."""
    n_layers = trace.n_layers
    if not params.tied and len(params.layers) != n_layers:
        raise ValueError("parameters do not match the trace")
    if isinstance(loss, KlToTarget):
        gq_final = kl_grad_q(trace.q_final, loss.target)
        ga_final = None
    elif isinstance(loss, Hinge):
        if x_hat is None:
            raise ValueError("hinge loss needs ground-truth labels")
        ga_final = hinge_grad_a(trace.a_final, np.asarray(x_hat).reshape(-1), loss.c)
        gq_final = None
    else:
        raise TypeError(f"unknown loss {loss!r}")
    dunary, dpair, gq0 = engine.backward_unrolled(
        trace.layer_potentials, trace.compiled, trace.tape, gq_final, ga_final
    )
    # q0 is the softmax of the first layer's unaries; fold its gradient in.
    q0 = trace.q0
    da0 = q0 * (gq0 - np.sum(gq0 * q0, axis=1, keepdims=True))
    dunary[0] = dunary[0] + da0

    y = np.asarray(y, dtype=np.float64)
    grid = grid_graph(*y.shape)
    phi = feature_matrix(y)
    per_layer = []
    for m in range(n_layers):
        dw = phi.T @ dunary[m][:, 1]
        diag = dpair[m][:, 0, 0] + dpair[m][:, 1, 1]
        dp_h = float(diag[grid.horizontal].sum())
        dp_v = float(diag[~grid.horizontal].sum())
        per_layer.append(np.concatenate([dw, [dp_h, dp_v]]))
    if params.tied:
        return [np.sum(per_layer, axis=0)]
    return per_layer


def predict(trace: ForwardTrace) -> np.ndarray:
    """Per-site argmax of the output distribution; ties go to the smallest label."""
    return np.argmax(trace.q_final, axis=1)


def sgd_momentum(
    params_vec: np.ndarray,
    grad_vec: np.ndarray,
    learning_rate: float,
    momentum: float,
    velocity: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """One descent step: v' = momentum v - lr g; params' = params + v'."""
    params_vec = np.asarray(params_vec, dtype=np.float64)
    grad_vec = np.asarray(grad_vec, dtype=np.float64)
    if grad_vec.shape != params_vec.shape:
        raise ValueError("gradient shape mismatch")
    if velocity is None:
        velocity = np.zeros_like(params_vec)
    v_new = momentum * velocity - learning_rate * grad_vec
    return params_vec + v_new, v_new


def _n_workers() -> int:
    try:
        return max(1, int(os.environ.get("MFN_THREADS", "1")))
    except ValueError:
        return 1


def image_map(fn, items):
    """Order-preserving per-image map; MFN_THREADS > 1 enables a thread pool."""
    workers = _n_workers()
    if workers == 1 or len(items) < 2:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def _default_schedule(y: np.ndarray) -> Schedule:
    return checkerboard_schedule(*np.asarray(y).shape)


def mean_kl_to_targets(
    dataset: Sequence[Tuple[np.ndarray, np.ndarray]],
    params: MfnParams,
    n_layers: int,
    target_theta: CrfParams,
    schedule: Optional[Schedule] = None,
) -> float:
    """Mean unnormalized KL of the network output against per-image target models."""
    def one(item):
        y, _ = item
        sched = schedule or _default_schedule(y)
        target = build_mrf(y, target_theta)
        trace = forward(y, params, n_layers, sched)
        return unnormalized_kl_arrays(
            trace.q_final, target.unary, target.pairwise, target.topology.edges
        )

    return float(np.mean(image_map(one, list(dataset))))


def mean_accuracy(
    dataset: Sequence[Tuple[np.ndarray, np.ndarray]],
    params: MfnParams,
    n_layers: int,
    schedule: Optional[Schedule] = None,
) -> float:
    """Mean per-pixel accuracy of argmax decoding over a dataset."""
    def one(item):
        y, x_hat = item
        sched = schedule or _default_schedule(y)
        trace = forward(y, params, n_layers, sched)
        return float(np.mean(predict(trace) == np.asarray(x_hat).reshape(-1)))

    return float(np.mean(image_map(one, list(dataset))))


def train_inference(
    train_set: Sequence[Tuple[np.ndarray, np.ndarray]],
    theta_mf: CrfParams,
    n_layers: int,
    schedule: Optional[Schedule] = None,
    learning_rate: float = 1e-3,
    momentum: float = 0.9,
    steps: int = 50,
    log: Optional[List[dict]] = None,
) -> MfnParams:
    """Fit untied per-layer parameters to speed up inference for a fixed model.

    Targets are the per-image models built from theta_mf; the loss is the
    mean unnormalized KL of the network output against them.
    """
    images = [(np.asarray(y, dtype=np.float64), x) for y, x in train_set]
    params = MfnParams.tied_from(theta_mf).untied_copy(n_layers)
    if steps == 0:
        return params
    targets = [build_mrf(y, theta_mf) for y, _ in images]
    vec = params.to_vector()
    velocity = None
    for step in range(steps):
        params = MfnParams.from_vector(vec, tied=False, n_layers=n_layers)

        def one(i):
            y, _ = images[i]
            sched = schedule or _default_schedule(y)
            trace = forward(y, params, n_layers, sched)
            t = targets[i]
            loss = unnormalized_kl_arrays(
                trace.q_final, t.unary, t.pairwise, t.topology.edges
            )
            grads = backward(trace, y, params, KlToTarget(t))
            return loss, np.concatenate(grads)

        results = image_map(one, list(range(len(images))))
        loss = float(np.mean([r[0] for r in results]))
        grad = np.sum([r[1] for r in results], axis=0) / len(results)
        if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
            raise FloatingPointError(f"training diverged at step {step}")
        if log is not None:
            log.append({"step": step, "loss": loss})
        vec, velocity = sgd_momentum(vec, grad, learning_rate, momentum, velocity)
    return MfnParams.from_vector(vec, tied=False, n_layers=n_layers)


@dataclass
class DiscProtocol:
    """Two-phase hinge training: tied warm-up, then untied fine-tuning."""

    phase1_steps: int = 50
    phase1_lr: float = 0.0005
    phase1_momentum: float = 0.5
    phase2_steps: int = 200
    phase2_lr: float = 0.002
    phase2_momentum: float = 0.9
    c: float = 1.0


@dataclass
class DiscTrainResult:
    params: MfnParams
    phase1_params: MfnParams
    log: List[dict]


def _hinge_epoch(images, params, n_layers, schedule, c):
    """One full-batch pass: mean hinge loss, mean gradient, mean accuracy."""
    def one(item):
        y, x_hat = item
        x_flat = np.asarray(x_hat).reshape(-1)
        sched = schedule or _default_schedule(y)
        trace = forward(y, params, n_layers, sched)
        loss = hinge_loss(trace.a_final, x_flat, c)
        grads = backward(trace, y, params, Hinge(c), x_flat)
        acc = float(np.mean(predict(trace) == x_flat))
        return loss, grads, acc

    results = image_map(one, images)
    n = len(results)
    loss = float(np.mean([r[0] for r in results]))
    n_grad_layers = len(results[0][1])
    grads = [
        np.sum([r[1][m] for r in results], axis=0) / n for m in range(n_grad_layers)
    ]
    acc = float(np.mean([r[2] for r in results]))
    return loss, grads, acc


def _run_hinge_phase(images, params, n_layers, schedule, steps, lr, momentum, c, log, tag):
    vec = params.to_vector()
    tied = params.tied
    p_layers = len(params.layers)
    velocity = None
    initial_loss = None
    for step in range(steps):
        params = MfnParams.from_vector(vec, tied=tied, n_layers=p_layers)
        loss, grads, acc = _hinge_epoch(images, params, n_layers, schedule, c)
        grad = np.concatenate(grads)
        if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
            raise FloatingPointError(f"{tag}: training diverged at step {step}")
        if initial_loss is None:
            initial_loss = abs(loss)
        elif abs(loss) > 10 * initial_loss:
            raise FloatingPointError(
                f"{tag}: loss exceeded 10x its initial value at step {step}"
            )
        if log is not None:
            log.append(
                {
                    "phase": tag,
                    "step": step,
                    "loss": loss,
                    "train_accuracy": acc,
                    "grad_norms": [float(np.linalg.norm(g)) for g in grads],
                }
            )
        vec, velocity = sgd_momentum(vec, grad, lr, momentum, velocity)
    return MfnParams.from_vector(vec, tied=tied, n_layers=p_layers)


def train_discriminative(
    train_set: Sequence[Tuple[np.ndarray, np.ndarray]],
    theta_mf: CrfParams,
    n_layers: int = 3,
    schedule: Optional[Schedule] = None,
    protocol: Optional[DiscProtocol] = None,
) -> DiscTrainResult:
    """Hinge-loss training: tied phase, then untie and continue with larger steps."""
    protocol = protocol or DiscProtocol()
    images = [(np.asarray(y, dtype=np.float64), x) for y, x in train_set]
    log: List[dict] = []
    tied = MfnParams.tied_from(theta_mf)
    tied = _run_hinge_phase(
        images,
        tied,
        n_layers,
        schedule,
        protocol.phase1_steps,
        protocol.phase1_lr,
        protocol.phase1_momentum,
        protocol.c,
        log,
        "tied",
    )
    untied = tied.untied_copy(n_layers)
    untied = _run_hinge_phase(
        images,
        untied,
        n_layers,
        schedule,
        protocol.phase2_steps,
        protocol.phase2_lr,
        protocol.phase2_momentum,
        protocol.c,
        log,
        "untied",
    )
    return DiscTrainResult(params=untied, phase1_params=tied, log=log)
