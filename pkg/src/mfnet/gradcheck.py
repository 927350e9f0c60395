"""Finite-difference verification of the reverse pass on small random instances."""
from __future__ import annotations

from typing import Optional, Sequence, Tuple

import numpy as np

from .crf import CrfParams, build_mrf
from .engine import Schedule, checkerboard_schedule, raster_schedule
from .mfn import Hinge, KlToTarget, MfnParams, backward, forward, hinge_loss
from .mrf import unnormalized_kl_arrays


def _loss_of(vec, tied, n_layers, y, schedule, loss_kind, target, x_hat, c):
    p_layers = 1 if tied else n_layers
    params = MfnParams.from_vector(vec, tied=tied, n_layers=p_layers)
    trace = forward(y, params, n_layers, schedule)
    if loss_kind == "kl":
        return unnormalized_kl_arrays(
            trace.q_final, target.unary, target.pairwise, target.topology.edges
        )
    return hinge_loss(trace.a_final, x_hat, c)


def check_config(
    y: np.ndarray,
    params: MfnParams,
    n_layers: int,
    schedule: Schedule,
    loss_kind: str,
    target=None,
    x_hat: Optional[np.ndarray] = None,
    c: float = 1.0,
    h: float = 1e-5,
) -> float:
    """Max relative error between the reverse pass and central differences."""
    trace = forward(y, params, n_layers, schedule)
    if loss_kind == "kl":
        grads = backward(trace, y, params, KlToTarget(target))
    else:
        grads = backward(trace, y, params, Hinge(c), x_hat)
    analytic = np.concatenate(grads)
    vec = params.to_vector()
    fd = np.zeros_like(vec)
    for i in range(len(vec)):
        plus = vec.copy()
        plus[i] += h
        minus = vec.copy()
        minus[i] -= h
        args = (params.tied, n_layers, y, schedule, loss_kind, target, x_hat, c)
        fd[i] = (_loss_of(plus, *args) - _loss_of(minus, *args)) / (2 * h)
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(fd)))
    return float(np.max(np.abs(analytic - fd) / denom))


def run_grad_check(
    size: int = 6,
    max_layers: int = 3,
    seed: int = 0,
    h: float = 1e-5,
    losses: Sequence[str] = ("kl", "hinge"),
) -> dict:
    """Sweep losses x layer counts x tied/untied x schedules; report worst error."""
    rng = np.random.default_rng(seed)
    y = rng.random((size, size))
    x_hat = rng.integers(0, 2, size=size * size)
    schedules = {
        "checkerboard": checkerboard_schedule(size, size),
        "raster": raster_schedule(size * size),
    }

    def random_theta():
        return CrfParams(
            w=rng.normal(0.0, 0.3, 26), p_h=rng.normal(0.0, 0.3), p_v=rng.normal(0.0, 0.3)
        )

    target = build_mrf(y, random_theta())
    rows = []
    for loss_kind in losses:
        for n_layers in range(1, max_layers + 1):
            for tied in (True, False):
                for sched_name, schedule in schedules.items():
                    if tied:
                        params = MfnParams(tied=True, layers=[random_theta()])
                    else:
                        params = MfnParams(
                            tied=False, layers=[random_theta() for _ in range(n_layers)]
                        )
                    err = check_config(
                        y,
                        params,
                        n_layers,
                        schedule,
                        loss_kind,
                        target=target,
                        x_hat=x_hat,
                        h=h,
                    )
                    rows.append(
                        {
                            "loss": loss_kind,
                            "layers": n_layers,
                            "tied": tied,
                            "schedule": sched_name,
                            "max_rel_err": err,
                        }
                    )
    return {"max_rel_err": max(r["max_rel_err"] for r in rows), "configs": rows}
