"""Adam, physics-informed loss assembly and the generic training loop."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Protocol

import numpy as np

from .autodiff import Var, param_gradient
from .errors import TrainingDivergenceError
from .network import NetworkSpec, init_params

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LossWeights:
    lambda_r: float = 1.0
    lambda_b: float = 1.0

    def __post_init__(self):
        if self.lambda_r < 0 or self.lambda_b < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.lambda_r == 0 and self.lambda_b == 0:
            raise ValueError("loss weights cannot both be zero")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int, **hyper) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), **hyper)


def adam_step(state: AdamState, params: np.ndarray, grad: np.ndarray):
    """One bias-corrected Adam update; returns ``(state, params)`` as new objects."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != params.shape or state.m.shape != params.shape:
        raise ValueError("Adam state, parameters and gradient must have equal shapes")
    if not np.all(np.isfinite(grad)):
        raise TrainingDivergenceError("non-finite gradient", epoch=state.t)
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new_params = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return replace(state, m=m, v=v, t=t), new_params


# ---------------------------------------------------------------------------
# problems and batches
# ---------------------------------------------------------------------------

@dataclass
class Batch:
    """Collocation points for one loss evaluation.

    ``interior`` holds residual points (rows are network-input-space points);
    ``boundary`` is problem specific (an array of rows, or a dict of arrays).
    """

    interior: np.ndarray
    boundary: object

    def canonical(self) -> "Batch":
        return Batch(_lexsorted(self.interior), _canonical_boundary(self.boundary))


def _lexsorted(points: np.ndarray) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] == 0:
        return points
    order = np.lexsort(points.T[::-1])
    return points[order]


def _canonical_boundary(boundary):
    if isinstance(boundary, dict):
        return {k: _lexsorted(v) if isinstance(v, np.ndarray) else v for k, v in boundary.items()}
    if isinstance(boundary, np.ndarray):
        return _lexsorted(boundary)
    return boundary


class Problem(Protocol):
    """What :func:`train` needs from a problem instance."""

    spec: NetworkSpec
    weights: LossWeights

    def sample(self, rng: np.random.Generator) -> Batch: ...

    def residuals(self, theta, points: np.ndarray): ...

    def boundary_loss(self, theta, boundary): ...

    def rel_l2(self, params: np.ndarray) -> float: ...


def _residual_sum_sq(problem, params, points, chunk: int, with_grad: bool):
    """Sum of squared residuals (and its gradient), accumulated in index order."""
    if points.shape[0] == 0:
        raise ValueError("empty residual batch")
    total = 0.0
    grad = np.zeros_like(params) if with_grad else None
    for start in range(0, points.shape[0], chunk):
        part = points[start:start + chunk]
        if with_grad:
            def f(theta, part=part):
                r = problem.residuals(theta, part)
                return (r * r).sum()

            s, g = param_gradient(f, params)
            grad += g
        else:
            r = np.asarray(problem.residuals(params, part))
            s = float(np.sum(r * r))
        total += s
    return total, grad


def loss_and_grad(problem, params, batch: Batch, chunk: int = 8192, with_grad: bool = True):
    """``(L_total, L_r, L_b, grad)`` for a canonical batch."""
    n = batch.interior.shape[0]
    sr, gr = _residual_sum_sq(problem, params, batch.interior, chunk, with_grad)
    l_r = sr / n
    if with_grad:
        l_b, gb = param_gradient(lambda th: problem.boundary_loss(th, batch.boundary), params)
    else:
        l_b, gb = float(np.asarray(_as_array(problem.boundary_loss(params, batch.boundary)))), None
    w = problem.weights
    total = w.lambda_r * l_r + w.lambda_b * l_b
    grad = w.lambda_r * gr / n + w.lambda_b * gb if with_grad else None
    return total, l_r, l_b, grad


def _as_array(x):
    return x.value if isinstance(x, Var) else x


def total_loss(problem, params, batch: Batch, chunk: int = 8192):
    """``(L_total, L_r, L_b)``; independent of the order of batch points."""
    batch = batch.canonical()
    if batch.interior.shape[0] == 0:
        raise ValueError("empty residual batch")
    total, l_r, l_b, _ = loss_and_grad(problem, params, batch, chunk, with_grad=False)
    return total, l_r, l_b


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    epochs: int = 10_000
    seed: int = 0
    lr: float = 1e-3
    resample: str = "fixed-once"  # or "per-epoch"
    early_stop: bool = False
    convergence_window: int = 500
    convergence_threshold: float = 1e-4
    eval_stride: int = 100
    chunk: int = 8192
    time_budget: float | None = None  # seconds; stop stepping once exceeded

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.resample not in ("fixed-once", "per-epoch"):
            raise ValueError(f"unknown resample policy {self.resample!r}")
        if self.convergence_threshold <= 0 or self.convergence_window < 1:
            raise ValueError("convergence window/threshold must be positive")
        if self.eval_stride < 0 or self.chunk < 1:
            raise ValueError("eval_stride must be >= 0 and chunk >= 1")
        if self.time_budget is not None and self.time_budget <= 0:
            raise ValueError("time_budget must be positive")


@dataclass
class EpochRecord:
    epoch: int
    loss_r: float
    loss_b: float
    loss_total: float
    rel_l2: float | None = None


@dataclass
class TrainReport:
    records: list[EpochRecord] = field(default_factory=list)
    final: dict = field(default_factory=dict)
    seed: int = 0
    wall_clock: float = 0.0
    stopped_early: bool = False
    out_of_time: bool = False

    def losses(self) -> np.ndarray:
        return np.array([r.loss_total for r in self.records])

    def errors(self) -> list[tuple[int, float]]:
        return [(r.epoch, r.rel_l2) for r in self.records if r.rel_l2 is not None]

    def write_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "loss_r", "loss_b", "loss_total", "rel_l2"])
            for r in self.records:
                w.writerow([r.epoch, repr(r.loss_r), repr(r.loss_b), repr(r.loss_total),
                            "" if r.rel_l2 is None else repr(r.rel_l2)])
        return path


def _converged(history: list[float], window: int, threshold: float) -> bool:
    if len(history) < 2 * window:
        return False
    recent = float(np.mean(history[-window:]))
    before = float(np.mean(history[-2 * window:-window]))
    return abs(recent - before) / max(abs(before), 1e-300) < threshold


def train(problem, config: TrainConfig, params: np.ndarray | None = None, callback=None):
    """Full-batch Adam on ``problem``; returns ``(params, TrainReport)``.

    Each epoch is one gradient step on the whole batch.  All randomness flows
    from ``config.seed`` (network init and collocation sampling use separate
    streams).  ``callback(epoch, params, record)`` is called after every step.
    """
    t0 = time.perf_counter()
    init_seq, sample_seq = np.random.SeedSequence(config.seed).spawn(2)
    if params is None:
        params = init_params(problem.spec, int(init_seq.generate_state(1)[0]))
    params = np.array(params, dtype=np.float64, copy=True)
    rng = np.random.default_rng(sample_seq)
    report = TrainReport(seed=config.seed)
    if config.epochs == 0:
        report.wall_clock = time.perf_counter() - t0
        return params, report

    state = AdamState.zeros(params.shape[0], lr=config.lr)
    batch = problem.sample(rng).canonical()
    history: list[float] = []
    for epoch in range(config.epochs):
        if config.resample == "per-epoch" and epoch > 0:
            batch = problem.sample(rng).canonical()
        try:
            total, l_r, l_b, grad = loss_and_grad(problem, params, batch, config.chunk)
        except TrainingDivergenceError as exc:
            raise TrainingDivergenceError("non-finite loss", epoch=epoch, last_good_params=params) from exc
        if not (np.isfinite(total) and np.all(np.isfinite(grad))):
            raise TrainingDivergenceError("non-finite loss", epoch=epoch, last_good_params=params)
        rel = None
        if config.eval_stride and epoch % config.eval_stride == 0:
            rel = problem.rel_l2(params)
        record = EpochRecord(epoch, l_r, l_b, total, rel)
        report.records.append(record)
        history.append(total)
        state, params = adam_step(state, params, grad)
        if callback is not None:
            callback(epoch, params, record)
        if config.early_stop and _converged(history, config.convergence_window, config.convergence_threshold):
            report.stopped_early = True
            log.info("converged at epoch %d", epoch)
            break
        if config.time_budget is not None and time.perf_counter() - t0 >= config.time_budget:
            report.out_of_time = True
            log.info("time budget reached at epoch %d", epoch)
            break
    final_total, final_r, final_b = total_loss(problem, params, batch, config.chunk)
    report.final = {
        "loss_total": final_total,
        "loss_r": final_r,
        "loss_b": final_b,
        "rel_l2": problem.rel_l2(params),
        "epochs_run": len(report.records),
    }
    report.wall_clock = time.perf_counter() - t0
    return params, report
