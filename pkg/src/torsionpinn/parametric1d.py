"""Parametric PINN for a shaft loaded by a Gaussian distributed torque.

Solves ``-phi'' = T exp(-(x - m)^2 / (2 sigma^2))`` on ``[0, 1]`` with
``phi(0) = phi'(1) = 0`` for every ``(T, m, sigma)`` in a box, using one
network that takes ``(x, T, m, sigma)`` as input.
"""
from __future__ import annotations

import csv
import math
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import exp as _exp
from .errors import SpecMismatchError
from .network import Checkpoint, NetworkSpec, forward, forward_jets, load_checkpoint
from .optim import Batch, LossWeights, TrainConfig, train
from .quadrature import adaptive_simpson

PARAM_BOX = ((1.0, 10.0), (0.5, 0.9), (0.2, 1.0))
PARAM_NAMES = ("T", "m", "sigma")


@dataclass(frozen=True)
class ParamPoint:
    T: float
    m: float
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.T, self.m, self.sigma)

    def in_box(self, box=PARAM_BOX) -> bool:
        return all(lo <= v <= hi for v, (lo, hi) in zip(self.as_tuple(), box))


def gaussian_force(x, T, m, sigma):
    """Body torque ``T exp(-(x - m)^2 / (2 sigma^2))``; works on Var/ndarray."""
    u = (x - m) / sigma
    return T * _exp(-0.5 * u * u)


# ---------------------------------------------------------------------------
# oracle
# ---------------------------------------------------------------------------

def oracle_slope(x, T, m, sigma):
    """phi'(x) = int_x^1 f(s) ds in closed form through erf."""
    k = sigma * math.sqrt(2.0)
    c = T * sigma * math.sqrt(math.pi / 2.0)
    return c * (math.erf((1.0 - m) / k) - math.erf((x - m) / k))


def oracle_solution(x, p: ParamPoint | tuple, tol: float = 1e-11) -> float:
    """phi(x) = int_0^x phi'(t) dt by adaptive Simpson."""
    T, m, sigma = p.as_tuple() if isinstance(p, ParamPoint) else p
    if x == 0.0:
        return 0.0
    return adaptive_simpson(lambda t: oracle_slope(t, T, m, sigma), 0.0, float(x), tol)


def oracle_profile(xs, p, tol: float = 1e-11) -> np.ndarray:
    """Oracle on an increasing grid starting at 0, integrating piece by piece."""
    T, m, sigma = p.as_tuple() if isinstance(p, ParamPoint) else p
    xs = np.asarray(xs, dtype=np.float64)
    out = np.zeros_like(xs)
    acc, prev = 0.0, 0.0
    piece_tol = tol / max(len(xs), 1)
    for i, x in enumerate(xs):
        if x > prev:
            acc += adaptive_simpson(lambda t: oracle_slope(t, T, m, sigma), prev, float(x), piece_tol)
            prev = float(x)
        out[i] = acc
    return out


# ---------------------------------------------------------------------------
# problem
# ---------------------------------------------------------------------------

def evaluation_grid(n_x: int = 51, n_p: int = 4, box=PARAM_BOX):
    """Fixed evaluation grid: n_x x-points times an n_p^3 tensor grid of parameters."""
    xs = np.linspace(0.0, 1.0, n_x)
    axes = [np.linspace(lo, hi, n_p) for lo, hi in box]
    params = np.array(np.meshgrid(*axes, indexing="ij")).reshape(3, -1).T
    return xs, params


@dataclass
class ParametricProblem:
    """Loss assembly for the parametric Gaussian-torque problem.

    Network inputs are ``(x, T, m, sigma)`` with the three parameters mapped
    affinely onto ``[-1, 1]`` first; derivatives are taken in ``x`` only.
    """

    box: tuple = PARAM_BOX
    hidden_layers: tuple = (64, 64, 64, 64)
    weights: LossWeights = field(default_factory=lambda: LossWeights(4.0, 1.0))
    n_param_residual: int = 1000
    n_x_residual: int = 100
    n_param_boundary: int = 10_000
    n_x_boundary: int = 2
    normalize: bool = True
    grid_x: int = 51
    grid_p: int = 4
    compute_dtype: str = "float32"  # internal precision of the training jets

    def __post_init__(self):
        self.spec = NetworkSpec(4, tuple(self.hidden_layers))
        self.box = tuple(tuple(map(float, b)) for b in self.box)
        if any(lo > hi for lo, hi in self.box) or self.box[2][0] <= 0:
            raise ValueError("invalid parameter box")
        if min(self.n_param_residual, self.n_x_residual, self.n_param_boundary, self.n_x_boundary) < 1:
            raise ValueError("collocation counts must be >= 1")
        self._dtype = np.dtype(self.compute_dtype)
        if self._dtype not in (np.float32, np.float64):
            raise ValueError("compute_dtype must be float32 or float64")
        self._grid = None

    # -- input map ------------------------------------------------------
    def inputs(self, x, params) -> np.ndarray:
        """Network input rows from x values and raw (T, m, sigma) rows."""
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        params = np.atleast_2d(np.asarray(params, dtype=np.float64))
        if params.shape[0] == 1 and x.shape[0] > 1:
            params = np.repeat(params, x.shape[0], axis=0)
        if self.normalize:
            lo = np.array([b[0] for b in self.box])
            hi = np.array([b[1] for b in self.box])
            params = 2.0 * (params - lo) / (hi - lo) - 1.0
        return np.column_stack([x, params])

    def raw_params(self, rows: np.ndarray) -> np.ndarray:
        p = rows[:, 1:]
        if self.normalize:
            lo = np.array([b[0] for b in self.box])
            hi = np.array([b[1] for b in self.box])
            p = lo + (p + 1.0) * 0.5 * (hi - lo)
        return p

    # -- sampling -------------------------------------------------------
    def _draw_params(self, rng, n: int) -> np.ndarray:
        return np.column_stack([rng.uniform(lo, hi, n) for lo, hi in self.box])

    def sample(self, rng: np.random.Generator) -> Batch:
        pr = self._draw_params(rng, self.n_param_residual)
        xr = rng.uniform(0.0, 1.0, (self.n_param_residual, self.n_x_residual))
        interior = self.inputs(xr.reshape(-1), np.repeat(pr, self.n_x_residual, axis=0))
        pb = self._draw_params(rng, self.n_param_boundary)
        # the boundary of [0, 1] is {0, 1}; each parameter draw gets both ends
        ends = np.tile(np.array([0.0, 1.0]), int(math.ceil(self.n_x_boundary / 2)))[: self.n_x_boundary]
        rows = self.inputs(np.tile(ends, self.n_param_boundary), np.repeat(pb, self.n_x_boundary, axis=0))
        return Batch(interior, {"left": rows[rows[:, 0] == 0.0], "right": rows[rows[:, 0] == 1.0],
                                "count": rows.shape[0]})

    # -- losses ---------------------------------------------------------
    def residuals(self, theta, rows: np.ndarray):
        jet = forward_jets(theta, self.spec, rows, seed_dims=[0], dtype=self._dtype)
        p = self.raw_params(rows)
        f = gaussian_force(rows[:, 0], p[:, 0], p[:, 1], p[:, 2])
        return -1.0 * jet.d2[0] - f

    def boundary_loss(self, theta, boundary):
        """Pooled mean of squared Dirichlet (x=0) and Neumann (x=1) defects."""
        total = 0.0
        if boundary["left"].shape[0]:
            left = forward_jets(theta, self.spec, boundary["left"], seed_dims=[0], dtype=self._dtype).value
            total = total + (left * left).sum()
        if boundary["right"].shape[0]:
            right = forward_jets(theta, self.spec, boundary["right"], seed_dims=[0], dtype=self._dtype).d1[0]
            total = total + (right * right).sum()
        return total * (1.0 / boundary["count"])

    def parametric_losses(self, params, batch: Batch):
        """``(L_para_r, L_para_b)`` for plain parameters."""
        r = self.residuals(params, batch.interior)
        return float(np.mean(r * r)), float(self.boundary_loss(params, batch.boundary))

    # -- evaluation -----------------------------------------------------
    def reference(self):
        """Oracle values on the fixed test grid (cached)."""
        if self._grid is None:
            xs, ps = evaluation_grid(self.grid_x, self.grid_p, self.box)
            exact = np.array([oracle_profile(xs, p) for p in ps])
            self._grid = (xs, ps, exact)
        return self._grid

    def predict_grid(self, params) -> np.ndarray:
        xs, ps, _ = self.reference()
        rows = self.inputs(np.tile(xs, len(ps)), np.repeat(ps, len(xs), axis=0))
        return forward(params, self.spec, rows).reshape(len(ps), len(xs))

    def rel_l2(self, params) -> float:
        _, _, exact = self.reference()
        pred = self.predict_grid(params)
        return float(np.linalg.norm(pred - exact) / np.linalg.norm(exact))


def train_parametric(seed: int, problem: ParametricProblem | None = None, config: TrainConfig | None = None):
    problem = problem or ParametricProblem()
    config = config or TrainConfig(epochs=2000, seed=seed, lr=1e-3, eval_stride=100)
    if config.seed != seed:
        config = TrainConfig(**{**config.__dict__, "seed": seed})
    params, report = train(problem, config)
    return params, report, problem


def curve_params(seed: int = 9, box=PARAM_BOX) -> np.ndarray:
    """Nine parameter sets in three groups of three, drawn uniformly from the box."""
    rng = np.random.default_rng(seed)
    return np.column_stack([rng.uniform(lo, hi, 9) for lo, hi in box])


def write_curves(problem: ParametricProblem, params, path, n_x: int = 101, seed: int = 9) -> Path:
    """Predicted and oracle profiles for the nine curve parameter sets."""
    xs = np.linspace(0.0, 1.0, n_x)
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["group", "set", "T", "m", "sigma", "x", "phi_pred", "phi_exact"])
        for k, p in enumerate(curve_params(seed, problem.box)):
            pred = forward(params, problem.spec, problem.inputs(xs, p[None, :]))
            exact = oracle_profile(xs, p)
            for x, a, b in zip(xs, pred, exact):
                w.writerow([k // 3, k, repr(float(p[0])), repr(float(p[1])), repr(float(p[2])),
                            repr(float(x)), repr(float(a)), repr(float(b))])
    return path


def checkpoint_metadata(problem: ParametricProblem, config: TrainConfig, report) -> dict:
    return {
        "problem": "parametric1d",
        "seed": config.seed,
        "epochs": len(report.records),
        "lambda_r": problem.weights.lambda_r,
        "lambda_b": problem.weights.lambda_b,
        "normalize": int(problem.normalize),
        "box": ";".join(f"{lo},{hi}" for lo, hi in problem.box),
    }


def problem_from_checkpoint(ckpt: Checkpoint) -> ParametricProblem:
    if ckpt.spec.input_dim != 4:
        raise SpecMismatchError(f"parametric model needs 4 inputs, checkpoint has {ckpt.spec.input_dim}")
    meta = ckpt.metadata
    box = PARAM_BOX
    if "box" in meta:
        box = tuple(tuple(float(v) for v in pair.split(",")) for pair in meta["box"].split(";"))
    return ParametricProblem(box=box, hidden_layers=ckpt.spec.hidden_layers,
                             normalize=bool(int(meta.get("normalize", 1))))


@dataclass
class Prediction:
    phi: np.ndarray
    extrapolated: bool


class Predictor:
    """Evaluates a trained parametric checkpoint; safe to share across threads."""

    def __init__(self, ckpt: Checkpoint | str):
        if not isinstance(ckpt, Checkpoint):
            ckpt = load_checkpoint(ckpt, expected_input_dim=4)
        self.ckpt = ckpt
        self.problem = problem_from_checkpoint(ckpt)

    def __call__(self, x, T: float, m: float, sigma: float, warn: bool = True) -> Prediction:
        p = ParamPoint(float(T), float(m), float(sigma))
        outside = not p.in_box(self.problem.box)
        if outside and warn:
            warnings.warn(f"parameters {p.as_tuple()} outside the training box; extrapolating", stacklevel=2)
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        rows = self.problem.inputs(x, np.array([p.as_tuple()]))
        return Prediction(forward(self.ckpt.params, self.ckpt.spec, rows), outside)

    def batch(self, x, params) -> np.ndarray:
        """Vectorised evaluation for per-row parameters (no box check)."""
        rows = self.problem.inputs(x, params)
        return forward(self.ckpt.params, self.ckpt.spec, rows)


def predict(ckpt, x, p) -> Prediction:
    T, m, sigma = p.as_tuple() if isinstance(p, ParamPoint) else p
    return Predictor(ckpt)(x, T, m, sigma)


def timed_batch(predictor: Predictor, n: int, seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    x = rng.uniform(0, 1, n)
    ps = np.column_stack([rng.uniform(lo, hi, n) for lo, hi in predictor.problem.box])
    t0 = time.perf_counter()
    predictor.batch(x, ps)
    return time.perf_counter() - t0
