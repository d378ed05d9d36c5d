"""Twist of a hollow shaft whose radius steps smoothly from 1 to 2.

The twist angle solves ``(J(x) phi'(x))' = 0`` on ``[0, 1]`` with
``phi(0) = 0`` and ``phi'(1) = 32 / (pi J(1))``.  The variable-scaling PINN
trains ``v`` on the stretched interval ``[0, N]`` (``xbar = N x``) and maps
back through ``u(x) = v(N x)``; ``N = 1`` is the plain PINN.
"""
from __future__ import annotations

import csv
import functools
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Jet2, jet_sigmoid
from .network import NetworkSpec, forward, forward_jets
from .optim import Batch, LossWeights, TrainConfig, TrainReport, train
from .quadrature import adaptive_simpson, cumulative_simpson

WALL = 0.2
STEEPNESS = 150.0
FLUX = 32.0 / math.pi  # J(x) phi'(x), constant along the shaft


# ---------------------------------------------------------------------------
# shaft profile
# ---------------------------------------------------------------------------

def _profile_jet(x) -> Jet2:
    x = np.asarray(x, dtype=np.float64)
    xj = Jet2(x, np.ones((1,) + x.shape), np.zeros((1,) + x.shape))
    r = 1.0 + jet_sigmoid(STEEPNESS * xj - 0.5 * STEEPNESS)
    inner = r - WALL
    r2, i2 = r * r, inner * inner
    return r2 * r2 - i2 * i2


def polar_moment_jet(x) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(J, J', J'')`` at ``x``, carried through jets."""
    j = _profile_jet(x)
    return j.value, j.d1[0], j.d2[0]


def polar_moment(x):
    """``J(x) = r^4 - (r - 0.2)^4`` with ``r = 1 + sigmoid(150 x - 75)``."""
    v = _profile_jet(x).value
    return float(v) if np.ndim(v) == 0 else v


def radius(x):
    z = STEEPNESS * np.asarray(x, dtype=np.float64) - 0.5 * STEEPNESS
    return 1.0 + 0.5 * np.tanh(0.5 * z) + 0.5


def neumann_target(N: float) -> float:
    """Slope of ``v`` at ``xbar = N``: ``32 / (pi J(1) N)``."""
    return FLUX / (polar_moment(1.0) * N)


# ---------------------------------------------------------------------------
# exact solution
# ---------------------------------------------------------------------------

def _inv_flux(s: float) -> float:
    return FLUX / polar_moment(s)


def exact_solution(x: float, tol: float = 1e-10) -> float:
    """``phi(x) = (32/pi) int_0^x ds / J(s)`` by adaptive Simpson."""
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    return adaptive_simpson(_inv_flux, 0.0, float(x), tol)


@functools.lru_cache(maxsize=8)
def _exact_grid(n: int, tol: float) -> tuple[np.ndarray, np.ndarray]:
    xs = np.linspace(0.0, 1.0, n)
    return xs, np.array(cumulative_simpson(_inv_flux, xs, tol))


def exact_profile(n: int = 1000, tol: float = 1e-10) -> tuple[np.ndarray, np.ndarray]:
    xs, phi = _exact_grid(n, tol)
    return xs.copy(), phi.copy()


# ---------------------------------------------------------------------------
# residuals
# ---------------------------------------------------------------------------

def scaled_operator(v1, v2, xbar, N: float):
    """``N J'(xbar/N) v' + N^2 J(xbar/N) v''`` given ``v'`` and ``v''`` at xbar."""
    J, Jp, _ = polar_moment_jet(np.asarray(xbar, dtype=np.float64) / N)
    return N * Jp * v1 + N * N * J * v2


def scaled_residual(params, xbar, N: float, spec: NetworkSpec | None = None):
    spec = spec or NetworkSpec(1, (32, 32))
    xbar = np.asarray(xbar, dtype=np.float64).reshape(-1)
    jet = forward_jets(params, spec, xbar[:, None])
    return scaled_operator(jet.d1[0], jet.d2[0], xbar, N)


def unscaled_residual(params, x, spec: NetworkSpec | None = None):
    """``(J phi')'`` of the network on the physical interval, via a jet product."""
    spec = spec or NetworkSpec(1, (32, 32))
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    jet = forward_jets(params, spec, x[:, None])
    J, Jp, _ = polar_moment_jet(x)
    return Jp * jet.d1[0] + J * jet.d2[0]


def boundary_terms(params, N: float, spec: NetworkSpec | None = None) -> tuple:
    """``(v(0) - 0, v'(N) - 32/(pi J(1) N))``."""
    spec = spec or NetworkSpec(1, (32, 32))
    jet = forward_jets(params, spec, np.array([[0.0], [float(N)]]))
    return jet.value[0], jet.d1[0][1] - neumann_target(N)


# ---------------------------------------------------------------------------
# problem
# ---------------------------------------------------------------------------

@dataclass
class VSProblem:
    N: float = 1.0
    hidden_layers: tuple = (32, 32)
    n_collocation: int = 100
    data_weight: float = 20.0
    eval_points: int = 1000

    def __post_init__(self):
        if not self.N >= 1.0:
            raise ValueError(f"scale N must be >= 1, got {self.N}")
        if self.n_collocation < 1:
            raise ValueError("need at least one collocation point")
        self.N = float(self.N)
        self.spec = NetworkSpec(1, tuple(self.hidden_layers))
        self.weights = LossWeights(1.0 / self.N ** 4, self.data_weight)
        self.target = neumann_target(self.N)
        self._coef = {}

    def sample(self, rng: np.random.Generator) -> Batch:
        xbar = rng.uniform(0.0, self.N, self.n_collocation)
        return Batch(xbar[:, None], None)

    def _coefficients(self, xbar: np.ndarray):
        key = xbar.tobytes()
        if key not in self._coef:
            J, Jp, _ = polar_moment_jet(xbar / self.N)
            self._coef = {key: (self.N * Jp, self.N * self.N * J)}
        return self._coef[key]

    def residuals(self, theta, pts):
        a, b = self._coefficients(pts[:, 0])
        jet = forward_jets(theta, self.spec, pts)
        return a * jet.d1[0] + b * jet.d2[0]

    def boundary_loss(self, theta, boundary):
        jet = forward_jets(theta, self.spec, np.array([[0.0], [self.N]]))
        dirichlet = jet.value[0]
        neumann = jet.d1[0][1] - self.target
        return dirichlet * dirichlet + neumann * neumann

    def predict(self, params, x) -> np.ndarray:
        """``u(x) = v(N x)`` on the physical interval."""
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        return forward(params, self.spec, (self.N * x)[:, None])

    def slope(self, params, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        return self.N * forward_jets(params, self.spec, (self.N * x)[:, None]).d1[0]

    def rel_l2(self, params) -> float:
        xs, exact = _exact_grid(self.eval_points, 1e-10)
        pred = self.predict(params, xs)
        return float(np.linalg.norm(pred - exact) / np.linalg.norm(exact))

    def first_integral_deviation(self, params, lo: float = 0.05, hi: float = 0.95, n: int = 1001) -> float:
        """``sup |J u' - 32/pi| / (32/pi)`` over ``[lo, hi]``."""
        xs = np.linspace(lo, hi, n)
        return float(np.max(np.abs(polar_moment(xs) * self.slope(params, xs) - FLUX)) / FLUX)


@dataclass
class VSResult:
    N: float
    seed: int
    rel_l2: float
    report: TrainReport
    params: np.ndarray
    problem: VSProblem
    files: dict = field(default_factory=dict)


def run_vs_case(N: float, seed: int, epochs: int = 20_000, lr: float = 1e-3, outdir=None,
                eval_stride: int = 100, resample: str = "fixed-once") -> VSResult:
    problem = VSProblem(N)
    config = TrainConfig(epochs=epochs, seed=seed, lr=lr, eval_stride=eval_stride, resample=resample)
    params, report = train(problem, config)
    err = problem.rel_l2(params)
    res = VSResult(problem.N, seed, err, report, params, problem)
    if outdir is not None:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        res.files["solution"] = write_solution(problem, params, outdir / "solution.csv")
        res.files["errors"] = report.write_csv(outdir / "errors.csv")
    return res


def write_solution(problem: VSProblem, params, path) -> Path:
    xs, exact = _exact_grid(problem.eval_points, 1e-10)
    pred = problem.predict(params, xs)
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "phi_pred", "phi_exact"])
        for x, p, e in zip(xs, pred, exact):
            w.writerow([repr(float(x)), repr(float(p)), repr(float(e))])
    return path
