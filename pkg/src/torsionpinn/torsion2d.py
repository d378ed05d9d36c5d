"""Saint-Venant torsion of a prismatic bar on the scaled Prandtl stress function.

The network approximates ``phi'`` (the stress function per unit twist rate),
which satisfies ``lap(phi') = -2G`` inside the cross-section and vanishes on
its boundary.  Internally the network sees coordinates shifted to the
bounding-box centre and divided by a length scale ``L``, and its output is
multiplied by ``G L^2``; residuals and boundary mismatches are still formed in
physical units, so loss values are comparable across formulations.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import GeometryError, TrainingDivergenceError
from .fd_oracle import solve_poisson_2d
from .geometry import (Circle, Domain2D, PointSet, domain_id, grid_points, integrate_field, interior_grid,
                       sampled_points, standard_domain)
from .network import NetworkSpec, forward, forward_jets, forward_var
from .optim import Batch, LossWeights, TrainConfig, TrainReport, train

log = logging.getLogger(__name__)

SHAPES = ("circle", "square", "triangle", "irregular")


@dataclass
class TorsionalConstantResult:
    J: float
    h: float
    n_interior: int
    n_boundary: int
    domain: str


@dataclass
class ShearStress:
    tau_zx: np.ndarray | float
    tau_zy: np.ndarray | float


@dataclass
class Torsion2DProblem:
    domain: Domain2D
    G: float = 1.0
    weights: LossWeights = field(default_factory=lambda: LossWeights(1.0, 1e5))
    points: PointSet | None = None
    hidden_layers: tuple = (64, 64, 64)
    eval_h: float = 0.0025

    def __post_init__(self):
        if not self.G > 0:
            raise ValueError("shear modulus G must be positive")
        if not self.weights.lambda_b > 0:
            raise ValueError("lambda_b must be positive: the Dirichlet condition has to be enforced")
        if self.points is None:
            self.points = grid_points(self.domain)
        if len(self.points.interior) == 0 or len(self.points.boundary) == 0:
            raise ValueError("need interior and boundary points")
        self.spec = NetworkSpec(2, tuple(self.hidden_layers))
        lo, hi = self.domain.bbox()
        self.center = 0.5 * (lo + hi)
        self.length = 0.5 * float(np.max(hi - lo))
        self._exact = None

    # -- scaling -----------------------------------------------------------
    def _map(self, pts) -> np.ndarray:
        return (np.asarray(pts, dtype=np.float64).reshape(-1, 2) - self.center) / self.length

    @property
    def phi_scale(self) -> float:
        return self.G * self.length ** 2

    # -- Problem protocol --------------------------------------------------
    def sample(self, rng: np.random.Generator) -> Batch:
        # points are fixed by the point source; rng is unused on purpose
        return Batch(self.points.interior, self.points.boundary)

    def residuals(self, theta, pts):
        """``lap(phi') + 2G`` at interior points."""
        jet = forward_jets(theta, self.spec, self._map(pts), seed_dims=[0, 1])
        return (jet.d2[0] + jet.d2[1]) * self.G + 2.0 * self.G

    def boundary_loss(self, theta, pts):
        v = forward_var(theta, self.spec, self._map(pts)) if not isinstance(theta, np.ndarray) \
            else forward(theta, self.spec, self._map(pts))
        v = v * self.phi_scale
        return (v * v).mean()

    def rel_l2(self, params) -> float | None:
        if not isinstance(self.domain, Circle):
            return None
        if self._exact is None:
            pts = interior_grid(self.domain, self.eval_h)
            self._exact = (pts, analytic_circle_field(self.domain.radius, self.G, self.domain.center)(pts))
        pts, exact = self._exact
        pred = self.phi(params, pts)
        return float(np.linalg.norm(pred - exact) / np.linalg.norm(exact))

    # -- evaluation --------------------------------------------------------
    def phi(self, params, pts) -> np.ndarray:
        return forward(params, self.spec, self._map(pts)) * self.phi_scale

    def residual(self, params, p) -> float | np.ndarray:
        r = self.residuals(np.asarray(params, dtype=np.float64), p)
        return float(r[0]) if np.ndim(p) == 1 else r

    def shear_stress(self, params, p) -> ShearStress:
        """``(d phi'/dy, -d phi'/dx)`` per unit twist rate."""
        single = np.ndim(p) == 1
        jet = forward_jets(np.asarray(params, dtype=np.float64), self.spec, self._map(p), seed_dims=[0, 1])
        scale = self.G * self.length
        tzx, tzy = jet.d1[1] * scale, -jet.d1[0] * scale
        if single:
            return ShearStress(float(tzx[0]), float(tzy[0]))
        return ShearStress(tzx, tzy)


def residual(problem: Torsion2DProblem, params, p):
    return problem.residual(params, p)


def shear_stress(problem: Torsion2DProblem, params, p) -> ShearStress:
    return problem.shear_stress(params, p)


# ---------------------------------------------------------------------------
# closed forms
# ---------------------------------------------------------------------------

def analytic_circle_field(radius: float, G: float = 1.0, center=(0.0, 0.0)) -> Callable:
    """``phi'(p) = (G/2)(a^2 - |p - c|^2)`` on the closed disk."""
    c = np.asarray(center, dtype=np.float64)

    def phi(p):
        pts = np.asarray(p, dtype=np.float64)
        r2 = np.sum((pts - c) ** 2, axis=-1)
        if np.any(r2 > radius * radius * (1.0 + 1e-12)):
            raise GeometryError("point outside the disk")
        return 0.5 * G * (radius * radius - r2)

    return phi


def _rectangle_series(a: float, b: float, ratio_tol: float = 1e-12, min_terms: int = 50) -> float:
    """St-Venant series for an ``a x b`` rectangle (``a >= b``)."""
    a, b = max(a, b), min(a, b)
    acc = 0.0
    k = 0
    while True:
        n = 2 * k + 1
        term = math.tanh(n * math.pi * a / (2.0 * b)) / n ** 5
        acc += term
        k += 1
        if k >= min_terms and term / acc < ratio_tol:
            break
    return a * b ** 3 * (1.0 / 3.0 - 64.0 / math.pi ** 5 * (b / a) * acc)


def analytic_J(shape: str, dimension) -> float:
    """Torsional constant (G-independent) of the supported closed-form shapes.

    ``dimension`` is the radius for a circle, the side for a square or an
    equilateral triangle, and ``(a, b)`` for a rectangle.
    """
    if shape == "circle":
        return math.pi * float(dimension) ** 4 / 2.0
    if shape == "square":
        s = float(dimension)
        return _rectangle_series(s, s)
    if shape == "rectangle":
        a, b = dimension
        return _rectangle_series(float(a), float(b))
    if shape == "triangle":
        return math.sqrt(3.0) * float(dimension) ** 4 / 80.0
    raise GeometryError(f"no closed form for shape {shape!r}; use the FD oracle")


def reference_J(domain: Domain2D, G: float = 1.0, oracle_h: float = 0.0025) -> tuple[float, str]:
    """Closed form where one exists, otherwise the FD oracle."""
    params = getattr(domain, "params", None) or {}
    if isinstance(domain, Circle):
        return analytic_J("circle", domain.radius), "analytic"
    if domain.kind == "rectangle" and params:
        (x0, y0), (x1, y1) = params["corner_min"], params["corner_max"]
        return analytic_J("rectangle", (x1 - x0, y1 - y0)), "analytic"
    if domain.kind == "equilateral_triangle" and params:
        return analytic_J("triangle", params["side"]), "analytic"
    return solve_poisson_2d(domain, G, oracle_h).J, f"fd(h={oracle_h})"


def torsional_constant(problem: Torsion2DProblem, params, h: float = 0.001) -> TorsionalConstantResult:
    """``J = (2/G) * integral of phi'`` by the midpoint rule on cells of size h.

    ``params`` may also be any callable field ``phi'(points)``.
    """
    field_fn = params if callable(params) else (lambda pts: problem.phi(params, pts))
    J = 2.0 / problem.G * integrate_field(problem.domain, field_fn, h)
    return TorsionalConstantResult(J, h, len(problem.points.interior), len(problem.points.boundary),
                                   domain_id(problem.domain))


# ---------------------------------------------------------------------------
# case runner
# ---------------------------------------------------------------------------

@dataclass
class CaseConfig:
    epochs: int = 10_000
    seed: int = 0
    lr: float = 1e-3
    hidden_layers: tuple = (64, 64, 64)
    G: float = 1.0
    lambda_r: float = 1.0
    lambda_b: float = 1e5
    points: str = "grid"  # or "sampled"
    point_spacing: float = 0.005
    boundary_spacing: float = 0.0025
    quad_h: float = 0.001
    oracle_h: float = 0.0025
    field_h: float = 0.0025
    resample: str = "fixed-once"
    eval_stride: int = 100


@dataclass
class CaseReport:
    name: str
    J_pinn: float
    J_reference: float
    reference: str
    rel_error: float
    report: TrainReport
    params: np.ndarray
    problem: Torsion2DProblem
    files: dict = field(default_factory=dict)


def make_points(domain: Domain2D, config: CaseConfig) -> PointSet:
    if config.points == "grid":
        return grid_points(domain, config.point_spacing, config.boundary_spacing)
    if config.points == "sampled":
        n_r = len(interior_grid(domain, config.point_spacing))
        n_b = max(3, int(round(400 * domain.perimeter)))
        return sampled_points(domain, n_r, n_b, config.seed)
    raise ValueError(f"unknown point source {config.points!r}")


def write_field(problem: Torsion2DProblem, params, h: float, path) -> Path:
    pts = interior_grid(problem.domain, h)
    phi = problem.phi(params, pts)
    tau = problem.shear_stress(params, pts)
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "phi", "tau_zx", "tau_zy"])
        for (x, y), v, a, b in zip(pts, phi, tau.tau_zx, tau.tau_zy):
            w.writerow([repr(float(x)), repr(float(y)), repr(float(v)), repr(float(a)), repr(float(b))])
    return path


def write_summary(rows: list[dict], path) -> Path:
    path = Path(path)
    cols = ["case", "domain", "J_pinn", "J_reference", "reference", "rel_error"]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([r[c] if isinstance(r[c], str) else repr(float(r[c])) for c in cols])
    return path


def run_case(shape: str | Domain2D, config: CaseConfig | None = None, outdir=None,
             points: PointSet | None = None, name: str | None = None) -> CaseReport:
    """Train one cross-section and compare J against its reference value."""
    config = config or CaseConfig()
    domain = standard_domain(shape) if isinstance(shape, str) else shape
    name = name or (shape if isinstance(shape, str) else domain_id(domain))
    if points is None:
        points = make_points(domain, config)
    points.validate(domain)
    problem = Torsion2DProblem(domain, config.G, LossWeights(config.lambda_r, config.lambda_b), points,
                               tuple(config.hidden_layers))
    tc = TrainConfig(epochs=config.epochs, seed=config.seed, lr=config.lr, resample=config.resample,
                     eval_stride=config.eval_stride)
    outdir = Path(outdir) if outdir is not None else None
    seen = TrainReport(seed=config.seed)
    try:
        params, report = train(problem, tc, callback=lambda e, p, rec: seen.records.append(rec))
    except TrainingDivergenceError:
        if outdir is not None:
            outdir.mkdir(parents=True, exist_ok=True)
            seen.write_csv(outdir / "loss.csv")
        raise
    J_pinn = torsional_constant(problem, params, config.quad_h).J
    J_ref, ref_kind = reference_J(domain, config.G, config.oracle_h)
    rel = abs(J_pinn - J_ref) / abs(J_ref)
    log.info("%s: J_pinn=%.6e J_ref=%.6e rel=%.3e", name, J_pinn, J_ref, rel)
    case = CaseReport(name, J_pinn, J_ref, ref_kind, rel, report, params, problem)
    if outdir is not None:
        outdir.mkdir(parents=True, exist_ok=True)
        case.files["field"] = write_field(problem, params, config.field_h, outdir / "field.csv")
        case.files["loss"] = report.write_csv(outdir / "loss.csv")
        case.files["summary"] = write_summary([summary_row(case)], outdir / "summary.csv")
    return case


def summary_row(case: CaseReport) -> dict:
    return {"case": case.name, "domain": domain_id(case.problem.domain), "J_pinn": case.J_pinn,
            "J_reference": case.J_reference, "reference": case.reference, "rel_error": case.rel_error}
