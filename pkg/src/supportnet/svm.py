"""Linear one-vs-rest SVM over learned representations.

The production solver is dual coordinate descent on the box-constrained
L1-hinge dual (Hsieh et al., ICML 2008), bias-free to match the output
layer it approximates. A deliberately slow projected-gradient solver on
the same dual serves as an independent oracle for small problems.

The per-coordinate sweep is the hot loop; a compiled kernel is used when
available and a numpy fallback otherwise. Set SUPPORTNET_PURE_PYTHON=1
to force the fallback.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .core_math import SeededRng
from .errors import DegenerateProblemError, OracleScopeError, ParameterError, ShapeError

if os.environ.get("SUPPORTNET_PURE_PYTHON"):
    from . import _dualcd_py as _kernel

    _BACKEND = "python"
else:
    try:
        from . import _dualcd as _kernel

        _BACKEND = "cython"
    except ImportError:
        from . import _dualcd_py as _kernel

        _BACKEND = "python"


def solver_backend() -> str:
    """Which coordinate-descent kernel is active: 'cython' or 'python'."""
    return _BACKEND


@dataclass
class SvmProblem:
    """A multiclass training problem over fixed feature vectors."""

    features: np.ndarray  # (N, T)
    labels: np.ndarray  # (N,)
    C: float = 1.0

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise ShapeError("features must be (N, T)")
        if self.labels.shape != (self.features.shape[0],):
            raise ShapeError("labels must align with features")
        if self.features.shape[0] < 2:
            raise DegenerateProblemError("need at least 2 examples")
        if len(np.unique(self.labels)) < 2:
            raise DegenerateProblemError("need at least 2 distinct classes")
        if not self.C > 0:
            raise ParameterError(f"C must be positive, got {self.C}")
        if self.features.size and not np.isfinite(self.features).all():
            raise ShapeError("features contain NaN or Inf")


@dataclass
class ConvergenceReport:
    epochs: list[int] = field(default_factory=list)
    final_violation: list[float] = field(default_factory=list)

    @property
    def max_violation(self) -> float:
        return max(self.final_violation) if self.final_violation else 0.0


@dataclass
class LinearSvmModel:
    """One binary separator per class, trained against the rest."""

    classes: np.ndarray  # distinct labels, ascending
    weights: np.ndarray  # (K, T)
    dual_coefs: np.ndarray  # (K, N)
    alpha_tol: float
    C: float
    report: ConvergenceReport

    def class_column(self, label: int) -> int:
        hits = np.flatnonzero(self.classes == label)
        if len(hits) != 1:
            raise ParameterError(f"class {label} not in model")
        return int(hits[0])

    def support_indices(self, label: int) -> np.ndarray:
        """Indices of training examples with nonzero dual weight in this
        class's one-vs-rest problem."""
        k = self.class_column(label)
        return np.flatnonzero(self.dual_coefs[k] > self.alpha_tol)

    def is_support(self, label: int, index: int) -> bool:
        k = self.class_column(label)
        return bool(self.dual_coefs[k, index] > self.alpha_tol)


def _binary_signs(labels: np.ndarray, positive: int) -> np.ndarray:
    return np.where(labels == positive, 1.0, -1.0)


def train_ovr(
    problem: SvmProblem,
    tol: float = 1e-4,
    max_epochs: int = 1000,
    seed: int = 0,
    alpha_tol: float | None = None,
) -> LinearSvmModel:
    """Train one-vs-rest by dual coordinate descent.

    Each binary problem stops when the largest single-coordinate
    projected-gradient (KKT) violation in a sweep drops below ``tol`` or
    after ``max_epochs`` sweeps. Coordinates are visited in a fresh seeded
    permutation per sweep, so results are order-randomized yet fully
    reproducible.
    """
    x = problem.features
    n, t = x.shape
    classes = np.unique(problem.labels)
    q_diag = np.einsum("ij,ij->i", x, x)
    a_tol = alpha_tol if alpha_tol is not None else 1e-8 * problem.C

    weights = np.zeros((len(classes), t))
    duals = np.zeros((len(classes), n))
    report = ConvergenceReport()
    for k, cls in enumerate(classes):
        y = _binary_signs(problem.labels, cls)
        alpha = np.zeros(n)
        w = np.zeros(t)
        rng = SeededRng(seed, stream=int(cls) + 1)
        violation = np.inf
        epoch = 0
        for epoch in range(1, max_epochs + 1):
            order = rng.permutation(n).astype(np.int64)
            violation = _kernel.cd_epoch(x, y, q_diag, alpha, w, problem.C, order)
            if violation < tol:
                break
        weights[k] = w
        duals[k] = alpha
        report.epochs.append(epoch)
        report.final_violation.append(float(violation))
    return LinearSvmModel(classes, weights, duals, a_tol, problem.C, report)


def margins(model: LinearSvmModel, features) -> np.ndarray:
    """Per-class margins: entry (n, k) = w_k . features_n."""
    f = np.asarray(features, dtype=np.float64)
    if f.ndim == 1:
        f = f[None, :]
    if f.shape[1] != model.weights.shape[1]:
        raise ShapeError(
            f"feature dim {f.shape[1]} != model dim {model.weights.shape[1]}"
        )
    return f @ model.weights.T


def dual_objective(alpha: np.ndarray, w: np.ndarray) -> float:
    """Value of the dual problem at (alpha, w): sum(alpha) - ||w||^2 / 2."""
    return float(alpha.sum() - 0.5 * np.dot(w, w))


def model_objectives(model: LinearSvmModel) -> np.ndarray:
    """Per-class dual objective values of a trained model."""
    return np.array(
        [dual_objective(model.dual_coefs[k], model.weights[k]) for k in range(len(model.classes))]
    )


def kkt_violation(x: np.ndarray, y: np.ndarray, alpha: np.ndarray, c: float) -> float:
    """Largest projected-gradient magnitude over all coordinates."""
    w = x.T @ (alpha * y)
    g = y * (x @ w) - 1.0
    pg = g.copy()
    pg[(alpha <= 0.0) & (g >= 0.0)] = 0.0
    pg[(alpha >= c) & (g <= 0.0)] = 0.0
    return float(np.abs(pg).max(initial=0.0))


def brute_force_qp(
    problem: SvmProblem,
    kkt_tol: float = 1e-8,
    max_iters: int = 2_000_000,
    alpha_tol: float | None = None,
) -> LinearSvmModel:
    """Oracle solver: projected gradient ascent on the same dual.

    Small steps, full-vector updates, no coordinate tricks; intentionally
    independent of the production path. Restricted to tiny problems
    (N <= 20, T <= 4) so tests stay fast.
    """
    x = problem.features
    n, t = x.shape
    if n > 20 or t > 4:
        raise OracleScopeError(f"oracle limited to N<=20, T<=4; got N={n}, T={t}")
    classes = np.unique(problem.labels)
    a_tol = alpha_tol if alpha_tol is not None else 1e-8 * problem.C

    weights = np.zeros((len(classes), t))
    duals = np.zeros((len(classes), n))
    report = ConvergenceReport()
    gram = x @ x.T
    for k, cls in enumerate(classes):
        y = _binary_signs(problem.labels, cls)
        q = np.outer(y, y) * gram
        lip = float(np.linalg.eigvalsh(q)[-1])
        step = 1.0 / max(lip, 1e-12)
        alpha = np.zeros(n)  # feasible start
        violation = np.inf
        iters = 0
        for iters in range(1, max_iters + 1):
            grad = 1.0 - q @ alpha
            alpha = np.clip(alpha + step * grad, 0.0, problem.C)
            if iters % 50 == 0:
                violation = kkt_violation(x, y, alpha, problem.C)
                if violation < kkt_tol:
                    break
        else:
            violation = kkt_violation(x, y, alpha, problem.C)
        if violation >= kkt_tol:
            raise OracleScopeError(
                f"oracle failed to reach KKT tol {kkt_tol} (violation {violation})"
            )
        weights[k] = x.T @ (alpha * y)
        duals[k] = alpha
        report.epochs.append(iters)
        report.final_violation.append(float(violation))
    return LinearSvmModel(classes, weights, duals, a_tol, problem.C, report)
