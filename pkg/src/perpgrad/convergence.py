"""Numerical checks of the orthogonalized-descent convergence theory.

Full-gradient runs of the plain and renormalized updates on analytic losses,
the per-step descent bound, the summability bound on ``sum ||g_n||^2``, and the
decision-boundary check on positively homogeneous networks.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .netcore import Network, ParamGroup
from .optim import orthogonalize, renormalize


@dataclass
class AnalyticLoss:
    """Smooth loss with a known Lipschitz constant for its gradient.

    Build with :meth:`quadratic` or :meth:`logistic`.
    """

    kind: str
    value: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray]
    lipschitz_k: float
    lower_bound: float = 0.0
    dim: int = 0
    params: dict = field(default_factory=dict, repr=False)

    @classmethod
    def quadratic(cls, A, c) -> "AnalyticLoss":
        """L(theta) = 1/2 (theta - c)^T A (theta - c) with A symmetric positive definite."""
        A = np.asarray(A, dtype=np.float64)
        c = np.asarray(c, dtype=np.float64)
        A = 0.5 * (A + A.T)
        eig = np.linalg.eigvalsh(A)
        if eig[0] <= 0:
            raise ValueError("A must be positive definite")

        def value(theta):
            r = theta - c
            return 0.5 * float(r @ (A @ r))

        def grad(theta):
            return A @ (theta - c)

        return cls("shifted_quadratic", value, grad, float(eig[-1]), 0.0, c.size, {"A": A, "c": c})

    @classmethod
    def logistic(cls, X, y, reg: float = 1e-2) -> "AnalyticLoss":
        """Mean logistic loss for labels in {-1, +1} plus ``reg/2 ||w||^2``.

        The Lipschitz constant is the usual bound ``lambda_max(X^T X / N) / 4 + reg``.
        """
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if set(np.unique(y)) - {-1.0, 1.0}:
            raise ValueError("logistic labels must be -1 or +1")
        n = X.shape[0]

        def value(w):
            m = y * (X @ w)
            return float(np.logaddexp(0.0, -m).mean() + 0.5 * reg * (w @ w))

        def grad(w):
            m = y * (X @ w)
            s = 0.5 * (1.0 - np.tanh(0.5 * m))  # sigmoid(-m), overflow-free
            return -(X.T @ (y * s)) / n + reg * w

        k = float(np.linalg.eigvalsh(X.T @ X / n)[-1]) / 4.0 + reg
        return cls("logistic_2d", value, grad, k, 0.0, X.shape[1], {"X": X, "y": y, "reg": reg})


def random_spd_quadratic(rng: np.random.Generator, dim: int, eig_range=(0.1, 1.0)) -> AnalyticLoss:
    q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    lam = rng.uniform(*eig_range, size=dim)
    return AnalyticLoss.quadratic((q * lam) @ q.T, rng.standard_normal(dim))


def two_blob_logistic(rng: np.random.Generator, n: int = 200, reg: float = 1e-2) -> AnalyticLoss:
    y = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
    X = rng.standard_normal((n, 2)) + y[:, None] * np.array([1.0, 0.5])
    return AnalyticLoss.logistic(X, y, reg)


def alignment(grad: np.ndarray, theta: np.ndarray) -> float:
    """|cos(grad, theta)|, 0 when either is zero."""
    gn, tn = float(np.linalg.norm(grad)), float(np.linalg.norm(theta))
    if gn == 0.0 or tn == 0.0:
        return 0.0
    return min(1.0, abs(float(grad @ theta)) / (gn * tn))


@dataclass
class ConvergenceReport:
    final_theta: list[float]
    final_alignment: float
    final_grad_norm: float
    final_ortho_norm: float
    steps_taken: int
    converged: bool
    stationary_gap: float
    descent_violations: int = 0
    monotonicity_violations: int = 0
    summability_bound_satisfied: bool = True
    sum_sq_ortho: float = 0.0
    summability_bound: float = math.inf
    eta: float = 0.0
    lipschitz_k: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


def plain_perp_trajectory(loss: AnalyticLoss, theta0, eta: float, max_steps: int, tol: float = 1e-10):
    """Iterate theta <- theta - eta g with no hypothesis checks (negative controls use this)."""
    theta = np.array(theta0, dtype=np.float64)
    traj = [theta.copy()]
    for _ in range(max_steps):
        g = orthogonalize(theta, loss.grad(theta))
        if float(np.linalg.norm(g)) < tol:
            break
        theta = theta - eta * g
        traj.append(theta.copy())
    return traj


@dataclass
class DescentCheck:
    violations: int
    monotonicity_violations: int
    sum_sq_ortho: float
    bound: float
    summability_satisfied: bool
    worst_excess: float

    @property
    def total_violations(self) -> int:
        return self.violations + self.monotonicity_violations + (0 if self.summability_satisfied else 1)


def check_descent_inequality(loss: AnalyticLoss, trajectory, eta: float, k: float,
                             summability_slack: float = 1e-8) -> DescentCheck:
    """Check L(t_{n+1}) <= L(t_n) - eta (1 - eta k / 2) ||g_n||^2 at every step.

    Tolerance per step is ``1e-10 * max(1, |L(t_n)|)``.  Also counts steps
    where the loss went up, and tests the bound on the running sum of
    ``||g_n||^2`` (which is infinite/meaningless when the coefficient is <= 0).
    """
    coef = eta * (1.0 - eta * k / 2.0)
    values = [loss.value(np.asarray(t)) for t in trajectory]
    viol = mono = 0
    worst = 0.0
    total = 0.0
    for n in range(len(trajectory) - 1):
        t = np.asarray(trajectory[n])
        g = orthogonalize(t, loss.grad(t))
        gg = float(g @ g)
        total += gg
        tol = 1e-10 * max(1.0, abs(values[n]))
        excess = values[n + 1] - (values[n] - coef * gg)
        worst = max(worst, excess)
        if excess > tol:
            viol += 1
        if values[n + 1] > values[n] + tol:
            mono += 1
    if coef > 0:
        bound = (values[0] - loss.lower_bound) / coef
        ok = total <= bound * (1.0 + summability_slack) + 1e-300
    else:
        bound = -math.inf
        ok = total == 0.0
    return DescentCheck(viol, mono, total, bound, ok, worst)


def run_plain_perp(loss: AnalyticLoss, theta0, eta: float, max_steps: int = 200_000, tol: float = 1e-10,
                   check: bool = True) -> ConvergenceReport:
    """Plain orthogonalized descent; requires ``0 < eta < 1/k`` and a nonzero start."""
    k = loss.lipschitz_k
    if not 0 < eta < 1.0 / k:
        raise ValueError(f"eta={eta} outside (0, 1/k) with k={k}")
    theta0 = np.asarray(theta0, dtype=np.float64)
    if not np.linalg.norm(theta0) > 0:
        raise ValueError("theta0 must be nonzero")
    traj = plain_perp_trajectory(loss, theta0, eta, max_steps, tol)
    theta = traj[-1]
    grad = loss.grad(theta)
    gnorm = float(np.linalg.norm(grad))
    ortho = float(np.linalg.norm(orthogonalize(theta, grad)))
    align = alignment(grad, theta)
    rep = ConvergenceReport(
        final_theta=theta.tolist(),
        final_alignment=align,
        final_grad_norm=gnorm,
        final_ortho_norm=ortho,
        steps_taken=len(traj) - 1,
        converged=ortho < tol,
        stationary_gap=min(1.0 - align, gnorm),
        eta=eta,
        lipschitz_k=k,
    )
    if check:
        dc = check_descent_inequality(loss, traj, eta, k)
        rep.descent_violations = dc.violations
        rep.monotonicity_violations = dc.monotonicity_violations
        rep.summability_bound_satisfied = dc.summability_satisfied
        rep.sum_sq_ortho = dc.sum_sq_ortho
        rep.summability_bound = dc.bound
    return rep


@dataclass
class DichotomyReport:
    outcome: str  # stabilized | grad_norm_vanishing | non_convergent
    steps_taken: int
    skip_fired: bool
    final_theta: list[float]
    final_grad_norm: float
    final_alignment: float
    # oscillation diagnostics over the trailing window
    tail_loss_std: float = 0.0
    tail_step_norm_mean: float = 0.0
    tail_alignment_mean: float = 0.0
    loss_trace_len: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def run_renorm_perp(loss: AnalyticLoss, theta0, eta: float, epsilon: float = 1e-30, max_steps: int = 100_000,
                    grad_tol: float = 1e-8, step_tol: float = 1e-12, skip_tol: float = 1e-12,
                    window: int = 200) -> DichotomyReport:
    """Renormalized orthogonalized descent, classified into the three outcomes.

    ``stabilized`` is reported only when the zero-projection skip actually
    fired.  ``grad_norm_vanishing`` needs the gradient norm under ``grad_tol``
    with a step length under ``step_tol``.
    """
    theta = np.array(theta0, dtype=np.float64)
    if not np.linalg.norm(theta) > 0:
        raise ValueError("theta0 must be nonzero")
    losses, steps, aligns = [], [], []
    skip = False
    outcome = "non_convergent"
    n = 0
    for n in range(max_steps + 1):
        grad = loss.grad(theta)
        raw = float(np.linalg.norm(grad))
        g = orthogonalize(theta, grad)
        gn = float(np.linalg.norm(g))
        if gn == 0.0 or gn <= skip_tol * raw:
            skip = True
            outcome = "stabilized"
            break
        if n == max_steps:
            break
        g_hat = renormalize(g, raw, epsilon)
        step_len = eta * float(np.linalg.norm(g_hat))
        if raw < grad_tol and step_len < step_tol:
            outcome = "grad_norm_vanishing"
            break
        theta = theta - eta * g_hat
        losses.append(loss.value(theta))
        steps.append(step_len)
        aligns.append(alignment(grad, theta))
    grad = loss.grad(theta)
    tail = slice(-window, None)
    return DichotomyReport(
        outcome=outcome,
        steps_taken=n,
        skip_fired=skip,
        final_theta=theta.tolist(),
        final_grad_norm=float(np.linalg.norm(grad)),
        final_alignment=alignment(grad, theta),
        tail_loss_std=float(np.std(losses[tail])) if losses else 0.0,
        tail_step_norm_mean=float(np.mean(steps[tail])) if steps else 0.0,
        tail_alignment_mean=float(np.mean(aligns[tail])) if aligns else 0.0,
        loss_trace_len=len(losses),
    )


@dataclass
class BoundaryReport:
    applicable: bool
    match_rate: float | None
    min_alignment: float
    scale_factors: dict[str, float]
    lambdas: dict[str, float]
    n_samples: int
    reason: str = ""

    @property
    def skipped(self) -> bool:
        return not self.applicable


def boundary_stationarity_check(network: Network, X, y, probe_eta: float,
                                grads: list[ParamGroup] | None = None,
                                align_tol: float = 1e-6) -> BoundaryReport:
    """Take one full-gradient step and compare argmax predictions before/after.

    ``grads`` defaults to the true loss gradient at the network's parameters;
    each group must be (anti)parallel to its weights within ``align_tol``.
    """
    if grads is None:
        _, grads = network.loss_and_grad(X, y)
    by_id = {g.group_id: g.grad for g in grads}
    lambdas, factors, aligns = {}, {}, []
    for gid, theta in network.params.items():
        t = theta.ravel()
        g = np.asarray(by_id[gid]).ravel()
        tt = float(t @ t)
        aligns.append(alignment(g, t) if float(g @ g) > 0 else 1.0)
        lam = float(g @ t) / tt if tt > 0 else 0.0
        lambdas[gid] = lam
        factors[gid] = 1.0 - probe_eta * lam
    min_align = min(aligns)
    n = int(np.asarray(X).shape[0])
    if min_align < 1.0 - align_tol:
        return BoundaryReport(False, None, min_align, factors, lambdas, n, "gradient not parallel to weights")
    if any(f <= 0 for f in factors.values()):
        return BoundaryReport(False, None, min_align, factors, lambdas, n, "probe step flips a group's sign")
    before = np.argmax(network.logits(X), axis=1)
    stepped = network.copy()
    for gid in stepped.params:
        shape = stepped.params[gid].shape
        stepped.params[gid] = stepped.params[gid] - probe_eta * np.asarray(by_id[gid]).reshape(shape)
    after = np.argmax(stepped.logits(X), axis=1)
    return BoundaryReport(True, float(np.mean(before == after)), min_align, factors, lambdas, n)


def parallel_gradient_point(network: Network, rng: np.random.Generator, lam_range=(-2.0, 2.0)) -> list[ParamGroup]:
    """Synthetic gradients with grad_P = lambda_P * theta_P for every group."""
    out = []
    for gid, theta in network.params.items():
        lam = float(rng.uniform(*lam_range))
        out.append(ParamGroup(gid, theta.ravel().copy(), lam * theta.ravel(), theta.shape))
    return out
