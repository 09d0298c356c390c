"""Constrained TV-L2 restoration.

Solves ``min TV(u)  s.t.  ||A u - v||_2 <= eps`` with ``eps = sigma sqrt(n)``
by a first-order primal-dual iteration with fixed steps. The dual variable
of the TV term lives in the pointwise unit ball; the dual variable of the
fidelity term is updated through the closed-form prox of the ball's
conjugate (a shrinkage around ``kappa v``).

``A`` is anything with ``apply`` and ``adjoint`` methods; a
:class:`~wavblur.thetaop.SparseTheta` is wrapped automatically.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, FormatError, InfeasibleWarning
from .imagecore import gaussian_samples
from .kvfile import read_kv
from .thetaop import SparseTheta, apply_theta, apply_theta_adjoint

logger = logging.getLogger(__name__)

GRAD_NORM_SQ = 8.0  # ||grad||^2 bound for periodic forward differences in 2D
EPS_FLOOR = 1e-6


def grad(u):
    return np.stack([np.roll(u, -1, axis=0) - u, np.roll(u, -1, axis=1) - u])


def grad_adjoint(p):
    return (np.roll(p[0], 1, axis=0) - p[0]) + (np.roll(p[1], 1, axis=1) - p[1])


def tv_value(img) -> float:
    """Isotropic TV with periodic forward differences."""
    g = grad(np.asarray(img, dtype=np.float64))
    return float(np.sqrt(g[0] ** 2 + g[1] ** 2).sum())


class ThetaOperator:
    """``W^T Theta W`` with the apply/adjoint interface the solver expects."""

    def __init__(self, theta: SparseTheta):
        self.theta = theta
        self.shape = theta.shape

    def apply(self, u):
        return apply_theta(self.theta, u)

    def adjoint(self, u):
        return apply_theta_adjoint(self.theta, u)


def as_operator(op):
    return ThetaOperator(op) if isinstance(op, SparseTheta) else op


def estimate_operator_norm(op, shape=None, iters: int = 30, seed: int = 0) -> float:
    """Power iteration on A^T A; returns sqrt(lambda_max) inflated by 5%."""
    if iters < 10:
        raise ValueError("use at least 10 power iterations")
    op = as_operator(op)
    shape = tuple(shape or op.shape)
    u = gaussian_samples(math.prod(shape), seed).reshape(shape)
    u /= np.linalg.norm(u)
    lam = 0.0
    for _ in range(iters):
        w = op.adjoint(op.apply(u))
        nw = np.linalg.norm(w)
        if nw == 0:
            return 0.0
        lam = nw
        u = w / nw
    return 1.05 * math.sqrt(lam)


@dataclass
class SolverConfig:
    sigma_noise: float
    max_iters: int = 3000
    tol: float = 1e-4
    tau: float | None = None
    kappa: float | None = None
    operator_norm: float | None = None
    check_every: int = 10
    step_ratio: float = 1e-3  # tau / kappa when neither step is given

    def __post_init__(self):
        if self.step_ratio <= 0:
            raise ValueError("step_ratio must be positive")

    def radius(self, npix: int) -> float:
        return max(self.sigma_noise * math.sqrt(npix), EPS_FLOOR)

    def steps(self, op_norm: float):
        total = GRAD_NORM_SQ + op_norm**2
        tau = self.tau
        kappa = self.kappa
        if tau is None and kappa is None:
            # a large dual step on the ball constraint reaches feasibility far sooner than tau = kappa
            r = math.sqrt(self.step_ratio)
            tau, kappa = 0.99 * r / math.sqrt(total), 0.99 / (r * math.sqrt(total))
        elif tau is None:
            tau = 0.99 / (kappa * total)
        elif kappa is None:
            kappa = 0.99 / (tau * total)
        if tau * kappa * total > 1 + 1e-12:
            raise ValueError(f"steps violate tau*kappa*L^2 <= 1 (got {tau * kappa * total:.4g})")
        return tau, kappa


def load_solver_config(path, **overrides) -> SolverConfig:
    kv = read_kv(path)
    conv = {"sigma_noise": float, "max_iters": int, "tol": float, "tau": float, "kappa": float,
            "operator_norm": float, "check_every": int, "step_ratio": float}
    extra = set(kv) - set(conv)
    if extra:
        raise FormatError(f"unknown solver keys: {sorted(extra)}")
    try:
        args = {k: conv[k](v) for k, v in kv.items()}
    except ValueError as exc:
        raise FormatError(f"bad solver config {path}: {exc}") from exc
    args.update({k: v for k, v in overrides.items() if v is not None})
    if "sigma_noise" not in args:
        raise FormatError("solver config needs sigma_noise")
    return SolverConfig(**args)


@dataclass
class RestoreResult:
    image: np.ndarray
    iterations: int
    residual: float  # ||A u - v||_2
    radius: float
    tv: float
    converged: bool
    infeasible: bool = False
    history: list = field(default_factory=list)  # (iteration, tv, residual) every 50 iterations
    tol: float = 0.0

    @property
    def feasible(self) -> bool:
        return self.residual**2 <= self.radius**2 * (1 + self.tol)


def restore(v, op, cfg: SolverConfig, *, plateau: int = 200) -> RestoreResult:
    """Primal-dual solve of the constrained TV-L2 problem."""
    op = as_operator(op)
    v = np.asarray(v, dtype=np.float64)
    if hasattr(op, "shape") and tuple(op.shape) != v.shape:
        raise DimensionError(f"image shape {v.shape} does not match operator shape {op.shape}")
    eps = cfg.radius(v.size)
    op_norm = cfg.operator_norm if cfg.operator_norm is not None else estimate_operator_norm(op, v.shape)
    tau, kappa = cfg.steps(op_norm)

    u = v.copy()
    ubar = u.copy()
    p = np.zeros((2,) + v.shape)
    q = np.zeros_like(v)
    history = []
    stalled = []
    converged = infeasible = False
    residual = float(np.linalg.norm(op.apply(u) - v))
    it = 0
    for it in range(1, cfg.max_iters + 1):
        p += kappa * grad(ubar)
        p /= np.maximum(1.0, np.sqrt(p[0] ** 2 + p[1] ** 2))
        y = q + kappa * (op.apply(ubar) - v)
        ny = np.linalg.norm(y)
        q = y * max(0.0, 1.0 - kappa * eps / ny) if ny > 0 else y
        u_new = u - tau * (grad_adjoint(p) + op.adjoint(q))
        ubar = 2.0 * u_new - u
        change = np.linalg.norm(u_new - u) / max(np.linalg.norm(u_new), 1e-300)
        u = u_new

        if it % cfg.check_every == 0 or it == cfg.max_iters:
            residual = float(np.linalg.norm(op.apply(u) - v))
            if it % 50 == 0:
                history.append((it, tv_value(u), residual))
            feasible = residual**2 <= eps**2 * (1 + cfg.tol)
            if change < cfg.tol and feasible:
                converged = True
                break
            stalled.append(residual)
            window = plateau // cfg.check_every
            if len(stalled) >= window:
                recent = stalled[-window:]
                above = min(recent) > 1.05 * eps
                flat = (max(recent) - min(recent)) <= 1e-3 * max(recent)
                if above and flat:
                    infeasible = True
                    warnings.warn(
                        f"residual {residual:.4g} stalled above the radius {eps:.4g}; "
                        "the constraint looks infeasible",
                        InfeasibleWarning,
                        stacklevel=2,
                    )
                    break
    residual = float(np.linalg.norm(op.apply(u) - v))
    logger.info("restore: %d iterations, residual %.4g (radius %.4g), converged=%s", it, residual, eps, converged)
    return RestoreResult(u, it, residual, eps, tv_value(u), converged, infeasible, history, cfg.tol)
