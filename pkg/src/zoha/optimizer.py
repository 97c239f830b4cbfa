"""The Hessian-aware zeroth-order iteration and its descent-checking variant."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from . import sampling
from .estimator import GradientEstimate, augment_estimate, estimate_central, estimate_forward
from .hessian import (
    DiagState,
    HessianModel,
    IdentityModel,
    PowerMethodConfig,
    diag_adagrad_update,
    diag_adam_update,
    gauss_sampling_approx,
    power_method_approx,
)
from .oracle import BudgetExceeded, ObjectiveSpec, QueryLedger, evaluate
from .sampling import GaussianSampler


# -- constraint ------------------------------------------------------------

@dataclass
class BoxConstraint:
    """L-infinity ball around ``center`` intersected with optional bounds."""

    center: np.ndarray
    radius: float
    lower: Optional[Union[float, np.ndarray]] = None
    upper: Optional[Union[float, np.ndarray]] = None

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float).copy()
        if not self.radius >= 0:
            raise ValueError("radius must be >= 0")
        lo, hi = self.bounds()
        if np.any(lo > hi):
            raise ValueError("box constraint has an empty feasible set")

    def bounds(self):
        lo = self.center - self.radius
        hi = self.center + self.radius
        if self.lower is not None:
            lo = np.maximum(lo, self.lower)
        if self.upper is not None:
            hi = np.minimum(hi, self.upper)
        return lo, hi

    def feasible_mask(self, x) -> np.ndarray:
        ok = np.abs(x - self.center) <= self.radius
        if self.lower is not None:
            ok &= x >= self.lower
        if self.upper is not None:
            ok &= x <= self.upper
        return ok


def is_feasible(x, c: BoxConstraint) -> bool:
    return bool(np.all(c.feasible_mask(np.asarray(x, dtype=float))))


def project_box(x, c: BoxConstraint) -> np.ndarray:
    """Coordinate-wise clamp; the result passes ``is_feasible`` bit-exactly.

    x0 +/- eps is rounded, so a clamped coordinate can sit one ulp outside
    ``|x - x0| <= eps``; such coordinates are stepped toward x0.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != c.center.shape:
        raise ValueError(f"expected shape {c.center.shape}, got {x.shape}")
    lo, hi = c.bounds()
    out = np.where(c.feasible_mask(x), x, np.clip(x, lo, hi))
    for _ in range(64):
        above = out - c.center > c.radius
        below = c.center - out > c.radius
        if not (above.any() or below.any()):
            break
        out = np.where(above, np.nextafter(out, -np.inf), out)
        out = np.where(below, np.nextafter(out, np.inf), out)
    return out


# -- configuration ---------------------------------------------------------

@dataclass
class IdentityBackend:
    kind = "identity"


@dataclass
class PowerBackend:
    config: PowerMethodConfig = field(default_factory=PowerMethodConfig)
    warm_start: bool = True
    kind = "power"


@dataclass
class GaussBackend:
    b_H: int = 20
    mu_H: float = 0.5
    lam: Union[float, str] = "auto"
    abs_mode: bool = False
    kind = "gauss"


@dataclass
class AdamBackend:
    nu: float = 0.85
    floor: float = 1e-8
    kind = "adam"


@dataclass
class AdagradBackend:
    floor: float = 1e-8
    kind = "adagrad"


Backend = Union[IdentityBackend, PowerBackend, GaussBackend, AdamBackend, AdagradBackend]


@dataclass
class DescentCheck:
    beta: int
    delta_b: int

    def __post_init__(self):
        if self.delta_b < 1:
            raise ValueError("delta_b must be >= 1")


@dataclass
class SolverConfig:
    mu: float = 0.01
    b: int = 10
    eta: Union[float, str] = "local"  # a positive float (fixed), "local" or "global"
    p: int = 1
    max_iters: int = 10_000
    max_queries: int = 1_000_000
    backend: Backend = field(default_factory=IdentityBackend)
    estimator: str = "forward"
    dc: Optional[DescentCheck] = None
    constraint: Optional[BoxConstraint] = None
    seed: int = 0
    target: Optional[float] = None  # stop once f - f* <= target * (f(x0) - f*)

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError("mu must be positive")
        if self.b < 1:
            raise ValueError("b must be >= 1")
        if self.p < 1:
            raise ValueError("p must be >= 1")
        if not self.max_queries > 0:
            raise ValueError("max_queries must be positive")
        if self.estimator not in ("forward", "central"):
            raise ValueError("estimator must be 'forward' or 'central'")
        if isinstance(self.eta, str):
            if self.eta not in ("local", "global"):
                raise ValueError(f"unknown step-size schedule {self.eta!r}")
        elif not self.eta > 0:
            raise ValueError("a fixed step size must be positive")
        if self.dc is not None and self.dc.beta < self.b:
            raise ValueError("descent-check ceiling beta must be >= b")


def step_size(schedule, d: int, b: int, zeta: Optional[float] = None, L: Optional[float] = None) -> float:
    """``local``: b / (16 (d + 2)); ``global``: zeta / (4 (d + 2) L); a number is returned as-is."""
    if schedule == "local":
        return b / (16.0 * (d + 2))
    if schedule == "global":
        if L is None:
            raise ValueError("the global schedule needs the smoothness constant L")
        if zeta is None:
            raise ValueError("the global schedule needs zeta from the current model")
        return zeta / (4.0 * (d + 2) * L)
    if isinstance(schedule, str):
        raise ValueError(f"unknown step-size schedule {schedule!r}")
    return float(schedule)


# -- results ---------------------------------------------------------------

@dataclass
class IterationRecord:
    iter: int
    f_value: float  # f at the iterate entering this iteration (nan if never queried)
    queries_cumulative: int  # ledger total when the iteration ended
    n_samples_used: int
    hessian_refreshed: bool
    dc_rounds: int = 0
    forced_accept: bool = False


@dataclass
class RunResult:
    best_point: np.ndarray
    best_value: float
    final_point: np.ndarray
    trace: list
    ledger: dict
    terminated_by: str  # accuracy | iters | queries | success
    model: Optional[HessianModel] = None

    @property
    def queries(self) -> int:
        return self.ledger["total_queries"]


# -- main loop -------------------------------------------------------------

class _HessianState:
    def __init__(self, obj, cfg):
        self.obj, self.cfg = obj, cfg
        self.backend = cfg.backend
        self.model: HessianModel = IdentityModel(obj.dimension)
        self.diag = None
        self.V_prev = None
        if isinstance(self.backend, AdamBackend):
            self.diag = DiagState.zeros(obj.dimension, self.backend.nu, self.backend.floor)
        elif isinstance(self.backend, AdagradBackend):
            self.diag = DiagState.zeros(obj.dimension, 1.0, self.backend.floor)

    def refresh(self, t, x, ledger) -> bool:
        be = self.backend
        if t % self.cfg.p:
            return False
        if isinstance(be, PowerBackend):
            pcfg = be.config
            if be.warm_start and self.V_prev is not None:
                pcfg = PowerMethodConfig(**{**pcfg.__dict__, "V0": self.V_prev})
            sampler = GaussianSampler(self.cfg.seed, (sampling.POWER_START, t))
            self.model, diag = power_method_approx(self.obj, x, pcfg, ledger, sampler)
            self.V_prev = diag.V_T
            return True
        if isinstance(be, GaussBackend):
            sampler = GaussianSampler(self.cfg.seed, (sampling.HESSIAN, t))
            self.model = gauss_sampling_approx(
                self.obj, x, be.b_H, be.mu_H, be.lam, be.abs_mode, ledger, sampler
            )
            return True
        return False

    def after_step(self, est: GradientEstimate):
        if isinstance(self.backend, AdamBackend):
            self.diag, self.model = diag_adam_update(self.diag, est)
        elif isinstance(self.backend, AdagradBackend):
            self.diag, self.model = diag_adagrad_update(self.diag, est)


def run(
    obj: ObjectiveSpec,
    x0,
    cfg: SolverConfig,
    callback: Optional[Callable[[int, np.ndarray, float], bool]] = None,
    executor=None,
) -> RunResult:
    """ZO-HessAware; with ``cfg.dc`` set this is the descent-checking variant.

    ``callback(t, x_t, f(x_t))`` is invoked whenever the value of an
    accepted iterate is known; returning True stops the run with
    ``terminated_by == "success"``.
    """
    x = np.array(x0, dtype=float)
    d = obj.dimension
    if x.shape != (d,):
        raise ValueError(f"x0 must have shape ({d},)")
    con = cfg.constraint
    if con is not None and not is_feasible(x, con):
        raise ValueError("x0 violates the box constraint")

    ledger = QueryLedger(cap=cfg.max_queries)
    hstate = _HessianState(obj, cfg)
    meta = obj.metadata
    f_star = meta.optimum_value
    want_value = cfg.estimator == "forward" or cfg.dc is not None or callback is not None or (
        cfg.target is not None and f_star is not None
    )

    trace = []
    best_x, best_f = x.copy(), np.inf
    f0 = None
    fx_next = None
    terminated = "iters"
    t = 0
    while True:
        if t >= cfg.max_iters:
            terminated = "iters"
            break
        fx = fx_next
        refreshed = False
        try:
            if fx is None and want_value:
                phase = "gradient" if cfg.estimator == "forward" else "monitor"
                fx = evaluate(obj, x, ledger, phase)
            if fx is not None:
                if f0 is None:
                    f0 = fx
                if fx < best_f:
                    best_x, best_f = x.copy(), fx
                stop = None
                if cfg.target is not None and f_star is not None and fx - f_star <= cfg.target * (f0 - f_star):
                    stop = "accuracy"
                elif callback is not None and callback(t, x, fx):
                    stop = "success"
                if stop:
                    trace.append(IterationRecord(t, fx, ledger.total_queries, 0, False))
                    terminated = stop
                    break

            refreshed = hstate.refresh(t, x, ledger)
            model = hstate.model
            eta = step_size(cfg.eta, d, cfg.b, model.min_eigenvalue(), meta.smoothness)
            sampler = GaussianSampler(cfg.seed, (sampling.GRADIENT, t))
            if cfg.estimator == "forward":
                est = estimate_forward(obj, x, cfg.mu, cfg.b, model, sampler, ledger, fx=fx, executor=executor)
            else:
                est = estimate_central(obj, x, cfg.mu, cfg.b, model, sampler, ledger, executor=executor)

            y = x - eta * est.direction
            if con is not None:
                y = project_box(y, con)
            rounds, forced, fy = 0, False, None
            if cfg.dc is not None:
                fy = evaluate(obj, y, ledger, "descent_check")
                while fy > fx and est.n_samples < cfg.dc.beta:
                    est = augment_estimate(est, obj, x, cfg.dc.delta_b, model, sampler, ledger, executor)
                    y = x - eta * est.direction
                    if con is not None:
                        y = project_box(y, con)
                    fy = evaluate(obj, y, ledger, "descent_check")
                    rounds += 1
                forced = fy > fx
        except BudgetExceeded:
            if fx is not None:
                trace.append(IterationRecord(t, fx, ledger.total_queries, 0, refreshed))
            terminated = "queries"
            break

        hstate.after_step(est)
        trace.append(
            IterationRecord(
                t,
                fx if fx is not None else float("nan"),
                ledger.total_queries,
                est.n_samples,
                refreshed,
                rounds,
                forced,
            )
        )
        x = y
        fx_next = fy
        t += 1

    if not np.isfinite(best_f):
        best_x, best_f = x.copy(), float("nan")
    return RunResult(
        best_point=best_x,
        best_value=float(best_f),
        final_point=x,
        trace=trace,
        ledger=ledger.snapshot(),
        terminated_by=terminated,
        model=hstate.model,
    )


def run_dc(obj: ObjectiveSpec, x0, cfg: SolverConfig, callback=None, executor=None) -> RunResult:
    if cfg.dc is None:
        raise ValueError("run_dc needs cfg.dc to be set")
    return run(obj, x0, cfg, callback, executor)
