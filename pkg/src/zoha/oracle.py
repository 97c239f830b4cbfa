"""Black-box objectives, query accounting and finite-difference probes.

Everything in this package touches the objective only through
:func:`evaluate` / :func:`evaluate_batch`, so the :class:`QueryLedger`
attached to a run is an exact count of oracle calls.
"""
from __future__ import annotations

import math
import shlex
import subprocess
import threading
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

PHASES = (
    "gradient",
    "hessian",
    "descent_check",
    "line_search",
    "attack_check",
    "monitor",
    "smoothing",
)


class OracleError(ValueError):
    """Invalid query point or invalid oracle answer."""


class NonFiniteValueError(OracleError):
    pass


class BudgetExceeded(RuntimeError):
    """Raised before a query that would take the ledger past its cap."""


@dataclass
class ObjectiveMetadata:
    """Analytic facts about an objective, used only for verification."""

    smoothness: Optional[float] = None
    strong_convexity: Optional[float] = None
    hessian_lipschitz: Optional[float] = None
    optimum_value: Optional[float] = None
    optimum_point: Optional[np.ndarray] = None
    true_hessian_at: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        L, tau = self.smoothness, self.strong_convexity
        if L is not None and L <= 0:
            raise ValueError("smoothness must be positive")
        if tau is not None and tau <= 0:
            raise ValueError("strong convexity must be positive")
        if L is not None and tau is not None and tau > L * (1 + 1e-12):
            raise ValueError(f"inconsistent metadata: tau={tau} > L={L}")
        if self.hessian_lipschitz is not None and self.hessian_lipschitz < 0:
            raise ValueError("hessian_lipschitz must be >= 0")

    @property
    def condition_number(self) -> Optional[float]:
        if self.smoothness is None or self.strong_convexity is None:
            return None
        return self.smoothness / self.strong_convexity


@dataclass
class ObjectiveSpec:
    dimension: int
    evaluator: Callable[[np.ndarray], float]
    metadata: ObjectiveMetadata = field(default_factory=ObjectiveMetadata)
    name: str = "objective"

    def __post_init__(self):
        if int(self.dimension) != self.dimension or self.dimension < 1:
            raise ValueError("dimension must be a positive integer")
        self.dimension = int(self.dimension)


class QueryLedger:
    """Thread-safe counter of oracle evaluations, split by phase.

    ``cap`` is an optional hard budget: a reservation that would take
    ``total_queries`` past it raises :class:`BudgetExceeded` and charges
    nothing.
    """

    def __init__(self, cap: Optional[int] = None):
        self._lock = threading.Lock()
        self._counts: Counter = Counter()
        self.cap = cap

    @property
    def total_queries(self) -> int:
        with self._lock:
            return sum(self._counts.values())

    @property
    def per_phase(self) -> dict:
        with self._lock:
            return dict(self._counts)

    def remaining(self) -> Optional[int]:
        if self.cap is None:
            return None
        return self.cap - self.total_queries

    def charge(self, phase: str, n: int = 1) -> None:
        if phase not in PHASES:
            raise ValueError(f"unknown ledger phase {phase!r}")
        if n < 0:
            raise ValueError("cannot charge a negative number of queries")
        if n == 0:
            return
        with self._lock:
            total = sum(self._counts.values())
            if self.cap is not None and total + n > self.cap:
                raise BudgetExceeded(
                    f"{n} more queries would exceed the cap of {self.cap} (used {total})"
                )
            self._counts[phase] += n

    def snapshot(self) -> dict:
        with self._lock:
            counts = dict(self._counts)
        return {"total_queries": sum(counts.values()), "per_phase": counts}

    def __repr__(self):
        snap = self.snapshot()
        return f"QueryLedger(total={snap['total_queries']}, per_phase={snap['per_phase']})"


def _check_point(obj: ObjectiveSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (obj.dimension,):
        raise OracleError(f"expected a point of shape ({obj.dimension},), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise OracleError("query point contains non-finite entries")
    return x


def _call(obj: ObjectiveSpec, x: np.ndarray) -> float:
    value = float(obj.evaluator(x))
    if not math.isfinite(value):
        raise NonFiniteValueError(
            f"{obj.name} returned {value!r}; aborting instead of propagating it"
        )
    return value


def evaluate(obj: ObjectiveSpec, x, ledger: QueryLedger, phase: str = "gradient") -> float:
    x = _check_point(obj, x)
    ledger.charge(phase, 1)
    return _call(obj, x)


def evaluate_batch(
    obj: ObjectiveSpec,
    points: Sequence,
    ledger: QueryLedger,
    phase: str = "gradient",
    executor=None,
) -> list:
    """Evaluate many points; validation and charging are all-or-nothing.

    ``executor`` may be any ``concurrent.futures.Executor``; results come
    back in input order either way.
    """
    if isinstance(points, np.ndarray) and points.ndim == 2 and points.dtype == float:
        # fast path: validate the whole array at once
        if points.shape[1] != obj.dimension:
            raise OracleError(f"expected points of dimension {obj.dimension}, got {points.shape[1]}")
        if not np.all(np.isfinite(points)):
            raise OracleError("query point contains non-finite entries")
        checked = list(points)
    else:
        checked = [_check_point(obj, p) for p in points]
    if not checked:
        return []
    ledger.charge(phase, len(checked))
    if executor is None:
        return [_call(obj, p) for p in checked]
    return list(executor.map(lambda p: _call(obj, p), checked))


def hvp_fd(obj: ObjectiveSpec, x, v, mu1: float, ledger: QueryLedger) -> np.ndarray:
    """Finite-difference Hessian-vector product, 4*d queries.

    Entry i is
    ``[f(x+mu1(v+e_i)) - f(x+mu1(v-e_i)) + f(x-mu1 e_i) - f(x+mu1 e_i)] / (2 mu1^2)``,
    exact (up to rounding) when f is quadratic. The axis values
    f(x +/- mu1 e_i) do not depend on v and could be cached across calls
    at the same x; they are re-queried here so that every call costs
    exactly 4d.
    """
    if not mu1 > 0:
        raise ValueError("mu1 must be positive")
    x = _check_point(obj, x)
    v = np.asarray(v, dtype=float)
    if v.shape != x.shape or not np.all(np.isfinite(v)):
        raise OracleError("v must be a finite vector with the shape of x")
    d = obj.dimension
    eye = np.eye(d)
    points = []
    for i in range(d):
        e = eye[i]
        points.extend(
            (x + mu1 * (v + e), x + mu1 * (v - e), x - mu1 * e, x + mu1 * e)
        )
    vals = np.asarray(evaluate_batch(obj, points, ledger, "hessian")).reshape(d, 4)
    return (vals[:, 0] - vals[:, 1] + vals[:, 2] - vals[:, 3]) / (2.0 * mu1 * mu1)


def smoothed_value_mc(
    obj: ObjectiveSpec,
    x,
    mu: float,
    n_samples: int,
    seed: int,
    ledger: Optional[QueryLedger] = None,
    return_stderr: bool = False,
):
    """Monte-Carlo estimate of the Gaussian smoothing E f(x + mu u).

    Test helper; queries go to the ``smoothing`` phase.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    ledger = ledger if ledger is not None else QueryLedger()
    x = _check_point(obj, x)
    if mu == 0:
        value = evaluate(obj, x, ledger, "smoothing")
        return (value, 0.0) if return_stderr else value
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0x5E00,)))
    u = rng.standard_normal((n_samples, obj.dimension))
    vals = np.asarray(evaluate_batch(obj, x + mu * u, ledger, "smoothing"))
    mean = float(vals.mean())
    if not return_stderr:
        return mean
    se = float(vals.std(ddof=1) / np.sqrt(n_samples)) if n_samples > 1 else float("inf")
    return mean, se


class SubprocessOracle:
    """Evaluator backed by a child process speaking a line protocol.

    Each query writes one line of ``d`` space-separated decimals to the
    child's stdin and reads one decimal from its stdout. Calls are
    serialized because the pipe is shared.
    """

    def __init__(self, command, dimension: int):
        if isinstance(command, str):
            command = shlex.split(command)
        self.command = list(command)
        self.dimension = int(dimension)
        self._lock = threading.Lock()
        self._proc = subprocess.Popen(
            self.command,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )

    def __call__(self, x: np.ndarray) -> float:
        line = " ".join(repr(float(v)) for v in x) + "\n"
        with self._lock:
            if self._proc.poll() is not None:
                raise OracleError(f"oracle process exited with code {self._proc.returncode}")
            self._proc.stdin.write(line)
            self._proc.stdin.flush()
            reply = self._proc.stdout.readline()
        if not reply:
            raise OracleError("oracle process closed its output")
        try:
            return float(reply.strip())
        except ValueError:
            raise OracleError(f"oracle replied with a non-number: {reply.strip()!r}") from None

    def close(self):
        if self._proc.poll() is None:
            self._proc.stdin.close()
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def objective(self, name: str = "subprocess") -> ObjectiveSpec:
        return ObjectiveSpec(self.dimension, self, name=name)
