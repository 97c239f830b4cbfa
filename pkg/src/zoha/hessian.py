"""Approximate Hessians H~ in factored, positive-definite form.

Three model shapes share one interface (``apply_inv_sqrt`` / ``apply_inv``):

* :class:`IdentityModel` - no curvature information (vanilla ZO).
* :class:`DiagonalModel` - ADAM / ADAGRAD style accumulators.
* :class:`LowRankPlusShift` - ``U diag(e) U^T + shift * I``, built either by
  a finite-difference power method or by Gaussian second differences.

Vectors are applied along the last axis, so a ``(n, d)`` array is treated
as ``n`` row vectors.
"""
from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional, Union

import numpy as np

from .oracle import ObjectiveSpec, QueryLedger, evaluate, evaluate_batch, hvp_fd
from .sampling import GaussianSampler


class HessianModel:
    variant = "abstract"
    dimension: int

    def apply(self, v):
        raise NotImplementedError

    def apply_inv(self, v):
        raise NotImplementedError

    def apply_inv_sqrt(self, v):
        raise NotImplementedError

    def min_eigenvalue(self) -> float:
        raise NotImplementedError

    def _params(self) -> tuple:
        return ()

    def fingerprint(self) -> str:
        h = hashlib.sha1(f"{self.variant}:{self.dimension}".encode())
        for arr in self._params():
            h.update(np.ascontiguousarray(arr, dtype=float).tobytes())
        return h.hexdigest()

    def to_dense(self) -> np.ndarray:
        return self.apply(np.eye(self.dimension))

    def _check(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.shape[-1] != self.dimension:
            raise ValueError(f"expected trailing dimension {self.dimension}, got {v.shape}")
        return v


class IdentityModel(HessianModel):
    variant = "identity"

    def __init__(self, dimension: int):
        self.dimension = int(dimension)

    def apply(self, v):
        return self._check(v).copy()

    apply_inv = apply
    apply_inv_sqrt = apply

    def min_eigenvalue(self) -> float:
        return 1.0

    def __repr__(self):
        return f"IdentityModel(d={self.dimension})"


class DiagonalModel(HessianModel):
    variant = "diagonal"

    def __init__(self, entries):
        entries = np.asarray(entries, dtype=float).copy()
        if entries.ndim != 1 or entries.size == 0:
            raise ValueError("diagonal entries must be a non-empty vector")
        if not np.all(np.isfinite(entries)) or np.any(entries <= 0):
            raise ValueError("diagonal entries must be finite and positive")
        self.entries = entries
        self.dimension = entries.size

    def apply(self, v):
        return self._check(v) * self.entries

    def apply_inv(self, v):
        return self._check(v) / self.entries

    def apply_inv_sqrt(self, v):
        return self._check(v) / np.sqrt(self.entries)

    def min_eigenvalue(self) -> float:
        return float(self.entries.min())

    def _params(self):
        return (self.entries,)

    def __repr__(self):
        return f"DiagonalModel(d={self.dimension}, min={self.entries.min():.3g}, max={self.entries.max():.3g})"


class LowRankPlusShift(HessianModel):
    """H~ = U diag(eigvals) U^T + shift * I with column-orthonormal U."""

    variant = "lowrank"

    def __init__(self, basis, eigvals, shift: float):
        U = np.asarray(basis, dtype=float)
        if U.ndim == 1:
            U = U[:, None]
        e = np.asarray(eigvals, dtype=float).reshape(-1)
        if U.shape[1] != e.size:
            raise ValueError("basis has %d columns but %d eigenvalues were given" % (U.shape[1], e.size))
        if not shift > 0 or not np.isfinite(shift):
            raise ValueError("shift must be a positive finite number")
        if np.any(e < 0) or not np.all(np.isfinite(e)):
            raise ValueError("low-rank eigenvalues must be finite and non-negative")
        if e.size and np.abs(U.T @ U - np.eye(e.size)).max() > 1e-8:
            raise ValueError("basis columns are not orthonormal")
        self.basis = U.copy()
        self.eigvals = e.copy()
        self.shift = float(shift)
        self.dimension = U.shape[0]

    @classmethod
    def from_factor(cls, C, shift: float, rtol: float = 1e-12) -> "LowRankPlusShift":
        """Model for ``C C^T + shift * I`` (C is d x m)."""
        C = np.asarray(C, dtype=float)
        d, m = C.shape
        if m == 0 or not np.any(C):
            return cls(np.zeros((d, 0)), np.zeros(0), shift)
        if m >= d:
            w, V = np.linalg.eigh(C @ C.T)
            order = np.argsort(w)[::-1]
            w, V = np.clip(w[order], 0.0, None), V[:, order]
            keep = w > rtol**2 * w[0] if w[0] > 0 else np.zeros_like(w, dtype=bool)
            return cls(V[:, keep], w[keep], shift)
        U, s, _ = np.linalg.svd(C, full_matrices=False)
        keep = s > rtol * s[0]
        return cls(U[:, keep], s[keep] ** 2, shift)

    @property
    def rank(self) -> int:
        return self.eigvals.size

    def _spectral(self, v, scale_low, scale_shift):
        v = self._check(v)
        if v.ndim == 2:
            # row-by-row keeps each result independent of the batch size
            return np.stack([self._spectral(row, scale_low, scale_shift) for row in v]) if len(v) else v.copy()
        out = scale_shift * v
        if self.rank:
            out = out + self.basis @ ((scale_low - scale_shift) * (self.basis.T @ v))
        return out

    def apply(self, v):
        return self._spectral(v, self.eigvals + self.shift, self.shift)

    def apply_inv(self, v):
        return self._spectral(v, 1.0 / (self.eigvals + self.shift), 1.0 / self.shift)

    def apply_inv_sqrt(self, v):
        return self._spectral(v, 1.0 / np.sqrt(self.eigvals + self.shift), 1.0 / np.sqrt(self.shift))

    def min_eigenvalue(self) -> float:
        if self.rank < self.dimension:
            return self.shift
        return float(self.shift + self.eigvals.min())

    def _params(self):
        return (self.basis, self.eigvals, np.array([self.shift]))

    def __repr__(self):
        top = ", ".join(f"{v:.4g}" for v in self.eigvals[:4])
        return f"LowRankPlusShift(d={self.dimension}, r={self.rank}, eigvals=[{top}{', ...' if self.rank > 4 else ''}], shift={self.shift:.4g})"


def apply_inv_sqrt(model: HessianModel, v):
    return model.apply_inv_sqrt(v)


def apply_inv(model: HessianModel, v):
    return model.apply_inv(v)


# -- serialization ---------------------------------------------------------

def dumps_model(model: HessianModel) -> str:
    """Flat text form: a header line ``<tag> <d> [<r>]`` then reals.

    diagonal: the d entries. lowrank: shift, the r eigenvalues, then U
    row-major (d lines of r values).
    """
    fmt = lambda a: " ".join(repr(float(x)) for x in np.ravel(a))
    if isinstance(model, IdentityModel):
        return f"identity {model.dimension}\n"
    if isinstance(model, DiagonalModel):
        return f"diagonal {model.dimension}\n{fmt(model.entries)}\n"
    if isinstance(model, LowRankPlusShift):
        lines = [f"lowrank {model.dimension} {model.rank}", repr(model.shift), fmt(model.eigvals)]
        lines += [fmt(row) for row in model.basis]
        return "\n".join(lines) + "\n"
    raise TypeError(f"cannot serialize {type(model).__name__}")


def loads_model(text: str) -> HessianModel:
    tokens = text.split()
    if not tokens:
        raise ValueError("empty model text")
    tag = tokens[0]
    try:
        if tag == "identity":
            return IdentityModel(int(tokens[1]))
        if tag == "diagonal":
            d = int(tokens[1])
            vals = np.array([float(t) for t in tokens[2:]])
            if vals.size != d:
                raise ValueError(f"diagonal model declares d={d} but has {vals.size} entries")
            return DiagonalModel(vals)
        if tag == "lowrank":
            d, r = int(tokens[1]), int(tokens[2])
            vals = np.array([float(t) for t in tokens[3:]])
            if vals.size != 1 + r + d * r:
                raise ValueError(f"lowrank model expects {1 + r + d * r} reals, found {vals.size}")
            shift, eig, U = vals[0], vals[1:1 + r], vals[1 + r:].reshape(d, r)
            return LowRankPlusShift(U, eig, shift)
    except IndexError:
        raise ValueError("truncated model header") from None
    raise ValueError(f"unknown model tag {tag!r}")


# -- diagonal accumulators -------------------------------------------------

@dataclass
class DiagState:
    D: np.ndarray
    t: int = 0
    nu: float = 0.85
    floor: float = 1e-8

    def __post_init__(self):
        self.D = np.asarray(self.D, dtype=float)
        if np.any(self.D < 0):
            raise ValueError("second-moment accumulator must be non-negative")
        if not 0.0 <= self.nu <= 1.0:
            raise ValueError(f"nu must lie in [0, 1], got {self.nu}")
        if not self.floor > 0:
            raise ValueError("floor must be positive")

    @classmethod
    def zeros(cls, d: int, nu: float = 0.85, floor: float = 1e-8) -> "DiagState":
        return cls(np.zeros(d), 0, nu, floor)


def _direction(g):
    return np.asarray(getattr(g, "direction", g), dtype=float)


def diag_adam_update(state: DiagState, estimate) -> tuple:
    """EMA of the squared natural gradient with bias correction."""
    if not 0.0 <= state.nu <= 1.0:
        raise ValueError(f"nu must lie in [0, 1], got {state.nu}")
    g = _direction(estimate)
    t = state.t + 1
    D = state.nu * state.D + (1.0 - state.nu) * g * g
    correction = 1.0 - state.nu**t
    scaled = D / correction if correction > 0 else D
    new = replace(state, D=D, t=t)
    return new, DiagonalModel(np.maximum(scaled, state.floor))


def diag_adagrad_update(state: DiagState, estimate) -> tuple:
    """Running mean of the squared natural gradient (normalizer = update count)."""
    g = _direction(estimate)
    t = state.t + 1
    D = state.D + g * g
    new = replace(state, D=D, t=t)
    return new, DiagonalModel(np.maximum(D / t, state.floor))


# -- power method ----------------------------------------------------------

@dataclass
class PowerMethodConfig:
    k: int = 2
    T: int = 10
    mu1: float = 1e-2
    shift_multiplier: float = 5.0
    V0: Optional[np.ndarray] = None
    residual_probes: int = 3

    def __post_init__(self):
        if self.k < 1 or self.T < 1:
            raise ValueError("power method needs k >= 1 and T >= 1")
        if not self.mu1 > 0:
            raise ValueError("mu1 must be positive")
        if not self.shift_multiplier > 0:
            raise ValueError("shift_multiplier must be positive")
        if self.residual_probes < 1:
            raise ValueError("residual_probes must be >= 1")

    def query_cost(self, d: int) -> int:
        probes = self.residual_probes if self.k < d else 0
        return 4 * d * (self.k * (self.T + 1) + probes)


@dataclass
class PowerDiagnostics:
    lambda_next: float
    subspace_residual: float
    reseeded_columns: list = field(default_factory=list)
    queries: int = 0
    V_T: Optional[np.ndarray] = None


def _hvp_columns(obj, x, V, mu1, ledger):
    return np.column_stack([hvp_fd(obj, x, V[:, j], mu1, ledger) for j in range(V.shape[1])])


def _orthonormal_start(d, k, sampler):
    Q, _ = np.linalg.qr(sampler.draw(k, d).T)
    return Q


def power_method_approx(
    obj: ObjectiveSpec,
    x,
    cfg: PowerMethodConfig,
    ledger: QueryLedger,
    sampler: Optional[GaussianSampler] = None,
):
    """Low-rank-plus-shift Hessian from T rounds of FD subspace iteration.

    Returns ``(model, diagnostics)``. Queries: ``4 d k (T+1)`` for the
    iteration plus ``4 d * residual_probes`` for the lambda_{k+1} estimate
    (skipped when k == d).
    """
    d = obj.dimension
    k = cfg.k
    if k > d:
        raise ValueError(f"target rank k={k} exceeds dimension d={d}")
    sampler = sampler if sampler is not None else GaussianSampler(0, (0x9E,))
    start = ledger.total_queries
    x = np.asarray(x, dtype=float)

    if cfg.V0 is not None:
        V = np.asarray(cfg.V0, dtype=float)
        if V.shape != (d, k):
            raise ValueError(f"V0 must be {d} x {k}")
        V, _ = np.linalg.qr(V)
    else:
        V = _orthonormal_start(d, k, sampler)

    reseeded = []
    for it in range(cfg.T):
        Y = _hvp_columns(obj, x, V, cfg.mu1, ledger)
        V, R = np.linalg.qr(Y)
        for j in np.flatnonzero(np.abs(np.diag(R)) < 1e-12):
            w = sampler.draw(1, d)[0]
            w -= V[:, :j] @ (V[:, :j].T @ w) if j else 0.0
            V[:, j] = w / np.linalg.norm(w)
            reseeded.append((it, int(j)))
        if reseeded:
            V, _ = np.linalg.qr(V)

    Y = _hvp_columns(obj, x, V, cfg.mu1, ledger)
    _, s, Wt = np.linalg.svd(Y, full_matrices=False)
    basis = V @ Wt.T
    y_norm = np.linalg.norm(Y)
    residual = float(np.linalg.norm(Y - V @ (V.T @ Y)) / y_norm) if y_norm > 0 else 0.0

    lam1 = float(s[0]) if s.size else 0.0
    floor = 1e-8 * lam1 if lam1 > 0 else 1e-8
    if k < d:
        norms = []
        for _ in range(cfg.residual_probes):
            w = sampler.draw(1, d)[0]
            w -= basis @ (basis.T @ w)
            w /= np.linalg.norm(w)
            z = hvp_fd(obj, x, w, cfg.mu1, ledger)
            norms.append(np.linalg.norm(z - basis @ (basis.T @ z)))
        lam_next = max(float(np.median(norms)), floor)
    else:
        lam_next = floor

    model = LowRankPlusShift(basis, s, cfg.shift_multiplier * lam_next)
    diag = PowerDiagnostics(
        lambda_next=lam_next,
        subspace_residual=residual,
        reseeded_columns=reseeded,
        queries=ledger.total_queries - start,
        V_T=V,
    )
    return model, diag


# -- Gaussian second differences -------------------------------------------

def _gram_norm_sq(C, iters: int = 5) -> float:
    """||C||_2^2 by power iteration on the small Gram matrix C^T C."""
    G = C.T @ C
    v = np.ones(G.shape[0]) / np.sqrt(G.shape[0])
    est = 0.0
    for _ in range(iters):
        w = G @ v
        est = float(np.linalg.norm(w))
        if est == 0.0:
            return 0.0
        v = w / est
    return float(v @ (G @ v))


def gauss_curvature_samples(
    obj: ObjectiveSpec,
    x,
    b_H: int,
    mu: float,
    abs_mode: bool = False,
    ledger: Optional[QueryLedger] = None,
    sampler: Optional[GaussianSampler] = None,
):
    """Draw u_i and return ``(u, delta / (2 mu^2))`` using 2 b_H + 1 queries.

    ``delta_i = f(x + mu u_i) + f(x - mu u_i) - 2 f(x)``. With ``abs_mode``
    the magnitudes are used (safe on non-convex losses); otherwise samples
    with negative curvature are zeroed, i.e. dropped, with a warning.
    """
    if b_H < 1:
        raise ValueError("b_H must be >= 1")
    if not mu > 0:
        raise ValueError("mu must be positive")
    ledger = ledger if ledger is not None else QueryLedger()
    sampler = sampler if sampler is not None else GaussianSampler(0, (0x6A,))
    x = np.asarray(x, dtype=float)

    u = sampler.draw(b_H, obj.dimension)
    fx = evaluate(obj, x, ledger, "hessian")
    pts = np.concatenate([x + mu * u, x - mu * u])
    vals = np.asarray(evaluate_batch(obj, pts, ledger, "hessian"))
    delta = vals[:b_H] + vals[b_H:] - 2.0 * fx
    if abs_mode:
        delta = np.abs(delta)
    elif np.any(delta < 0):
        warnings.warn(
            f"dropping {int(np.sum(delta < 0))} of {b_H} samples with negative curvature",
            RuntimeWarning,
            stacklevel=3,
        )
        delta = np.where(delta < 0, 0.0, delta)
    return u, delta / (2.0 * mu * mu)


def gauss_sampling_approx(
    obj: ObjectiveSpec,
    x,
    b_H: int,
    mu: float,
    lam: Union[float, str] = "auto",
    abs_mode: bool = False,
    ledger: Optional[QueryLedger] = None,
    sampler: Optional[GaussianSampler] = None,
    lam_fraction: float = 0.1,
) -> LowRankPlusShift:
    """H~ = (1/b_H) sum_i delta_i / (2 mu^2) u_i u_i^T + lam I, 2 b_H + 1 queries.

    See ``gauss_curvature_samples`` for delta_i and ``abs_mode``.
    ``lam='auto'`` picks ``lam_fraction * ||C||^2`` (1.0 if C vanishes).
    """
    if lam != "auto" and not (isinstance(lam, (int, float)) and lam > 0):
        raise ValueError("lam must be positive or 'auto'")
    u, curv = gauss_curvature_samples(obj, x, b_H, mu, abs_mode, ledger, sampler)
    C = (u * np.sqrt(curv / b_H)[:, None]).T

    if lam == "auto":
        norm_sq = _gram_norm_sq(C)
        lam = lam_fraction * norm_sq if norm_sq > 0 else 1.0
    return LowRankPlusShift.from_factor(C, float(lam))


# -- quality ---------------------------------------------------------------

@dataclass
class QualityReport:
    rho: float
    zeta: float
    sandwich_holds: bool
    pencil_min: float
    pencil_max: float


def pencil_eigenvalues(model: HessianModel, true_hessian) -> np.ndarray:
    H = np.asarray(true_hessian, dtype=float)
    K = model.apply_inv_sqrt(np.eye(model.dimension))
    K = 0.5 * (K + K.T)
    P = K @ H @ K
    return np.linalg.eigvalsh(0.5 * (P + P.T))


def quality_check(model: HessianModel, true_hessian) -> QualityReport:
    """Largest rho with rho H~ <= H <= (2 - rho) H~ (dense, test-scale only)."""
    H = np.asarray(true_hessian, dtype=float)
    if H.ndim != 2 or H.shape[0] != H.shape[1] or H.shape[0] != model.dimension:
        raise ValueError("true Hessian must be a d x d matrix")
    scale = max(1.0, float(np.abs(H).max()))
    if np.abs(H - H.T).max() > 1e-10 * scale:
        raise ValueError("true Hessian is not symmetric")
    ev = pencil_eigenvalues(model, H)
    rho = float(min(ev[0], 2.0 - ev[-1]))
    return QualityReport(
        rho=rho,
        zeta=float(np.linalg.eigvalsh(model.to_dense())[0]),
        sandwich_holds=rho > 0,
        pencil_min=float(ev[0]),
        pencil_max=float(ev[-1]),
    )
