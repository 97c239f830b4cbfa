"""Gaussian-smoothing gradient estimators.

All estimators return the *natural* gradient, i.e. the preconditioned
direction H~^{-1} g_mu, by sampling perturbations u~ = H~^{-1/2} u with
u ~ N(0, I). With the identity model this is the vanilla estimator.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .hessian import HessianModel, IdentityModel
from .oracle import ObjectiveSpec, QueryLedger, evaluate, evaluate_batch
from .sampling import GaussianSampler


class EstimateMismatch(ValueError):
    """augment_estimate was handed a different x, mu or model."""


@dataclass
class GradientEstimate:
    direction: np.ndarray
    x: np.ndarray
    mu: float
    kind: str  # "forward" or "central"
    n_samples: int
    model_fingerprint: str
    base_value: Optional[float] = None
    raw: Optional[np.ndarray] = None  # standard draws u_i, one per row
    perturbations: Optional[np.ndarray] = None  # u~_i = H~^{-1/2} u_i
    quotients: Optional[np.ndarray] = None  # finite-difference quotient per sample

    @property
    def retains_samples(self) -> bool:
        return self.quotients is not None

    @property
    def samples(self) -> list:
        """(u_i, f-difference) pairs; the difference is quotient * mu (or 2 mu)."""
        if not self.retains_samples:
            return []
        scale = self.mu if self.kind == "forward" else 2.0 * self.mu
        return list(zip(self.raw, self.quotients * scale))

    def recompute(self) -> np.ndarray:
        if not self.retains_samples:
            raise ValueError("estimate was built in streaming mode and kept no samples")
        return _mean_direction(self.quotients, self.perturbations)


def _mean_direction(quotients, perturbations):
    return (quotients[:, None] * perturbations).mean(axis=0)


def _validate(mu, b):
    if not mu > 0:
        raise ValueError("mu must be positive")
    if int(b) != b or b < 1:
        raise ValueError("batch size must be an integer >= 1")


def _draw(model, sampler, n, d):
    raw = sampler.draw(n, d)
    return raw, model.apply_inv_sqrt(raw)


def _forward_quotients(obj, x, mu, pert, fx, ledger, executor):
    vals = np.asarray(evaluate_batch(obj, x + mu * pert, ledger, "gradient", executor))
    return (vals - fx) / mu


def _central_quotients(obj, x, mu, pert, ledger, executor):
    n = len(pert)
    pts = np.concatenate([x + mu * pert, x - mu * pert])
    vals = np.asarray(evaluate_batch(obj, pts, ledger, "gradient", executor))
    return (vals[:n] - vals[n:]) / (2.0 * mu)


def _package(kind, obj_x, mu, model, raw, pert, q, fx, keep):
    direction = _mean_direction(q, pert)
    return GradientEstimate(
        direction=direction,
        x=obj_x.copy(),
        mu=float(mu),
        kind=kind,
        n_samples=len(q),
        model_fingerprint=model.fingerprint(),
        base_value=fx,
        raw=raw if keep else None,
        perturbations=pert if keep else None,
        quotients=q if keep else None,
    )


def estimate_forward(
    obj: ObjectiveSpec,
    x,
    mu: float,
    b: int,
    model: HessianModel,
    sampler: GaussianSampler,
    ledger: QueryLedger,
    fx: Optional[float] = None,
    keep_samples: bool = True,
    executor=None,
) -> GradientEstimate:
    """(1/b) sum_i [f(x + mu u~_i) - f(x)] / mu * u~_i using b + 1 queries.

    Pass ``fx`` when f(x) has already been queried for this estimate; the
    baseline is then not queried again.
    """
    _validate(mu, b)
    x = np.asarray(x, dtype=float)
    raw, pert = _draw(model, sampler, b, obj.dimension)
    if fx is None:
        fx = evaluate(obj, x, ledger, "gradient")
    q = _forward_quotients(obj, x, mu, pert, fx, ledger, executor)
    return _package("forward", x, mu, model, raw, pert, q, float(fx), keep_samples)


def estimate_central(
    obj: ObjectiveSpec,
    x,
    mu: float,
    b: int,
    model: HessianModel,
    sampler: GaussianSampler,
    ledger: QueryLedger,
    keep_samples: bool = True,
    executor=None,
) -> GradientEstimate:
    """(1/b) sum_i [f(x + mu u~_i) - f(x - mu u~_i)] / (2 mu) * u~_i, 2b queries."""
    _validate(mu, b)
    x = np.asarray(x, dtype=float)
    raw, pert = _draw(model, sampler, b, obj.dimension)
    q = _central_quotients(obj, x, mu, pert, ledger, executor)
    return _package("central", x, mu, model, raw, pert, q, None, keep_samples)


def estimate_vanilla(obj, x, mu, b, sampler, ledger, **kwargs) -> GradientEstimate:
    return estimate_forward(obj, x, mu, b, IdentityModel(obj.dimension), sampler, ledger, **kwargs)


def augment_estimate(
    prev: GradientEstimate,
    obj: ObjectiveSpec,
    x,
    delta_b: int,
    model: HessianModel,
    sampler: GaussianSampler,
    ledger: QueryLedger,
    executor=None,
) -> GradientEstimate:
    """Extend ``prev`` with ``delta_b`` fresh samples drawn from ``sampler``.

    The result equals a one-shot estimate over the concatenated samples;
    only the new samples are charged (the forward baseline is reused).
    """
    if int(delta_b) != delta_b or delta_b < 1:
        raise ValueError("delta_b must be an integer >= 1")
    if not prev.retains_samples:
        raise ValueError("cannot augment a streaming-mode estimate")
    x = np.asarray(x, dtype=float)
    if not np.array_equal(x, prev.x):
        raise EstimateMismatch("augment_estimate called at a different point")
    if model.fingerprint() != prev.model_fingerprint:
        raise EstimateMismatch("augment_estimate called with a different Hessian model")
    raw, pert = _draw(model, sampler, delta_b, obj.dimension)
    if prev.kind == "forward":
        q = _forward_quotients(obj, x, prev.mu, pert, prev.base_value, ledger, executor)
    else:
        q = _central_quotients(obj, x, prev.mu, pert, ledger, executor)
    return _package(
        prev.kind,
        x,
        prev.mu,
        model,
        np.concatenate([prev.raw, raw]),
        np.concatenate([prev.perturbations, pert]),
        np.concatenate([prev.quotients, q]),
        prev.base_value,
        True,
    )
