"""Analytic test objectives with known curvature."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .oracle import ObjectiveMetadata, ObjectiveSpec


def householder_rotation(d: int, seed: int) -> np.ndarray:
    """Orthogonal matrix built as a product of d seeded Householder reflections."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0xB0B,)))
    Q = np.eye(d)
    for _ in range(d):
        w = rng.standard_normal(d)
        w /= np.linalg.norm(w)
        Q = Q - 2.0 * np.outer(Q @ w, w)
    return Q


@dataclass
class QuadraticSpec:
    """f(x) = 1/2 (x - center)^T A (x - center) with A = Q diag(eigenvalues) Q^T.

    ``rotation_seed=None`` keeps A diagonal.
    """

    eigenvalues: np.ndarray
    rotation_seed: Optional[int] = 0
    center: Optional[np.ndarray] = None

    def __post_init__(self):
        ev = np.asarray(self.eigenvalues, dtype=float)
        if ev.ndim != 1 or ev.size == 0 or np.any(ev <= 0):
            raise ValueError("eigenvalues must be a non-empty vector of positive reals")
        if np.any(np.diff(ev) > 0):
            raise ValueError("eigenvalues must be sorted in descending order")
        self.eigenvalues = ev
        if self.center is None:
            self.center = np.zeros(ev.size)
        self.center = np.asarray(self.center, dtype=float)
        if self.center.shape != ev.shape:
            raise ValueError("center must have the same length as eigenvalues")

    @property
    def dimension(self) -> int:
        return self.eigenvalues.size

    def rotation(self) -> np.ndarray:
        if self.rotation_seed is None:
            return np.eye(self.dimension)
        return householder_rotation(self.dimension, self.rotation_seed)

    def matrix(self) -> np.ndarray:
        Q = self.rotation()
        A = (Q * self.eigenvalues) @ Q.T
        return 0.5 * (A + A.T)


def make_quadratic(spec: QuadraticSpec, name: str = "quadratic") -> ObjectiveSpec:
    A = spec.matrix()
    c = spec.center.copy()

    def f(x):
        r = x - c
        return 0.5 * float(r @ (A @ r))

    meta = ObjectiveMetadata(
        smoothness=float(spec.eigenvalues[0]),
        strong_convexity=float(spec.eigenvalues[-1]),
        hessian_lipschitz=0.0,
        optimum_value=0.0,
        optimum_point=c.copy(),
        true_hessian_at=lambda x: A.copy(),
    )
    obj = ObjectiveSpec(spec.dimension, f, meta, name=name)
    obj.quadratic = spec
    obj.hessian = A
    return obj


def quadratic_from_matrix(A, center=None, name: str = "quadratic") -> ObjectiveSpec:
    A = np.asarray(A, dtype=float)
    A = 0.5 * (A + A.T)
    ev = np.linalg.eigvalsh(A)
    c = np.zeros(A.shape[0]) if center is None else np.asarray(center, dtype=float)

    def f(x):
        r = x - c
        return 0.5 * float(r @ (A @ r))

    meta = ObjectiveMetadata(
        smoothness=float(ev[-1]) if ev[-1] > 0 else None,
        strong_convexity=float(ev[0]) if ev[0] > 0 else None,
        hessian_lipschitz=0.0,
        optimum_value=0.0 if ev[0] > 0 else None,
        optimum_point=c.copy(),
        true_hessian_at=lambda x: A.copy(),
    )
    obj = ObjectiveSpec(A.shape[0], f, meta, name=name)
    obj.hessian = A
    return obj


def linear(c, offset: float = 0.0, name: str = "linear") -> ObjectiveSpec:
    c = np.asarray(c, dtype=float).copy()

    def f(x):
        return float(c @ x) + offset

    meta = ObjectiveMetadata(hessian_lipschitz=0.0, true_hessian_at=lambda x: np.zeros((c.size, c.size)))
    obj = ObjectiveSpec(c.size, f, meta, name=name)
    obj.gradient_vector = c
    return obj


def constant(d: int, value: float = 1.0) -> ObjectiveSpec:
    meta = ObjectiveMetadata(hessian_lipschitz=0.0, true_hessian_at=lambda x: np.zeros((d, d)))
    return ObjectiveSpec(d, lambda x: float(value), meta, name="constant")


def quartic(d: int = 1) -> ObjectiveSpec:
    """sum_i x_i^4; Hessian diag(12 x_i^2)."""

    def f(x):
        return float(np.sum(x**4))

    meta = ObjectiveMetadata(optimum_value=0.0, true_hessian_at=lambda x: np.diag(12.0 * x**2))
    return ObjectiveSpec(d, f, meta, name="quartic")


def logistic(features, labels, reg: float = 0.0, name: str = "logistic") -> ObjectiveSpec:
    """Mean logistic loss plus (reg/2)||x||^2, labels in {-1, +1}."""
    X = np.asarray(features, dtype=float)
    y = np.asarray(labels, dtype=float)
    n = X.shape[0]
    L = float(np.linalg.norm(X, 2) ** 2 / (4 * n)) + reg

    def f(w):
        z = -y * (X @ w)
        return float(np.mean(np.logaddexp(0.0, z)) + 0.5 * reg * (w @ w))

    def hess(w):
        s = 1.0 / (1.0 + np.exp(-(X @ w)))
        return (X.T * (s * (1 - s))) @ X / n + reg * np.eye(X.shape[1])

    meta = ObjectiveMetadata(
        smoothness=L,
        strong_convexity=reg if reg > 0 else None,
        true_hessian_at=hess,
    )
    return ObjectiveSpec(X.shape[1], f, meta, name=name)


def spiked_spectrum(d: int, k: int, top: float = 100.0, rest: float = 1.0) -> np.ndarray:
    return np.concatenate([np.full(k, top), np.full(d - k, rest)])


@dataclass
class CatalogEntry:
    spec: QuadraticSpec
    description: str = ""
    extra: dict = field(default_factory=dict)


CATALOG = {
    "diag12": CatalogEntry(QuadraticSpec(np.array([2.0, 1.0]), None), "A = diag(2, 1), d=2"),
    "spiked20": CatalogEntry(
        QuadraticSpec(spiked_spectrum(20, 2), 7), "d=20, spectrum (100, 100, 1, ..., 1)"
    ),
    "lowrank50": CatalogEntry(
        QuadraticSpec(spiked_spectrum(50, 5), 11), "d=50, spectrum 5 x 100 then 45 x 1"
    ),
    "geom4": CatalogEntry(QuadraticSpec(np.array([8.0, 4.0, 2.0, 1.0]), 3), "d=4 geometric spectrum"),
    "spiked6": CatalogEntry(
        QuadraticSpec(np.array([20.0, 5.0, 1.0, 1.0, 1.0, 1.0]), 5), "d=6, two strong directions"
    ),
    "flat8": CatalogEntry(
        QuadraticSpec(np.linspace(3.0, 1.0, 8), 9), "d=8, mild conditioning"
    ),
}

MOMENT_CATALOG = ("diag12", "geom4", "spiked6", "flat8")


def catalog_objective(name: str) -> ObjectiveSpec:
    try:
        entry = CATALOG[name]
    except KeyError:
        raise KeyError(f"unknown catalog objective {name!r}; known: {sorted(CATALOG)}") from None
    return make_quadratic(entry.spec, name=name)
