"""Monte-Carlo and dense-algebra checks of the estimator and model guarantees.

Each suite returns a ``Report`` of measured-vs-bound lines. One-sided
bounds get a 3 standard-error allowance in the measured quantity's favour;
two-sided identities must hold within 3 standard errors.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import List

import numpy as np

from ..estimator import estimate_forward
from ..functions import MOMENT_CATALOG, QuadraticSpec, catalog_objective, linear, make_quadratic, quadratic_from_matrix
from ..hessian import (
    DiagonalModel,
    LowRankPlusShift,
    PowerMethodConfig,
    gauss_curvature_samples,
    pencil_eigenvalues,
    power_method_approx,
)
from ..oracle import QueryLedger, hvp_fd
from ..sampling import GaussianSampler

SUITES = ("lemma1", "lemma2", "lemma3", "lemma5", "theorem3", "hvp", "unbiased")
MOMENT_SAMPLES = 100_000  # batches per moment estimate
CURVATURE_SAMPLES = 1_000_000
MOMENT_MUS = (0.1, 0.01)
MOMENT_BATCHES = (1, 4)
HVP_CASES = 50
HVP_TOL = 1e-8
Z = 3.0  # standard errors of slack


@dataclass
class Check:
    name: str
    measured: float
    bound: float
    passed: bool
    note: str = ""

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        extra = f"  ({self.note})" if self.note else ""
        return f"{tag}  {self.name:<44} measured={self.measured:.6g}  bound={self.bound:.6g}{extra}"


@dataclass
class Report:
    suite: str
    seed: int
    checks: List[Check] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return bool(self.checks) and all(c.passed for c in self.checks)

    def text(self) -> str:
        head = f"[{self.suite}] seed={self.seed}: {'PASS' if self.passed else 'FAIL'} ({len(self.checks)} checks)"
        return "\n".join([head] + ["  " + c.line() for c in self.checks])


def _rng(seed, *key):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


def random_spd_model(d: int, rng, kind: str = "dense"):
    """Positive-definite model with eigenvalues in roughly [0.25, 5]."""
    if kind == "diagonal":
        return DiagonalModel(rng.uniform(0.25, 4.0, d))
    rank = d if kind == "dense" else max(1, d // 3)
    Q, _ = np.linalg.qr(rng.standard_normal((d, rank)))
    return LowRankPlusShift(Q, rng.uniform(0.0, 4.0, rank), float(rng.uniform(0.25, 1.0)))


# -- gradient moments ----------------------------------------------------------

@dataclass
class _MomentSetup:
    name: str
    d: int
    mu: float
    L: float
    K_norm: float
    Kgrad: np.ndarray  # K grad f(x)
    Kg: np.ndarray  # per-sample K g = quotient * u, one row per draw


@functools.lru_cache(maxsize=16)
def _moment_setup(name: str, mu: float, seed: int) -> _MomentSetup:
    obj = catalog_objective(name)
    d = obj.dimension
    rng = _rng(seed, 11, MOMENT_CATALOG.index(name))
    x = obj.metadata.optimum_point + 0.5 * rng.standard_normal(d)
    model = random_spd_model(d, rng, "dense")
    n = MOMENT_SAMPLES * max(MOMENT_BATCHES)
    est = estimate_forward(
        obj, x, mu, n, model, GaussianSampler(seed, (12, MOMENT_CATALOG.index(name))), QueryLedger()
    )
    grad = obj.hessian @ (x - obj.metadata.optimum_point)
    return _MomentSetup(
        name=name,
        d=d,
        mu=mu,
        L=obj.metadata.smoothness,
        K_norm=1.0 / np.sqrt(model.min_eigenvalue()),
        Kgrad=model.apply_inv_sqrt(grad),
        Kg=est.quotients[:, None] * est.raw,
    )


def _batched(Kg, b):
    n = (len(Kg) // b) * b
    return Kg[:n].reshape(-1, b, Kg.shape[1]).mean(axis=1)


def _bias_check(s: _MomentSetup) -> Check:
    # ||E g - grad||_{K^2} = ||E[K g] - K grad||
    diff = s.Kg - s.Kgrad
    m = diff.mean(axis=0)
    se = diff.std(axis=0, ddof=1) / np.sqrt(len(diff))
    shrunk = np.maximum(np.abs(m) - Z * se, 0.0)
    bound = 0.25 * s.mu**2 * s.L**2 * s.K_norm**4 * (s.d + 3) ** 3
    return Check(
        f"bias {s.name} mu={s.mu}",
        float(shrunk @ shrunk),
        bound,
        bool(shrunk @ shrunk <= bound),
        f"raw bias^2={float(m @ m):.3g}",
    )


def _one_sided_mean(vals):
    return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(len(vals)))


def _second_moment_check(s: _MomentSetup, b: int) -> Check:
    g = _batched(s.Kg, b)
    mean, se = _one_sided_mean(np.sum(g * g, axis=1))
    gn2 = float(s.Kgrad @ s.Kgrad)
    L, K, d, mu = s.L, s.K_norm, s.d, s.mu
    bound = mu**2 / (2 * b) * L**2 * K**4 * (d + 6) ** 3 + (2 * (d + 2) / b + 2) * gn2 + mu**2 * L**2 * (d + 3) ** 3 / 2
    return Check(f"second moment {s.name} mu={s.mu} b={b}", mean, bound, mean - Z * se <= bound, f"se={se:.3g}")


def _third_moment_check(s: _MomentSetup, b: int) -> Check:
    # ||K^2 g||_{K^-2} = ||K g||
    g = _batched(s.Kg, b)
    mean, se = _one_sided_mean(np.sum(g * g, axis=1) ** 1.5)
    gn = float(np.sqrt(s.Kgrad @ s.Kgrad))
    L, K, d, mu = s.L, s.K_norm, s.d, s.mu
    bound = 2 * mu**3 * L**3 * K**6 * (d + 9) ** 4.5 + 12 * (d + 5) ** 1.5 * gn**3
    return Check(f"third moment {s.name} mu={s.mu} b={b}", mean, bound, mean - Z * se <= bound, f"se={se:.3g}")


def _moment_suite(which, seed):
    checks = []
    for name in MOMENT_CATALOG:
        for mu in MOMENT_MUS:
            s = _moment_setup(name, mu, seed)
            if which == "lemma1":
                checks.append(_bias_check(s))
            elif which == "lemma2":
                checks.extend(_second_moment_check(s, b) for b in MOMENT_BATCHES)
            else:
                checks.extend(_third_moment_check(s, b) for b in MOMENT_BATCHES)
    return checks


# -- curvature identity ------------------------------------------------------------

def curvature_measurement(seed: int = 0, n: int = CURVATURE_SAMPLES, chunk: int = 100_000, mu: float = 0.5):
    """Mean and standard error of delta/(2 mu^2) u u^T on the diag(1, 2) quadratic.

    This is the Gaussian-sampling model with no regulariser (lambda = 0).
    """
    obj = quadratic_from_matrix(np.diag([1.0, 2.0]))
    x = np.array([0.3, -0.7])
    total = np.zeros((2, 2))
    total_sq = np.zeros((2, 2))
    for c in range(0, n, chunk):
        m = min(chunk, n - c)
        u, curv = gauss_curvature_samples(obj, x, m, mu, False, QueryLedger(), GaussianSampler(seed, (51, c)))
        outer = curv[:, None, None] * u[:, :, None] * u[:, None, :]
        total += outer.sum(axis=0)
        total_sq += (outer * outer).sum(axis=0)
    mean = total / n
    var = (total_sq / n - mean**2) * n / (n - 1)
    return mean, np.sqrt(var / n)


def _curvature(seed):
    expected = np.diag([2.5, 3.5])  # A + tr(A)/2 I
    mean, se = curvature_measurement(seed)
    checks = []
    for i in range(2):
        for j in range(2):
            dev = abs(mean[i, j] - expected[i, j])
            checks.append(
                Check(
                    f"curvature E[H~]({i},{j}) vs {expected[i, j]}",
                    float(mean[i, j]),
                    float(expected[i, j]),
                    bool(dev <= Z * se[i, j]),
                    f"|dev|={dev:.3g}, 3se={Z * se[i, j]:.3g}",
                )
            )
    return checks


# -- power-method sandwich ------------------------------------------------------

def sandwich_model(seed: int = 0):
    obj = catalog_objective("spiked20")
    x = obj.metadata.optimum_point + _rng(seed, 31).standard_normal(obj.dimension)
    cfg = PowerMethodConfig(k=2, T=10)
    ledger = QueryLedger()
    model, diag = power_method_approx(obj, x, cfg, ledger, GaussianSampler(seed, (32,)))
    return obj, model, diag, ledger


def _sandwich(seed):
    obj, model, diag, ledger = sandwich_model(seed)
    A = obj.hessian
    lam_hat = diag.lambda_next
    lam_min = float(np.linalg.eigvalsh(A)[0])
    pencil = pencil_eigenvalues(model, A)
    lower = lam_min / (lam_min + 10.0 * lam_hat)
    H = model.to_dense()
    h_min = float(np.linalg.eigvalsh(H)[0])
    # a backward-stable eigensolver is accurate to a few eps * ||H~||
    tol = 64 * np.finfo(float).eps * float(np.linalg.norm(H, 2))
    top = np.sort(model.eigvals)[::-1][:2] + model.shift
    top_err = float(np.max(np.abs(top - 105.0)) / 105.0)
    return [
        Check("sandwich min pencil eigenvalue >= lower", float(pencil.min()), lower, bool(pencil.min() >= lower)),
        Check("sandwich max pencil eigenvalue <= 1", float(pencil.max()), 1.0, bool(pencil.max() <= 1.0)),
        Check(
            "sandwich 5*lambda_hat <= lambda_min(H~)",
            5.0 * lam_hat,
            h_min,
            bool(5.0 * lam_hat <= h_min + tol),
            f"eigensolver tolerance {tol:.2g}",
        ),
        Check("sandwich top eigenvalues vs 105 (rel err)", top_err, 0.01, top_err <= 0.01),
        Check(
            "sandwich query charge",
            float(ledger.total_queries),
            float(PowerMethodConfig(k=2, T=10).query_cost(obj.dimension)),
            ledger.total_queries == PowerMethodConfig(k=2, T=10).query_cost(obj.dimension),
        ),
    ]


# -- finite-difference Hessian-vector products --------------------------------------

def hvp_cases(seed: int = 0, n: int = HVP_CASES):
    """Random (quadratic, x, v, mu1) with d <= 20 and mu1 log-uniform in [1e-4, 1].

    x is drawn near the minimiser: the rounding error of the difference
    quotient grows like eps * |f(x)| / mu1^2, see the README.
    """
    rng = _rng(seed, 41)
    for i in range(n):
        d = int(rng.integers(2, 21))
        ev = np.sort(10.0 ** rng.uniform(-1, 1, d))[::-1]
        spec = QuadraticSpec(ev, int(rng.integers(0, 2**31)), rng.standard_normal(d))
        obj = make_quadratic(spec)
        x = spec.center + 0.05 * rng.standard_normal(d)
        v = rng.standard_normal(d)
        v /= np.linalg.norm(v)
        mu1 = float(10.0 ** rng.uniform(-4, 0))
        yield obj, x, v, mu1


def hvp_errors(seed: int = 0, n: int = HVP_CASES) -> np.ndarray:
    errs = []
    for obj, x, v, mu1 in hvp_cases(seed, n):
        exact = obj.hessian @ v
        got = hvp_fd(obj, x, v, mu1, QueryLedger())
        errs.append(np.linalg.norm(got - exact) / np.linalg.norm(exact))
    return np.array(errs)


def _hvp(seed):
    errs = hvp_errors(seed)
    return [Check(f"hvp max relative error over {len(errs)} cases", float(errs.max()), HVP_TOL, bool(errs.max() <= HVP_TOL))]


# -- unbiasedness on linear objectives -------------------------------------------

UNBIASED_SETUPS = ((4, "diagonal"), (6, "lowrank"), (8, "dense"))


def unbiased_measurement(seed: int = 0, n: int = MOMENT_SAMPLES):
    """Yield (label, mean direction, standard error, H~^{-1} c) per model.

    H~^{-1} c comes from a dense solve, not from the model's own inverse.
    """
    for idx, (d, kind) in enumerate(UNBIASED_SETUPS):
        rng = _rng(seed, 61, idx)
        c = rng.standard_normal(d)
        model = random_spd_model(d, rng, kind)
        obj = linear(c)
        x = rng.standard_normal(d)
        est = estimate_forward(obj, x, 0.1, n, model, GaussianSampler(seed, (62, idx)), QueryLedger())
        per = est.quotients[:, None] * est.perturbations
        expected = np.linalg.solve(model.to_dense(), c)
        yield f"{kind} d={d}", per.mean(axis=0), per.std(axis=0, ddof=1) / np.sqrt(n), expected


def _unbiased(seed):
    checks = []
    for label, mean, se, expected in unbiased_measurement(seed):
        z = np.abs(mean - expected) / se
        checks.append(
            Check(
                f"unbiased {label} max |z| over components",
                float(z.max()),
                Z,
                bool(np.all(z <= Z)),
            )
        )
    return checks


def verify_bounds(suite: str, seed: int = 0) -> Report:
    if suite not in SUITES:
        raise ValueError(f"unknown suite {suite!r}; choose from {', '.join(SUITES)}")
    if suite in ("lemma1", "lemma2", "lemma3"):
        checks = _moment_suite(suite, seed)
    else:
        checks = {"lemma5": _curvature, "theorem3": _sandwich, "hvp": _hvp, "unbiased": _unbiased}[suite](seed)
    return Report(suite, seed, checks)
