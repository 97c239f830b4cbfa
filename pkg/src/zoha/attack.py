"""CW-style black-box attacks on small forward-only classifiers.

The attacker only sees loss values. Class probabilities are the softmax of
the final-layer scores; losses take logs of probabilities clamped at
``PROB_FLOOR`` so margins never become infinite.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .oracle import ObjectiveMetadata, ObjectiveSpec, QueryLedger
from .optimizer import BoxConstraint, SolverConfig, is_feasible, run

PROB_FLOOR = 1e-300
ACTIVATIONS = ("relu", "none")


class ClassifierFormatError(ValueError):
    pass


@dataclass
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray
    activation: str = "none"

    def __post_init__(self):
        self.weight = np.atleast_2d(np.asarray(self.weight, dtype=float))
        self.bias = np.asarray(self.bias, dtype=float).reshape(-1)
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.bias.shape != (self.weight.shape[0],):
            raise ValueError("bias length must match the weight's output dimension")
        if not (np.all(np.isfinite(self.weight)) and np.all(np.isfinite(self.bias))):
            raise ValueError("layer parameters must be finite")


@dataclass
class ClassifierModel:
    layers: List[Layer]

    def __post_init__(self):
        if not self.layers:
            raise ValueError("a classifier needs at least one layer")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.weight.shape[0] != b.weight.shape[1]:
                raise ValueError(
                    f"layer dimensions do not chain: {a.weight.shape[0]} outputs feed {b.weight.shape[1]} inputs"
                )
        if self.n_classes < 2:
            raise ValueError("need at least two classes")

    @property
    def input_dim(self) -> int:
        return self.layers[0].weight.shape[1]

    @property
    def n_classes(self) -> int:
        return self.layers[-1].weight.shape[0]

    @property
    def dims(self) -> list:
        return [self.input_dim] + [layer.weight.shape[0] for layer in self.layers]

    def scores(self, x) -> np.ndarray:
        h = np.asarray(x, dtype=float)
        if h.shape != (self.input_dim,):
            raise ValueError(f"expected input of shape ({self.input_dim},), got {h.shape}")
        for layer in self.layers:
            h = layer.weight @ h + layer.bias
            if layer.activation == "relu":
                h = np.maximum(h, 0.0)
        return h

    def predict(self, x) -> int:
        return int(np.argmax(self.scores(x)))


def softmax(z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    e = np.exp(z - z.max())
    return e / e.sum()


def class_probs(model: ClassifierModel, x) -> np.ndarray:
    return softmax(model.scores(x))


def _log_probs(p):
    return np.log(np.maximum(p, PROB_FLOOR))


def _check_label(model, label):
    if not 0 <= label < model.n_classes:
        raise ValueError(f"label {label} outside [0, {model.n_classes})")


def margin_targeted(probs, label: int, omega: float) -> float:
    lp = _log_probs(probs)
    others = np.delete(lp, label)
    return float(max(others.max() - lp[label], -omega))


def margin_untargeted(probs, label: int, omega: float) -> float:
    lp = _log_probs(probs)
    others = np.delete(lp, label)
    return float(max(lp[label] - others.max(), -omega))


def loss_targeted(model: ClassifierModel, x, label: int, omega: float = 1.0) -> float:
    """max{ max_{i != l} log Z_i - log Z_l, -omega }."""
    _check_label(model, label)
    return margin_targeted(class_probs(model, x), label, omega)


def loss_untargeted(model: ClassifierModel, x, label: int, omega: float = 1.0) -> float:
    """max{ log Z_l - max_{i != l} log Z_i, -omega }."""
    _check_label(model, label)
    return margin_untargeted(class_probs(model, x), label, omega)


# -- attack ----------------------------------------------------------------

@dataclass
class AttackSpec:
    mode: str  # "targeted" or "untargeted"
    label: int
    epsilon: float
    omega: float = 1.0
    lower: float = 0.0
    upper: float = 1.0
    query_cap: int = 50_000

    def __post_init__(self):
        if self.mode not in ("targeted", "untargeted"):
            raise ValueError("mode must be 'targeted' or 'untargeted'")
        if not self.epsilon >= 0:
            raise ValueError("epsilon must be >= 0")
        if not self.omega >= 0:
            raise ValueError("omega must be >= 0")
        if self.query_cap < 1:
            raise ValueError("query_cap must be >= 1")

    def goal_met(self, predicted: int) -> bool:
        if self.mode == "targeted":
            return predicted == self.label
        return predicted != self.label


@dataclass
class AttackResult:
    success: bool
    adversarial_point: np.ndarray
    queries_used: int
    iterations: int
    final_loss: float
    terminated_by: str = ""
    trace: list = field(default_factory=list, repr=False)


class _AttackObjective:
    """Loss oracle that remembers the scores of every point it evaluates.

    The success test looks up the scores of the accepted iterate instead of
    running (and paying for) another forward pass.
    """

    def __init__(self, model: ClassifierModel, spec: AttackSpec):
        self.model, self.spec = model, spec
        self._cache = {}
        self._margin = margin_targeted if spec.mode == "targeted" else margin_untargeted

    def __call__(self, x) -> float:
        s = self.model.scores(x)
        self._cache[x.tobytes()] = s
        return self._margin(softmax(s), self.spec.label, self.spec.omega)

    def scores_of(self, x) -> Optional[np.ndarray]:
        return self._cache.get(np.asarray(x, dtype=float).tobytes())

    def forget(self):
        self._cache.clear()


def run_attack(
    model: ClassifierModel, x0, spec: AttackSpec, solver_cfg: SolverConfig, executor=None
) -> AttackResult:
    """Minimise the attack loss inside the eps-box around x0 and [lower, upper]."""
    x0 = np.asarray(x0, dtype=float)
    _check_label(model, spec.label)
    if x0.shape != (model.input_dim,):
        raise ValueError(f"x0 must have shape ({model.input_dim},)")
    if np.any(x0 < spec.lower) or np.any(x0 > spec.upper):
        raise ValueError("x0 lies outside the pixel bounds")

    loss = _AttackObjective(model, spec)
    obj = ObjectiveSpec(
        model.input_dim,
        loss,
        ObjectiveMetadata(optimum_value=-spec.omega),
        name=f"{spec.mode}-attack",
    )
    con = BoxConstraint(x0, spec.epsilon, spec.lower, spec.upper)
    cfg = replace(
        solver_cfg,
        constraint=con,
        max_queries=min(solver_cfg.max_queries, spec.query_cap),
        target=None,
    )
    state = {"x": x0.copy(), "f": math.nan, "iters": 0}

    def on_accept(t, x, fx):
        state.update(x=x.copy(), f=fx, iters=t)
        s = loss.scores_of(x)
        if s is None:  # not reachable through run(); kept as a guard
            s = model.scores(x)
        # bounded memory: only the current iterate's scores are ever needed again
        loss.forget()
        return spec.goal_met(int(np.argmax(s)))

    res = run(obj, x0, cfg, callback=on_accept, executor=executor)
    success = res.terminated_by == "success"
    adv = state["x"] if success else res.best_point
    if not is_feasible(adv, con):
        raise AssertionError("solver returned an infeasible point")
    final = state["f"] if success else res.best_value
    return AttackResult(
        success=success,
        adversarial_point=adv,
        queries_used=res.queries,
        iterations=state["iters"] if success else len(res.trace),
        final_loss=float(final),
        terminated_by=res.terminated_by,
        trace=res.trace,
    )


@dataclass
class AttackSummary:
    results: list
    success_rate: float
    median_queries: Optional[float]  # over successes only; None when there are none
    average_queries: Optional[float]

    @property
    def n_success(self) -> int:
        return sum(r.success for r in self.results)


def summarize(results: Sequence[AttackResult]) -> AttackSummary:
    q = [r.queries_used for r in results if r.success]
    return AttackSummary(
        results=list(results),
        success_rate=len(q) / len(results) if results else 0.0,
        median_queries=float(np.median(q)) if q else None,
        average_queries=float(np.mean(q)) if q else None,
    )


def attack_suite(
    model: ClassifierModel,
    inputs: Sequence,
    spec,
    solver_cfg: SolverConfig,
    threads: int = 1,
) -> AttackSummary:
    """Attack every input with an independent solver and ledger.

    ``spec`` is one AttackSpec for all inputs or a sequence with one per
    input (labels usually differ). Seeds are offset by the input index.
    """
    inputs = list(inputs)
    if not inputs:
        raise ValueError("attack_suite needs at least one input")
    specs = [spec] * len(inputs) if isinstance(spec, AttackSpec) else list(spec)
    if len(specs) != len(inputs):
        raise ValueError("need one AttackSpec per input")

    def one(i):
        cfg = replace(solver_cfg, seed=solver_cfg.seed + i)
        return run_attack(model, inputs[i], specs[i], cfg)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(one, range(len(inputs))))
    else:
        results = [one(i) for i in range(len(inputs))]
    return summarize(results)


# -- classifier files --------------------------------------------------------
#
#   zoha-classifier 1
#   n_layers <L>
#   dims <d0> <d1> ... <dL>
#   activations <a1> ... <aL>
#   then, per layer: <d_out> lines of <d_in> weights (row-major), one bias line
#
# Blank lines and lines starting with '#' are ignored.

MAGIC = "zoha-classifier 1"


def save_classifier(model: ClassifierModel, path) -> None:
    lines = [
        MAGIC,
        f"n_layers {len(model.layers)}",
        "dims " + " ".join(str(d) for d in model.dims),
        "activations " + " ".join(layer.activation for layer in model.layers),
    ]
    for i, layer in enumerate(model.layers):
        lines.append(f"# layer {i} weights")
        lines.extend(" ".join(repr(float(w)) for w in row) for row in layer.weight)
        lines.append(f"# layer {i} bias")
        lines.append(" ".join(repr(float(v)) for v in layer.bias))
    Path(path).write_text("\n".join(lines) + "\n")


def _header(lines, i, key):
    if i >= len(lines):
        raise ClassifierFormatError(f"missing '{key}' header line")
    parts = lines[i][1].split()
    if not parts or parts[0] != key:
        raise ClassifierFormatError(f"line {lines[i][0]}: expected '{key} ...'")
    return parts[1:]


def _ints(lines, i, key):
    vals = _header(lines, i, key)
    try:
        return [int(v) for v in vals]
    except ValueError:
        raise ClassifierFormatError(f"line {lines[i][0]}: '{key}' needs integers") from None


def _floats(line_no, text, n):
    try:
        vals = [float(t) for t in text.split()]
    except ValueError:
        raise ClassifierFormatError(f"line {line_no}: non-numeric entry") from None
    if len(vals) != n:
        raise ClassifierFormatError(f"line {line_no}: expected {n} numbers, found {len(vals)}")
    if not all(math.isfinite(v) for v in vals):
        raise ClassifierFormatError(f"line {line_no}: non-finite weight")
    return vals


def parse_classifier(text: str) -> ClassifierModel:
    lines = [
        (n, s.strip())
        for n, s in enumerate(text.splitlines(), 1)
        if s.strip() and not s.strip().startswith("#")
    ]
    if not lines or lines[0][1] != MAGIC:
        raise ClassifierFormatError(f"first line must be '{MAGIC}'")
    n_layers = _ints(lines, 1, "n_layers")
    dims = _ints(lines, 2, "dims")
    if len(n_layers) != 1:
        raise ClassifierFormatError(f"line {lines[1][0]}: n_layers takes one value")
    (n_layers,) = n_layers
    acts = _header(lines, 3, "activations")
    if n_layers < 1 or len(dims) != n_layers + 1 or len(acts) != n_layers:
        raise ClassifierFormatError("header sizes disagree: need n_layers+1 dims and n_layers activations")
    if any(d < 1 for d in dims):
        raise ClassifierFormatError("dimensions must be positive")
    if any(a not in ACTIVATIONS for a in acts):
        raise ClassifierFormatError(f"activations must be one of {ACTIVATIONS}")

    pos = 4
    layers = []
    for k in range(n_layers):
        d_in, d_out = dims[k], dims[k + 1]
        if pos + d_out + 1 > len(lines):
            raise ClassifierFormatError(f"file ends inside layer {k}")
        W = [_floats(*lines[pos + r], d_in) for r in range(d_out)]
        b = _floats(*lines[pos + d_out], d_out)
        pos += d_out + 1
        layers.append(Layer(np.array(W), np.array(b), acts[k]))
    if pos != len(lines):
        raise ClassifierFormatError(f"line {lines[pos][0]}: trailing data after the last layer")
    try:
        return ClassifierModel(layers)
    except ValueError as exc:
        raise ClassifierFormatError(str(exc)) from None


def load_classifier(path) -> ClassifierModel:
    return parse_classifier(Path(path).read_text())
