"""Shipped fixture classifiers and their synthetic input sets.

Everything here is a pure function of frozen seeds. ``python3 -m
zoha.fixtures`` rewrites the files under ``zoha/data``; the golden logits
are computed with plain Python loops so they do not share code with the
numpy forward pass they later check.
"""
from __future__ import annotations

import json
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from .attack import ClassifierModel, Layer, load_classifier, save_classifier

FIXTURES = ("linear3", "mlp64")
_SEEDS = {"linear3": 20231, "mlp64": 20232}


def _rng(name, stream):
    return np.random.default_rng(np.random.SeedSequence(_SEEDS[name], spawn_key=(stream,)))


def _centroids(name):
    if name == "linear3":
        return _rng(name, 0).uniform(0.25, 0.75, size=(3, 8))
    return _rng(name, 0).uniform(0.2, 0.8, size=(4, 64))


def build_linear3() -> ClassifierModel:
    """Nearest-centroid rule as a softmax-linear model (temperature 10)."""
    C = _centroids("linear3")
    temp = 10.0
    W = temp * C
    b = -0.5 * temp * np.sum(C * C, axis=1)
    return ClassifierModel([Layer(W, b, "none")])


def build_mlp64(hidden: int = 32, n_train: int = 400, ridge: float = 1e-2) -> ClassifierModel:
    """Random ReLU features with a ridge-regression readout onto one-hot targets."""
    C = _centroids("mlp64")
    rng = _rng("mlp64", 1)
    W1 = rng.standard_normal((hidden, 64)) / np.sqrt(64)
    b1 = rng.standard_normal(hidden) * 0.1
    labels = np.arange(n_train) % len(C)
    X = np.clip(C[labels] + 0.08 * rng.standard_normal((n_train, 64)), 0.0, 1.0)
    H = np.maximum(X @ W1.T + b1, 0.0)
    Hb = np.hstack([H, np.ones((n_train, 1))])
    Y = 4.0 * (np.eye(len(C))[labels] - 0.5)
    sol = np.linalg.solve(Hb.T @ Hb + ridge * np.eye(hidden + 1), Hb.T @ Y)
    return ClassifierModel([Layer(W1, b1, "relu"), Layer(sol[:-1].T, sol[-1], "none")])


BUILDERS = {"linear3": build_linear3, "mlp64": build_mlp64}


def synthetic_inputs(name: str, n: int, seed: int = 0):
    """``n`` points in [0, 1]^d near the class centroids, labels cycling 0, 1, 2, ..."""
    C = _centroids(name)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(_SEEDS[name], 2)))
    labels = np.arange(n) % len(C)
    noise = 0.04 if name == "linear3" else 0.06
    X = np.clip(C[labels] + noise * rng.standard_normal((n, C.shape[1])), 0.0, 1.0)
    return X, labels


def fixture_path(name: str) -> Path:
    if name not in BUILDERS:
        raise KeyError(f"unknown fixture {name!r}; known: {list(BUILDERS)}")
    return Path(str(resources.files("zoha") / "data" / f"{name}.txt"))


def golden_path(name: str) -> Path:
    return fixture_path(name).with_name(f"{name}_golden.json")


def load_fixture(name: str) -> ClassifierModel:
    return load_classifier(fixture_path(name))


def resolve_classifier(ref) -> ClassifierModel:
    """A fixture name or a path to a classifier file."""
    if str(ref) in BUILDERS:
        return load_fixture(str(ref))
    return load_classifier(ref)


def reference_scores(model: ClassifierModel, x) -> list:
    """Forward pass with Python floats and explicit loops."""
    h = [float(v) for v in x]
    for layer in model.layers:
        out = []
        for row, bias in zip(layer.weight.tolist(), layer.bias.tolist()):
            acc = 0.0
            for w, v in zip(row, h):
                acc += w * v
            acc += bias
            out.append(max(acc, 0.0) if layer.activation == "relu" else acc)
        h = out
    return h


def write_fixtures(directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, build in BUILDERS.items():
        path = directory / f"{name}.txt"
        save_classifier(build(), path)
        model = load_classifier(path)
        X, labels = synthetic_inputs(name, 5, seed=0)
        golden = {
            "inputs": X.tolist(),
            "labels": labels.tolist(),
            "scores": [reference_scores(model, x) for x in X],
        }
        (directory / f"{name}_golden.json").write_text(json.dumps(golden, indent=1) + "\n")


if __name__ == "__main__":
    write_fixtures(sys.argv[1] if len(sys.argv) > 1 else Path(__file__).parent / "data")
