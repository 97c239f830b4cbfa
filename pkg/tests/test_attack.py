import json
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from zoha.attack import (
    PROB_FLOOR,
    AttackResult,
    AttackSpec,
    ClassifierFormatError,
    ClassifierModel,
    Layer,
    attack_suite,
    class_probs,
    load_classifier,
    loss_targeted,
    loss_untargeted,
    margin_targeted,
    margin_untargeted,
    parse_classifier,
    run_attack,
    save_classifier,
    softmax,
    summarize,
)
from zoha.bench.config import preset_variant
from zoha.fixtures import (
    FIXTURES,
    golden_path,
    load_fixture,
    reference_scores,
    synthetic_inputs,
)

Z = np.array([0.7, 0.2, 0.1])


def identity2():
    return ClassifierModel([Layer(np.eye(2), np.zeros(2))])


def scores_model(scores):
    """A model whose scores are ``scores`` at x = 0."""
    s = np.asarray(scores, dtype=float)
    return ClassifierModel([Layer(np.zeros((s.size, 1)), s)])


def diag_solver(seed=0):
    return replace(preset_variant("mnist-untargeted", "ZOHA-Diag").solver, seed=seed)


def test_class_probs_examples():
    np.testing.assert_allclose(class_probs(identity2(), np.zeros(2)), [0.5, 0.5])
    e = math.e
    np.testing.assert_allclose(class_probs(identity2(), np.array([1.0, 0.0])), [e / (e + 1), 1 / (e + 1)], rtol=1e-14)
    assert class_probs(identity2(), np.array([1.0, 0.0]))[0] == pytest.approx(0.7311, abs=1e-4)
    with pytest.raises(ValueError):
        class_probs(identity2(), np.zeros(3))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=2, max_size=8), st.floats(-100, 100))
def test_softmax_is_a_distribution_and_shift_invariant(scores, c):
    p = softmax(scores)
    assert np.all(p > 0)
    assert abs(p.sum() - 1.0) <= 1e-12
    assert np.argmax(softmax(np.array(scores) + c)) == np.argmax(p)


def test_loss_examples():
    assert margin_targeted(Z, 1, 1.0) == pytest.approx(math.log(0.7) - math.log(0.2))
    assert margin_targeted(Z, 1, 1.0) == pytest.approx(1.2528, abs=1e-4)
    assert margin_targeted(Z, 0, 1.0) == -1.0
    assert margin_untargeted(Z, 0, 1.0) == pytest.approx(1.2528, abs=1e-4)
    assert margin_untargeted(np.array([0.2, 0.7, 0.1]), 0, 1.0) == -1.0
    # omega = 0 floors at zero
    assert margin_targeted(Z, 0, 0.0) == 0.0
    assert margin_targeted(np.array([0.5, 0.5]), 0, 0.0) == 0.0


def test_losses_through_the_model():
    m = scores_model(np.log(Z))
    assert loss_targeted(m, np.zeros(1), 1) == pytest.approx(1.2528, abs=1e-4)
    assert loss_untargeted(m, np.zeros(1), 0) == pytest.approx(1.2528, abs=1e-4)
    assert loss_untargeted(m, np.zeros(1), 1, omega=1.0) == -1.0
    with pytest.raises(ValueError):
        loss_targeted(m, np.zeros(1), 3)


def test_zero_probability_is_clamped():
    m = scores_model([0.0, -2000.0])  # second probability underflows to 0
    assert class_probs(m, np.zeros(1))[1] == 0.0
    val = loss_targeted(m, np.zeros(1), 1, omega=1.0)
    assert math.isfinite(val)
    assert val == pytest.approx(-math.log(PROB_FLOOR))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-20, 20), min_size=3, max_size=3), st.integers(0, 2))
def test_untargeted_floor_witnesses_misclassification(scores, label):
    p = softmax(scores)
    val = margin_untargeted(p, label, 1.0)
    if val < 0:
        assert np.argmax(p) != label or np.sum(p == p[label]) > 1


def test_spec_validation():
    with pytest.raises(ValueError):
        AttackSpec("sideways", 0, 0.1)
    with pytest.raises(ValueError):
        AttackSpec("targeted", 0, -0.1)
    with pytest.raises(ValueError):
        AttackSpec("targeted", 0, 0.1, omega=-1)


def test_model_validation():
    with pytest.raises(ValueError):
        ClassifierModel([Layer(np.eye(2), np.zeros(2)), Layer(np.eye(3), np.zeros(3))])
    with pytest.raises(ValueError):
        ClassifierModel([Layer(np.ones((1, 2)), np.zeros(1))])  # one class
    with pytest.raises(ValueError):
        Layer(np.eye(2), np.zeros(2), "tanh")


def test_targeted_current_argmax_succeeds_immediately():
    model = load_fixture("linear3")
    X, labels = synthetic_inputs("linear3", 3)
    res = run_attack(model, X[0], AttackSpec("targeted", int(labels[0]), 0.2), diag_solver())
    assert res.success and res.iterations == 0
    assert res.queries_used == 1
    assert np.array_equal(res.adversarial_point, X[0])


def test_zero_radius_pins_the_input():
    model = load_fixture("linear3")
    X, labels = synthetic_inputs("linear3", 2)
    res = run_attack(model, X[1], AttackSpec("untargeted", int(labels[1]), 0.0, query_cap=300), diag_solver())
    assert not res.success and res.terminated_by == "queries"
    assert np.array_equal(res.adversarial_point, X[1])
    # already misclassified: immediate success
    wrong = (int(labels[1]) + 1) % 3
    res = run_attack(model, X[1], AttackSpec("untargeted", wrong, 0.0, query_cap=300), diag_solver())
    assert res.success and res.queries_used == 1


def test_attack_rejects_out_of_bounds_start():
    model = load_fixture("linear3")
    with pytest.raises(ValueError):
        run_attack(model, np.full(8, 1.5), AttackSpec("untargeted", 0, 0.2), diag_solver())


def test_successes_are_genuine_and_feasible():
    model = load_fixture("linear3")
    X, labels = synthetic_inputs("linear3", 12, seed=3)
    specs = [AttackSpec("untargeted", int(l), 0.3) for l in labels]
    summary = attack_suite(model, X, specs, diag_solver(5), threads=2)
    assert summary.n_success >= 10
    for x0, spec, r in zip(X, specs, summary.results):
        assert np.all(np.abs(r.adversarial_point - x0) <= spec.epsilon)
        assert np.all((r.adversarial_point >= 0) & (r.adversarial_point <= 1))
        # re-evaluate with the loop-based reference, not the numpy forward pass
        pred = int(np.argmax(reference_scores(model, r.adversarial_point)))
        assert (pred != spec.label) == r.success
        assert r.queries_used <= spec.query_cap


def test_attack_suite_thread_count_does_not_change_results():
    model = load_fixture("linear3")
    X, labels = synthetic_inputs("linear3", 6, seed=4)
    specs = [AttackSpec("targeted", (int(l) + 1) % 3, 0.3) for l in labels]
    a = attack_suite(model, X, specs, diag_solver(1), threads=1)
    b = attack_suite(model, X, specs, diag_solver(1), threads=3)
    assert [r.queries_used for r in a.results] == [r.queries_used for r in b.results]
    assert all(np.array_equal(p.adversarial_point, q.adversarial_point) for p, q in zip(a.results, b.results))


def _result(success, q):
    return AttackResult(success, np.zeros(1), q, 1, 0.0)


def test_summary_statistics():
    s = summarize([_result(True, 100), _result(True, 300)])
    assert (s.success_rate, s.median_queries, s.average_queries) == (1.0, 200.0, 200.0)
    s = summarize([_result(False, 50), _result(False, 70)])
    assert s.success_rate == 0.0 and s.median_queries is None and s.average_queries is None
    s = summarize([_result(True, 10), _result(False, 5000), _result(True, 30), _result(True, 20)])
    assert s.success_rate == 0.75 and s.median_queries == 20.0 and s.average_queries == 20.0


def test_attack_suite_needs_inputs():
    with pytest.raises(ValueError):
        attack_suite(load_fixture("linear3"), [], AttackSpec("untargeted", 0, 0.2), diag_solver())


# -- classifier files ------------------------------------------------------


def random_model(seed):
    rng = np.random.default_rng(seed)
    dims = [int(v) for v in rng.integers(1, 6, size=int(rng.integers(2, 5)))]
    dims[-1] = max(dims[-1], 2)
    acts = ["relu"] * (len(dims) - 2) + ["none"]
    return ClassifierModel(
        [Layer(rng.standard_normal((dims[i + 1], dims[i])), rng.standard_normal(dims[i + 1]), acts[i]) for i in range(len(dims) - 1)]
    )


@pytest.mark.parametrize("seed", range(6))
def test_classifier_file_round_trip(tmp_path, seed):
    model = random_model(seed)
    path = tmp_path / "m.txt"
    save_classifier(model, path)
    back = load_classifier(path)
    for a, b in zip(model.layers, back.layers):
        assert np.array_equal(a.weight, b.weight) and np.array_equal(a.bias, b.bias)
        assert a.activation == b.activation


def test_identity_file_gives_uniform_probs():
    text = "zoha-classifier 1\nn_layers 1\ndims 2 2\nactivations none\n1 0\n0 1\n0 0\n"
    np.testing.assert_allclose(class_probs(parse_classifier(text), np.zeros(2)), [0.5, 0.5])


HEADER = "zoha-classifier 1\nn_layers 1\ndims 2 2\nactivations none\n"


@pytest.mark.parametrize(
    "text, fragment",
    [
        ("", "first line"),
        ("zoha-classifier 2\n", "first line"),
        ("zoha-classifier 1\nlayers 1\n", "line 2"),
        ("zoha-classifier 1\nn_layers 2\ndims 2 2\nactivations none\n", "header sizes"),
        ("zoha-classifier 1\nn_layers 1\ndims 2 2\nactivations tanh\n", "activations"),
        (HEADER + "1 0\n0 1\n", "ends inside"),
        (HEADER + "1 0 3\n0 1\n0 0\n", "line 5"),
        (HEADER + "1 x\n0 1\n0 0\n", "non-numeric"),
        (HEADER + "1 nan\n0 1\n0 0\n", "non-finite"),
        (HEADER + "1 0\n0 1\n0 0\n7\n", "trailing"),
        ("zoha-classifier 1\nn_layers 1\ndims 2 1\nactivations none\n1 0\n0\n", "two classes"),
        ("zoha-classifier 1\nn_layers one\n", "line 2: 'n_layers' needs integers"),
    ],
)
def test_malformed_classifier_files(text, fragment):
    with pytest.raises(ClassifierFormatError, match=fragment):
        parse_classifier(text)


@pytest.mark.parametrize("name", FIXTURES)
def test_fixture_matches_golden_scores(name):
    model = load_fixture(name)
    golden = json.loads(golden_path(name).read_text())
    for x, label, scores in zip(golden["inputs"], golden["labels"], golden["scores"]):
        np.testing.assert_allclose(model.scores(np.array(x)), scores, rtol=1e-12, atol=1e-12)
        assert model.predict(np.array(x)) == label


@pytest.mark.parametrize("name", FIXTURES)
def test_fixture_classifies_its_inputs(name):
    model = load_fixture(name)
    X, labels = synthetic_inputs(name, 200, seed=9)
    assert np.mean([model.predict(x) == l for x, l in zip(X, labels)]) >= 0.95
