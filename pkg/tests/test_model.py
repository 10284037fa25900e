import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _oracles import all_samples, joint_table, random_model
from bncq.data import DiscreteDataset, one_hot_encode
from bncq.losses import nll_loss
from bncq.model import (
    BncModel,
    Cpt,
    TanStructure,
    log_joint,
    logsumexp,
    normalize_logits,
    param_count,
    predict,
    to_affine,
)
from bncq.quant import BnQuantConfig, quantize_bn


def test_normalize_logits_examples():
    np.testing.assert_allclose(normalize_logits([0.0, 0.0]), [-math.log(2)] * 2)
    np.testing.assert_allclose(normalize_logits([1.0, 0.0]), [-0.3133, -1.3133], atol=5e-5)
    big = normalize_logits([1000.0, 0.0])
    assert np.all(np.isfinite(big))
    np.testing.assert_allclose(big, [0.0, -1000.0], atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=8))
def test_normalized_cpt_sums_to_one(rho):
    theta = normalize_logits(rho)
    assert np.all(theta <= 0)
    assert abs(np.exp(theta).sum() - 1) < 1e-6


def test_structure_validation():
    TanStructure([-1, 0, 1])
    with pytest.raises(ValueError):
        TanStructure([1, -1])  # parent does not precede the child
    TanStructure([1, -1], ordering=[1, 0])
    with pytest.raises(ValueError):
        TanStructure([-1, -1], ordering=[0, 0])


def test_model_rejects_inconsistent_cpts():
    with pytest.raises(ValueError):
        BncModel([2, 2], 2, Cpt(np.zeros(2)), [Cpt(np.zeros((1, 2, 2)))], TanStructure.naive_bayes(2))
    with pytest.raises(ValueError):
        BncModel([2], 2, Cpt(np.zeros(2)), [Cpt(np.zeros((1, 2, 3)))], TanStructure.naive_bayes(1))


def test_log_joint_uniform_and_empty():
    m = BncModel.uniform([2, 2], 2)
    np.testing.assert_allclose(log_joint(m, [0, 1]), [-3 * math.log(2)] * 2)
    empty = BncModel.from_logits([], 3, np.log([0.2, 0.3, 0.5]), [], TanStructure([]))
    np.testing.assert_allclose(log_joint(empty, np.zeros((2, 0))), np.log([[0.2, 0.3, 0.5]] * 2))
    with pytest.raises(ValueError):
        log_joint(m, [0, 2])


def test_log_joint_and_nll_match_enumeration():
    rng = np.random.default_rng(0)
    for _ in range(30):
        m = random_model(rng)
        xs, table = joint_table(m)
        np.testing.assert_allclose(log_joint(m, xs), np.log(table), rtol=0, atol=1e-9)
        labels = rng.integers(0, m.num_classes, size=len(xs))
        want = -np.mean(np.log(table[np.arange(len(xs)), labels]))
        assert abs(nll_loss(m, xs, labels) - want) < 1e-9


def test_log_joint_of_quantized_model_does_not_renormalize():
    rng = np.random.default_rng(1)
    m = random_model(rng, quant=BnQuantConfig(2, 1))
    assert m.quantized
    x = all_samples(m.cardinalities)[:1]
    want = quantize_bn(m.prior.theta, m.quant).copy()
    for i, cpt in enumerate(m.cpts):
        p = m.structure.parents[i]
        want += quantize_bn(cpt.theta, m.quant)[0 if p < 0 else x[0, p], :, x[0, i]]
    np.testing.assert_array_equal(log_joint(m, x)[0], want)


def test_predict_examples():
    m = BncModel.from_logits([2], 2, np.log([0.9, 0.1]), [np.zeros((1, 2, 2))], TanStructure.naive_bayes(1))
    assert predict(m, [1]) == 0
    tied = BncModel.uniform([3], 3)
    assert np.all(predict(tied, [[0], [1], [2]]) == 0)


def test_predict_matches_enumeration_and_is_shift_invariant():
    rng = np.random.default_rng(2)
    for _ in range(10):
        m = random_model(rng, d=4, tan=True)
        xs, table = joint_table(m)
        assert np.array_equal(predict(m, xs), np.argmax(table, axis=1))
        shifted = BncModel(m.cardinalities, m.num_classes, Cpt(m.prior.theta + 3.7), m.cpts, m.structure)
        assert np.array_equal(predict(shifted, xs), predict(m, xs))


def test_to_affine_small_nb():
    m = BncModel.from_logits([2], 2, [0.3, -0.2], [np.array([[[1.0, 0.0], [0.0, 2.0]]])], TanStructure([-1]))
    w, b = to_affine(m)
    assert w.shape == (2, 2)
    np.testing.assert_array_equal(b, m.prior.theta)
    for x in ([0], [1]):
        onehot = np.eye(2)[x[0]]
        np.testing.assert_allclose(w @ onehot + b, log_joint(m, x), atol=1e-12)


def test_to_affine_equivalence_random_models():
    rng = np.random.default_rng(3)
    for k in range(40):
        m = random_model(rng, quant=BnQuantConfig(2, 2) if k % 4 == 0 else None)
        xs = all_samples(m.cardinalities)
        data = DiscreteDataset(xs, np.zeros(len(xs)), m.cardinalities, m.num_classes)
        w, b = to_affine(m)
        out = one_hot_encode(data, m.structure.parents) @ w.T + b
        assert np.max(np.abs(out - log_joint(m, xs))) < 1e-10


def test_param_count_examples():
    nb = BncModel.uniform([2, 4], 3)
    assert param_count(nb) == 21
    tan = BncModel.uniform([2, 4], 3, TanStructure([-1, 0]))
    assert param_count(tan) == 33
    assert param_count(BncModel.uniform([], 3)) == 3


def test_param_count_equals_stored_table_sizes():
    rng = np.random.default_rng(4)
    for _ in range(20):
        m = random_model(rng)
        assert param_count(m) == m.prior.size + sum(c.size for c in m.cpts)


def test_logsumexp_handles_neg_inf():
    assert logsumexp(np.array([-np.inf, -np.inf])) == -np.inf
    assert logsumexp(np.array([-np.inf, 0.0])) == 0.0


def test_serialization_roundtrip(tmp_path):
    rng = np.random.default_rng(5)
    for quant in (None, BnQuantConfig(3, 2)):
        m = random_model(rng, d=3, tan=True, quant=quant)
        m.save(tmp_path / "m.json")
        back = BncModel.load(tmp_path / "m.json")
        assert back.structure == m.structure and back.quant == m.quant
        xs = all_samples(m.cardinalities)
        np.testing.assert_array_equal(log_joint(back, xs), log_joint(m, xs))
