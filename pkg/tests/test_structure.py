import json

import numpy as np
import pytest
from scipy import stats

from _oracles import all_samples, all_structures, central_diff, random_distribution, rel_err
from bncq.data import DiscreteDataset
from bncq.losses import HybridConfig, hybrid_from_joint, hybrid_loss
from bncq.model import BncModel, Cpt, TanStructure, log_joint, param_count, param_count_for
from bncq.optim import OptimizerConfig
from bncq.structure import (
    SizePenaltyConfig,
    StructureDistribution,
    StructureTrainer,
    expected_model_size,
    expected_model_size_grad,
    gumbel_softmax_backward,
    random_candidates,
    sample_structure,
    save_structure,
    select_map_structure,
    structure_log_joint,
    structure_loss,
    train_structure,
)


def test_expected_size_worked_example():
    dist = StructureDistribution.uniform([[], [0]], [0, 1])
    assert np.allclose(dist.probs()[1, :2], 0.5)
    assert expected_model_size(dist, [2, 2], 3) == 18.0
    enum = sum(p * param_count_for([2, 2], par, 3) for par, p in all_structures(dist))
    assert enum == 18.0


def test_expected_size_matches_enumeration():
    rng = np.random.default_rng(0)
    for _ in range(50):
        d = int(rng.integers(1, 5))
        card = [int(k) for k in rng.integers(2, 5, size=d)]
        c = int(rng.integers(2, 4))
        dist = random_distribution(rng, d)
        enum = sum(p * param_count_for(card, par, c) for par, p in all_structures(dist))
        assert abs(expected_model_size(dist, card, c) - enum) < 1e-9


def test_expected_size_degenerate_and_monotone():
    dist = StructureDistribution.uniform([[], [0], [0, 1]], [0, 1, 2])
    dist.logits[:] = -np.inf
    dist.logits[:, 0] = 0.0
    dist.logits[2, 0], dist.logits[2, 2] = -np.inf, 0.0
    card = [2, 3, 4]
    assert expected_model_size(dist, card, 2) == param_count_for(card, [-1, -1, 1], 2)
    base = StructureDistribution.uniform([[], [0]], [0, 1])
    sizes = []
    for shift in np.linspace(-5, 5, 11):
        base.logits[1, 1] = shift
        sizes.append(expected_model_size(base, [3, 3], 2))
    assert np.all(np.diff(sizes) >= 0)


def test_expected_size_gradient_finite_differences():
    rng = np.random.default_rng(1)
    for _ in range(10):
        dist = random_distribution(rng, 4)
        card, c = [3, 2, 4, 3], 3
        g = expected_model_size_grad(dist, card, c)
        work = dist.logits.copy()
        work[~dist.valid] = 0.0

        def f():
            d2 = StructureDistribution(dist.candidates, work.copy(), dist.ordering)
            return expected_model_size(d2, card, c)

        num = central_diff(f, work)
        num[~dist.valid] = 0.0
        assert rel_err(g, num, 1e-3) < 1e-4


def test_sampler_examples():
    dist = StructureDistribution.uniform([[], [0]], [0, 1])
    rng = np.random.default_rng(0)
    dist.logits[1] = [100.0, 0.0]
    picks = [sample_structure(dist, 1.0, rng)[0][1, 0] for _ in range(1000)]
    assert all(p == 1.0 for p in picks)
    dist.logits[1] = [0.0, 0.0]
    freq = np.mean([sample_structure(dist, 1.0, rng)[0][1, 0] for _ in range(10_000)])
    assert abs(freq - 0.5) <= 0.02


def test_hard_samples_are_one_hot_on_valid_slots():
    rng = np.random.default_rng(2)
    dist = random_distribution(rng, 6)
    for _ in range(200):
        hard, soft = sample_structure(dist, 0.7, rng)
        assert np.all(hard.sum(axis=1) == 1) and set(np.unique(hard)) <= {0.0, 1.0}
        assert np.all(hard[~dist.valid] == 0)
        np.testing.assert_allclose(soft.sum(axis=1), 1.0)
    with pytest.raises(ValueError):
        sample_structure(dist, 0.0, rng)


def test_gumbel_argmax_is_exact_categorical_sampling():
    rng = np.random.default_rng(3)
    for _ in range(10):
        k = int(rng.integers(2, 7))
        # the last feature has every other feature as candidate: k slots
        cands = [[]] * (k - 1) + [list(range(k - 1))]
        dist = StructureDistribution.uniform(cands, list(range(k)))
        dist.logits[k - 1] = rng.normal(scale=1.0, size=k)
        tau = float(rng.uniform(0.2, 3.0))
        counts = np.zeros(k)
        for _ in range(10_000):
            counts[np.argmax(sample_structure(dist, tau, rng)[0][k - 1])] += 1
        expected = 10_000 * dist.probs()[k - 1]
        assert stats.chisquare(counts, expected).pvalue > 0.01


def test_gumbel_backward_matches_soft_relaxation():
    rng = np.random.default_rng(4)
    logits = rng.normal(size=(3, 4))
    noise = rng.normal(size=(3, 4))
    g = rng.normal(size=(3, 4))
    tau = 0.6

    def f():
        z = (logits + noise) / tau
        soft = np.exp(z - z.max(axis=1, keepdims=True))
        soft /= soft.sum(axis=1, keepdims=True)
        return float((soft * g).sum())

    z = (logits + noise) / tau
    soft = np.exp(z - z.max(axis=1, keepdims=True))
    soft /= soft.sum(axis=1, keepdims=True)
    assert rel_err(gumbel_softmax_backward(soft, g, tau), central_diff(f, logits), 1e-6) < 1e-6


def _trainer(seed=0, d=3):
    rng = np.random.default_rng(seed)
    card = [int(k) for k in rng.integers(2, 4, size=d)]
    x = np.column_stack([rng.integers(0, k, size=20) for k in card])
    y = rng.integers(0, 3, size=20)
    data = DiscreteDataset(x, y, card, 3)
    ordering, cands = random_candidates(d, max_parents=8, seed=seed)
    dist = StructureDistribution.uniform(cands, ordering)
    dist.logits[dist.valid] = rng.normal(size=int(dist.valid.sum()))
    tr = StructureTrainer(data, dist, rng)
    tr.rho += rng.normal(scale=0.5, size=tr.rho.shape)
    return data, dist, tr


def _hard_for(dist, parents):
    s = np.zeros(dist.logits.shape)
    for i, p in enumerate(parents):
        s[i, 0 if p < 0 else 1 + dist.candidates[i].index(p)] = 1.0
    return s


def test_structure_log_joint_identities():
    data, dist, tr = _trainer(0, d=4)
    bank = tr.bank()
    xs = all_samples(data.cardinalities)
    for parents, _ in all_structures(dist):
        structure = TanStructure(parents, dist.ordering)
        slots = _hard_for(dist, parents).argmax(axis=1)
        cpts = [Cpt(bank.tables[i][s]) for i, s in enumerate(slots)]
        model = BncModel(data.cardinalities, 3, Cpt(bank.prior), cpts, structure)
        np.testing.assert_array_equal(structure_log_joint(bank, dist, _hard_for(dist, parents), xs), log_joint(model, xs))
    # soft mixture of two choices is the mean of the two log-joints
    i = next(k for k, c in enumerate(dist.candidates) if c)
    nb = [-1] * dist.d
    tan = list(nb)
    tan[i] = dist.candidates[i][0]
    mix = 0.5 * (_hard_for(dist, nb) + _hard_for(dist, tan))
    want = 0.5 * (structure_log_joint(bank, dist, _hard_for(dist, nb), xs)
                  + structure_log_joint(bank, dist, _hard_for(dist, tan), xs))
    np.testing.assert_allclose(structure_log_joint(bank, dist, mix, xs), want, atol=1e-12)
    with pytest.raises(ValueError):
        structure_log_joint(bank, dist, mix[:, :1], xs)


def test_structure_loss_deterministic_distribution():
    data, dist, tr = _trainer(1)
    parents = [-1] * dist.d
    for i, c in enumerate(dist.candidates):
        if c:
            parents[i] = c[-1]
    dist.logits[:] = -np.inf
    dist.logits[_hard_for(dist, parents) == 1] = 0.0
    structure = TanStructure(parents, dist.ordering)
    prior, tables = tr.extract(structure)
    model = BncModel.from_logits(data.cardinalities, 3, prior, tables, structure)
    hyb = HybridConfig(5.0, 1.0)
    for lam in (0.0, 0.01):
        loss, _ = structure_loss(dist, tr, data.samples, data.labels, hyb, SizePenaltyConfig(lam),
                                 np.random.default_rng(0))
        want = hybrid_loss(model, data.samples, data.labels, hyb) + lam * param_count(model)
        assert loss == pytest.approx(want, rel=1e-12)


def test_structure_loss_gradients_match_finite_differences():
    # the straight-through gradient equals the exact gradient of the loss as a function of
    # (CPT logits, structure weights s) evaluated at the sampled hard s, mapped through the soft relaxation
    data, dist, tr = _trainer(2)
    hyb, pen = HybridConfig(3.0, 0.5), SizePenaltyConfig(0.0, tau=0.8)
    loss, (g_prior, g_rho, g_logits) = structure_loss(dist, tr, data.samples, data.labels, hyb, pen,
                                                      np.random.default_rng(9))
    hard, soft = sample_structure(dist, pen.tau, np.random.default_rng(9))
    s = hard.copy()

    def f():
        joint = structure_log_joint(tr.bank(), dist, s, data.samples)
        return hybrid_from_joint(joint, data.labels, hyb)[0]

    assert f() == pytest.approx(loss, rel=1e-12)
    assert rel_err(g_rho, central_diff(f, tr.rho), 1e-4) < 1e-4
    assert rel_err(g_prior, central_diff(f, tr.prior_rho), 1e-4) < 1e-4
    g_s = central_diff(f, s)
    g_s[~dist.valid] = 0.0
    want = gumbel_softmax_backward(soft, g_s, pen.tau)
    want[~dist.valid] = 0.0
    assert rel_err(g_logits, want, 1e-4) < 1e-4


def test_map_selection():
    dist = StructureDistribution.uniform([[], [0], [0, 1], [0, 1, 2]], [0, 1, 2, 3])
    assert select_map_structure(dist).is_naive_bayes
    dist.logits[3] = [0.0, 0.1, 0.2, 1.0]
    assert select_map_structure(dist).parents[3] == 2
    rng = np.random.default_rng(5)
    for _ in range(50):
        d = random_distribution(rng, 6)
        s = select_map_structure(d)
        TanStructure(s.parents, s.ordering)  # raises if cyclic
        assert all(p == -1 or p in d.candidates[i] for i, p in enumerate(s.parents))


def test_random_candidates_respect_ordering_and_cap():
    ordering, cands = random_candidates(20, max_parents=8, seed=3)
    pos = {f: k for k, f in enumerate(ordering)}
    for i, c in enumerate(cands):
        assert len(c) == min(8, pos[i])
        assert all(pos[j] < pos[i] for j in c)
    assert random_candidates(20, 8, 3) == (ordering, cands)


def _dependent_data(n=600, seed=0):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, size=n)
    a = rng.integers(0, 3, size=n)
    b = np.where(rng.random(n) < 0.9, a, rng.integers(0, 3, size=n))  # b copies a, independent of y
    c = (y + (rng.random(n) < 0.2)) % 2
    return DiscreteDataset(np.column_stack([a, b, c]), y, [3, 3, 2], 2)


def test_train_structure_lambda_extremes_and_determinism(tmp_path):
    data = _dependent_data()
    opt = OptimizerConfig(lr0=3e-2, epochs=30, batch_size=50)
    cands, order = [[], [0], [0, 1]], [0, 1, 2]
    free = train_structure(data, cands, order, opt=opt, penalty=SizePenaltyConfig(0.0), seed=0)
    nb_params = param_count_for(data.cardinalities, [-1] * 3, 2)
    assert param_count(free.model) > nb_params
    assert free.structure.parents[1] == 0
    big = train_structure(data, cands, order, opt=opt, penalty=SizePenaltyConfig(1e6), seed=0)
    assert big.structure.is_naive_bayes and param_count(big.model) == nb_params
    again = train_structure(data, cands, order, opt=opt, penalty=SizePenaltyConfig(0.0), seed=0)
    assert again.structure == free.structure
    assert again.history.to_csv() == free.history.to_csv()
    assert len(free.history) == opt.epochs and len(free.finetune_history) == 3
    save_structure(free, tmp_path / "s.json")
    obj = json.loads((tmp_path / "s.json").read_text())
    assert obj["structure"]["parents"] == free.structure.parents
    back = StructureDistribution.from_dict(obj["distribution"])
    np.testing.assert_allclose(back.probs(), free.distribution.probs())


def test_distribution_validation():
    with pytest.raises(ValueError):
        StructureDistribution.uniform([[1], []], [0, 1])
    with pytest.raises(ValueError):
        StructureDistribution.uniform([[], [0, 0]], [0, 1])
    with pytest.raises(ValueError):
        SizePenaltyConfig(-1.0)
