import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp
from sklearn.metrics import average_precision_score, roc_auc_score

from odforge.exceptions import AllTies, DimensionMismatch, SingleClass, ValidationError
from odforge.metrics import (
    EloParams,
    PerfTable,
    auprc,
    auroc,
    avg_rank,
    champion_delta,
    elo,
    pairwise_pvalues,
    permutation_test,
    rauc,
    summarize,
    winrate,
)


# ---------------------------------------------------------------- oracles

def auroc_pairs(s, y):
    pos, neg = s[y == 1], s[y == 0]
    gt = (pos[:, None] > neg[None, :]).sum()
    eq = (pos[:, None] == neg[None, :]).sum()
    return (gt + 0.5 * eq) / (pos.size * neg.size)


def ap_steps(s, y):
    """AP = sum over distinct thresholds of (recall gain) x precision."""
    total = 0.0
    prev_recall = 0.0
    n_pos = y.sum()
    for thr in sorted(set(s.tolist()), reverse=True):
        sel = s >= thr
        tp = y[sel].sum()
        recall = tp / n_pos
        total += (recall - prev_recall) * tp / sel.sum()
        prev_recall = recall
    return total


def random_instance(rng):
    n = int(rng.integers(2, 60))
    y = rng.integers(0, 2, n)
    y[0], y[1] = 0, 1
    if rng.random() < 0.5:
        s = rng.integers(0, 5, n).astype(float)  # heavy ties
    else:
        s = rng.standard_normal(n)
    return s, y


# ---------------------------------------------------------------- AUROC / AUPRC

def test_auroc_and_auprc_match_oracles():
    rng = np.random.default_rng(0)
    for _ in range(300):
        s, y = random_instance(rng)
        assert abs(auroc(s, y) - auroc_pairs(s, y)) <= 1e-12
        assert abs(auprc(s, y) - ap_steps(s, y)) <= 1e-12


def test_against_sklearn():
    rng = np.random.default_rng(1)
    for _ in range(50):
        s, y = random_instance(rng)
        assert auroc(s, y) == pytest.approx(roc_auc_score(y, s), abs=1e-12)
        assert auprc(s, y) == pytest.approx(average_precision_score(y, s), abs=1e-12)


def test_metric_edge_cases():
    assert auroc([0.1, 0.9], [0, 1]) == 1.0
    assert auroc([0.9, 0.1], [0, 1]) == 0.0
    assert auroc([1, 1, 1], [0, 1, 0]) == 0.5
    assert auprc([1, 1, 1, 1], [0, 1, 0, 0]) == 0.25  # all tied: prevalence
    assert auprc([3, 2, 1], [1, 0, 1]) == pytest.approx((1 + 2 / 3) / 2)
    with pytest.raises(SingleClass):
        auroc([1, 2], [1, 1])
    with pytest.raises(SingleClass):
        auprc([1, 2], [0, 0])
    with pytest.raises(DimensionMismatch):
        auroc([1, 2, 3], [0, 1])


@given(st.data())
def test_auroc_is_rank_invariant(data):
    n = data.draw(st.integers(2, 40))
    s = data.draw(hnp.arrays(np.float64, n, elements=st.floats(-1e6, 1e6)))
    y = np.array(data.draw(st.lists(st.integers(0, 1), min_size=n, max_size=n)))
    y[0], y[-1] = 0, 1
    base = auroc(s, y)
    assert 0.0 <= base <= 1.0
    # power-of-two scaling is exact, so strictly order preserving
    assert auroc(4.0 * s, y) == base
    assert auroc(-s, y) == pytest.approx(1.0 - base, abs=1e-12)
    assert 0.0 <= auprc(s, y) <= 1.0


# ---------------------------------------------------------------- tables

def table(values, kind="auroc"):
    v = np.asarray(values, dtype=float)
    return PerfTable([f"m{i}" for i in range(v.shape[0])], [f"d{j}" for j in range(v.shape[1])], v, kind)


def test_perf_table_validation():
    with pytest.raises(DimensionMismatch):
        PerfTable(["a"], ["x", "y"], [[0.5]])
    with pytest.raises(ValidationError):
        table([[0.5, np.nan]])
    with pytest.raises(ValidationError):
        table([[1.5]])
    with pytest.raises(ValidationError):
        avg_rank(table([[0.5, 0.6]]))


def test_dominant_method():
    t = table([[0.9, 0.8, 0.95], [0.6, 0.5, 0.7]])
    assert avg_rank(t).tolist() == [1.0, 2.0]
    assert winrate(t).tolist() == [1.0, 0.0]
    assert rauc(t).tolist() == [1.0, 0.0]
    assert champion_delta(t)[0] == 0.0
    r = elo(t)
    assert r[0] > 1000 > r[1]


def test_rank_ties_share_positions():
    t = table([[0.7, 0.7], [0.7, 0.5], [0.6, 0.9]])
    np.testing.assert_allclose(avg_rank(t), [(1.5 + 2) / 2, (1.5 + 3) / 2, (3 + 1) / 2])


def test_champion_delta_value():
    # errors 0.2 vs 0.1 -> (1 - 0.1/0.2) * 100 = 50
    t = table([[0.9], [0.8]])
    np.testing.assert_allclose(champion_delta(t), [0.0, 50.0])


perf_tables = st.integers(2, 6).flatmap(
    lambda m: st.integers(1, 12).flatmap(
        lambda n: hnp.arrays(np.float64, (m, n), elements=st.sampled_from([0.0, 0.25, 0.5, 0.7, 0.7001, 0.9, 1.0]))
        | hnp.arrays(np.float64, (m, n), elements=st.floats(0, 1))
    )
)


@given(perf_tables)
def test_conservation_laws(values):
    t = table(values)
    m = values.shape[0]
    assert avg_rank(t).sum() == pytest.approx(m * (m + 1) / 2, abs=1e-9)
    assert winrate(t).sum() == pytest.approx(m / 2, abs=1e-9)
    r = rauc(t)
    assert np.all((r >= 0) & (r <= 1))
    cd = champion_delta(t)
    assert np.all(cd >= 0)
    champ = np.argmin(t.errors.mean(axis=1))
    if np.all(t.errors[champ] == t.errors.min(axis=0)):
        assert cd[champ] == 0.0
    assert elo(t).sum() == 1000.0 * m


@given(perf_tables, st.floats(1, 64), st.floats(0, 5))
def test_elo_pool_is_exactly_conserved(values, k, eps):
    t = table(values)
    p = EloParams(r0=1500.0, k_factor=k, tie_eps=eps)
    assert elo(t, p).sum() == 1500.0 * values.shape[0]
    assert elo(t, p, canonical_order=False).sum() == 1500.0 * values.shape[0]


def test_elo_canonical_order_ignores_column_order():
    rng = np.random.default_rng(4)
    v = rng.random((4, 30))
    t = table(v)
    perm = rng.permutation(30)
    t2 = PerfTable(t.methods, [t.datasets[j] for j in perm], v[:, perm])
    assert np.array_equal(elo(t), elo(t2))


def test_elo_tie_threshold():
    # 0.3 percentage points apart: a tie with the default 0.5 threshold
    t = table([[0.803], [0.800]])
    assert elo(t).tolist() == [1000.0, 1000.0]
    assert elo(t, EloParams(tie_eps=0.1))[0] > 1000.0


def test_elo_single_game_value():
    t = table([[0.9], [0.1]])
    np.testing.assert_allclose(elo(t), [1016.0, 984.0], atol=1e-9)


# ---------------------------------------------------------------- permutation test

def brute_p(a, b):
    d = np.asarray(a) - np.asarray(b)
    d = d[d != 0]
    t = d.sum()
    hits = sum(np.dot(signs, np.abs(d)) >= t - 1e-12
               for signs in itertools.product([-1, 1], repeat=d.size))
    return hits / 2**d.size


def test_permtest_three_positive_differences():
    assert permutation_test([1, 2, 3], [0, 0, 0]) == 0.125


def test_permtest_exact_matches_enumeration():
    rng = np.random.default_rng(7)
    for _ in range(30):
        n = int(rng.integers(1, 11))
        a = rng.integers(0, 4, n) / 4
        b = rng.integers(0, 4, n) / 4
        if np.all(a == b):
            continue
        assert permutation_test(a, b) == brute_p(a, b)


def test_permtest_sign_flip_symmetry():
    # Pr(T_b >= T) + Pr(T_b <= T) = 1 + Pr(T_b = T)
    a, b = [0.3, 0.5, 0.9, 0.1], [0.2, 0.6, 0.4, 0.4]
    p1 = permutation_test(a, b)
    p2 = permutation_test(b, a)
    assert p1 + p2 >= 1.0


def test_permtest_errors():
    with pytest.raises(AllTies):
        permutation_test([1, 2], [1, 2])
    with pytest.raises(DimensionMismatch):
        permutation_test([1, 2], [1])


def test_permtest_monte_carlo_agrees_with_exact():
    rng = np.random.default_rng(11)
    a, b = rng.random(25), rng.random(25)
    exact = permutation_test(a, b, exact_max_n=25)
    budget = 20_000
    mc = permutation_test(a, b, budget=budget, seed=3)
    se = np.sqrt(exact * (1 - exact) / budget)
    assert abs(mc - exact) <= 3 * se + 1 / budget
    assert permutation_test(a, b, budget=budget, seed=3) == mc


def test_pairwise_pvalue_matrix():
    t = table([[0.9, 0.8, 0.7, 0.95], [0.5, 0.6, 0.55, 0.4], [0.9, 0.8, 0.7, 0.95]])
    p = pairwise_pvalues(t)
    assert np.all(np.diag(p) == 0.5)
    assert p[0, 2] == 0.5  # identical rows
    assert p[0, 1] == 1 / 16


def test_summarize_matches_direct_calls():
    rng = np.random.default_rng(2)
    roc, prc = table(rng.random((3, 8))), table(rng.random((3, 8)), "auprc")
    rep = summarize(roc, prc)
    assert np.array_equal(rep["avg_rank"], avg_rank(roc))
    assert np.array_equal(rep["elo"], elo(roc))
    assert np.array_equal(rep["mean_auprc"], prc.values.mean(axis=1))
    rep2 = summarize(roc, prc, rank_on="auprc")
    assert np.array_equal(rep2["winrate"], winrate(prc))
