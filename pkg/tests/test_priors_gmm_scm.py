import json

import numpy as np
import pytest
from scipy.stats import multivariate_normal

from odforge.core import n_outliers_for, rng_from
from odforge.exceptions import PerturbationBudgetExceeded, ValidationError
from odforge.priors.gmm import GmmConfig, GmmModel, generate_gmm_dataset, gmm_loglik, sample_gmm_config
from odforge.priors.scm import (
    ScmConfig,
    affected_readouts,
    build_scm,
    generate_scm_dataset,
    measurement_noise,
    perturb_graph,
    sample_scm_config,
    scm_forward,
    scm_node_values,
)

# ---------------------------------------------------------------- GMM


def test_gmm_config_ranges():
    for seed in range(30):
        c = sample_gmm_config(seed)
        assert 2 <= c.d <= 100 and 1 <= c.m <= 5 and 1000 <= c.n_total <= 6000
        assert 0.02 <= c.contamination <= 0.2 and 5 <= c.inflation <= 10
        assert 1 / c.d <= c.subspace_fraction <= 1
        assert np.all((c.diag_vars > 0) & (c.diag_vars <= 5))
        assert abs(c.weights.sum() - 1) < 1e-12


def test_gmm_loglik_matches_scipy():
    c = sample_gmm_config(3, d_range=(4, 4), m_range=(3, 3))
    model = GmmModel.from_config(c)
    x = rng_from(0).standard_normal((20, 4)) * 3
    dens = sum(
        w * multivariate_normal(model.means[k], model.covariances[k]).pdf(x)
        for k, w in enumerate(model.weights)
    )
    np.testing.assert_allclose(gmm_loglik(model, x), np.log(dens), rtol=1e-9)


def test_gmm_labels_follow_threshold():
    c = sample_gmm_config(5, d_range=(3, 10), n_range=(1000, 1500))
    data, run = generate_gmm_dataset(c, 9, return_run=True)
    ll = gmm_loglik(run.model, data.features)
    assert np.all(ll[data.labels == 1] < run.tau)
    assert np.all(ll[data.labels == 0] >= run.tau)
    assert data.n_outliers == n_outliers_for(c.contamination, c.n_total)
    assert data.features.shape == (c.n_total, c.d)
    assert run.subspace.size == c.subspace_size


def test_gmm_deterministic():
    c = sample_gmm_config(8, d_range=(2, 5), n_range=(1000, 1100))
    a = generate_gmm_dataset(c, 1)
    b = generate_gmm_dataset(c, 1)
    assert np.array_equal(a.features, b.features) and np.array_equal(a.labels, b.labels)


def test_gmm_config_validation():
    c = sample_gmm_config(0, d_range=(3, 3))
    with pytest.raises(ValidationError):
        GmmConfig(c.m, c.d, c.means, c.diag_vars, c.weights, c.transform_W, c.transform_b, c.subspace_fraction,
                  c.inflation, 0.6, c.n_total)


# ---------------------------------------------------------------- SCM


def small_scm(kind="measurement", seed=0, **kw):
    base = dict(d=8, layers=4, width=6, drop_rate=0.5, activation="tanh", inflation=7.0,
                contamination=0.1, n_total=1000, outlier_kind=kind, seed=seed)
    base.update(kw)
    return ScmConfig(**base)


def test_scm_config_ranges():
    for seed in range(30):
        c = sample_scm_config(seed)
        assert 3 <= c.layers <= 5 and 20 <= c.width <= 40
        assert c.d <= (c.layers - 1) * c.width
        assert 0.4 <= c.drop_rate <= 0.6 and 5 <= c.inflation <= 10


def test_scm_validation():
    with pytest.raises(ValidationError):
        small_scm(d=100)
    with pytest.raises(ValidationError):
        small_scm(activation="gelu")
    with pytest.raises(ValidationError):
        small_scm(p_break=0.7, p_flip=0.5)


def test_scm_forward_matches_naive_recursion():
    c = small_scm()
    g = build_scm(c, 3)
    noise = rng_from(1).standard_normal(g.n_nodes)
    vals = np.empty(g.n_nodes)
    w = g.width
    vals[:w] = noise[:w]
    for layer in range(1, g.layers):
        for j in range(w):
            pre = sum(g.weights[layer - 1, i, j] * vals[(layer - 1) * w + i] for i in range(w))
            vals[layer * w + j] = np.tanh(pre + noise[layer * w + j])
    np.testing.assert_allclose(scm_node_values(g, noise), vals, atol=1e-12)
    assert np.all(g.readout >= w)  # readouts never sit in the input layer
    assert np.unique(g.readout).size == c.d


def test_measurement_outliers_match_on_non_descendants():
    for seed in range(10):
        c = small_scm(seed=seed)
        g = build_scm(c, seed)
        rng = rng_from(seed + 100)
        base = rng.standard_normal((200, g.n_nodes))
        nodes = g.readout[rng.integers(0, c.d, size=200)]
        clean = scm_forward(g, base)
        dirty = scm_forward(g, measurement_noise(base, nodes, c.inflation, rng))
        for i in range(200):
            desc = g.descendants([nodes[i]])[g.readout]
            assert np.array_equal(clean[i, ~desc], dirty[i, ~desc])
            assert not np.array_equal(clean[i, desc], dirty[i, desc])


def test_structural_outliers_affect_a_readout():
    for seed in range(20):
        c = sample_scm_config(seed, "structural", n_range=(1000, 1000))
        data, run = generate_scm_dataset(c, seed, return_run=True)
        assert affected_readouts(run.perturbed, run.changed).any()
        changed = run.changed
        assert np.all(run.graph.mask[changed])  # only surviving edges are touched
        w_old, w_new = run.graph.weights[changed], run.perturbed.weights[changed]
        assert np.all((w_new == 0) | (w_new == -w_old))
        assert data.n_outliers == n_outliers_for(c.contamination, c.n_total)


def test_perturb_graph_budget():
    g = build_scm(small_scm(), 0)
    with pytest.raises(PerturbationBudgetExceeded):
        perturb_graph(g, 0.0, 0.0, rng_from(0))


def test_scm_graph_json_and_determinism():
    c = small_scm("structural")
    a = generate_scm_dataset(c, 4)
    b = generate_scm_dataset(c, 4)
    assert np.array_equal(a.features, b.features)
    dump = json.loads(build_scm(c, 4).to_json())
    assert len(dump["readout"]) == c.d
    assert all(len(e) == 3 for e in dump["edges"])
