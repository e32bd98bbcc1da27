import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, stats

from odforge.core import n_outliers_for, rng_from
from odforge.exceptions import InvalidCorrelation, NonConvergence, UnsupportedParameter, ValidationError
from odforge.priors import bivariate as bv
from odforge.priors import marginals as mg
from odforge.priors.copula import (
    CopulaConfig,
    CopulaSpec,
    PairCopula,
    dependence_perturb,
    generate_copula_dataset,
    k_invcorr_range,
    probabilistic_perturb,
    random_correlation,
    sample_copula,
    sample_copula_config,
    sample_copula_spec,
    to_features,
)

# ---------------------------------------------------------------- marginals

SCIPY_MARGINALS = {
    "gaussian": (dict(mu=0.3, sigma=0.7), lambda p: stats.norm(p["mu"], p["sigma"])),
    "beta": (dict(a=2.0, b=4.5, loc=-5.0, scale=10.0), lambda p: stats.beta(p["a"], p["b"], p["loc"], p["scale"])),
    "exponential": (dict(lam=0.8, loc=-5.0), lambda p: stats.expon(p["loc"], p["lam"])),
    "student_t": (dict(df=3.5, loc=0.2, scale=0.9), lambda p: stats.t(p["df"], p["loc"], p["scale"])),
    "power_law": (dict(a=1.7, loc=-5.0, scale=5.0), lambda p: stats.lomax(p["a"], p["loc"], p["scale"])),
    "log_logistic": (dict(c=2.5, loc=-5.0, scale=5.0), lambda p: stats.fisk(p["c"], p["loc"], p["scale"])),
}


@pytest.mark.parametrize("family", mg.FAMILIES)
def test_marginal_quantile_matches_scipy(family):
    params, ref = SCIPY_MARGINALS[family]
    m = mg.MarginalSpec(family, params)
    u = np.r_[np.linspace(0.001, 0.999, 301), 1e-10, 1e-6, 1 - 1e-6, 1 - 1e-10]
    want = ref(params).ppf(u)
    got = mg.inv_cdf(m, u)
    np.testing.assert_allclose(got, want, rtol=1e-8, atol=1e-9)
    np.testing.assert_allclose(mg.cdf(m, got), u, rtol=1e-9, atol=1e-12)


def test_marginal_clamp_and_scalar():
    m = mg.MarginalSpec("gaussian", dict(mu=0.0, sigma=1.0))
    assert np.ndim(mg.inv_cdf(m, 0.5)) == 0
    assert mg.inv_cdf(m, 0.0) == mg.inv_cdf(m, 1e-12)
    assert np.isfinite(mg.inv_cdf(m, 1.0))


def test_marginal_validation():
    with pytest.raises(UnsupportedParameter):
        mg.MarginalSpec("cauchy", {})
    with pytest.raises(UnsupportedParameter):
        mg.MarginalSpec("gaussian", dict(mu=0.0))
    with pytest.raises(UnsupportedParameter):
        mg.MarginalSpec("beta", dict(a=-1.0, b=1.0, loc=0.0, scale=1.0))


def test_sample_marginal_covers_families():
    rng = rng_from(0)
    seen = {mg.sample_marginal(rng).family for _ in range(200)}
    assert seen == set(mg.FAMILIES)


# ---------------------------------------------------------------- pair copulas

def joe_tau_quad(theta):
    # tau = 1 + 4 int_0^1 phi(t) / phi'(t) dt with phi(t) = -log(1 - (1 - t)^theta)
    def f(t):
        a = (1 - t) ** theta
        return -math.log1p(-a) * (1 - a) / (theta * (1 - t) ** (theta - 1))
    return 1 + 4 * integrate.quad(lambda t: -f(t), 0, 1, limit=200)[0]


def frank_tau_quad(theta):
    # phi(t) = -log((exp(-theta t) - 1) / (exp(-theta) - 1))
    def ratio(t):
        phi = -math.log(math.expm1(-theta * t) / math.expm1(-theta))
        dphi = theta * math.exp(-theta * t) / math.expm1(-theta * t)
        return phi / dphi
    return 1 + 4 * integrate.quad(ratio, 1e-12, 1, limit=200)[0]


@pytest.mark.parametrize("theta", [1.2, 2.0, 3.5, 7.0])
def test_joe_tau_against_quadrature(theta):
    assert bv.kendall_tau("joe", theta) == pytest.approx(joe_tau_quad(theta), abs=1e-7)


@pytest.mark.parametrize("theta", [-12.0, -2.0, 0.5, 5.0, 18.0])
def test_frank_tau_against_quadrature(theta):
    assert bv.kendall_tau("frank", theta) == pytest.approx(frank_tau_quad(theta), abs=1e-7)


@pytest.mark.parametrize("family", bv.PAIR_FAMILIES)
def test_tau_roundtrip(family):
    taus = np.linspace(0.01, 0.7, 15) if family in bv.POSITIVE_ONLY else np.linspace(-0.7, 0.7, 15)
    for tau in taus:
        assert bv.kendall_tau(family, bv.theta_from_tau(family, tau)) == pytest.approx(tau, abs=1e-6)


def test_parameter_domains():
    with pytest.raises(UnsupportedParameter):
        bv.theta_from_tau("clayton", -0.2)
    with pytest.raises(UnsupportedParameter):
        bv.check_parameter("student", 0.3, 4.5)
    with pytest.raises(UnsupportedParameter):
        bv.check_parameter("gumbel", 0.9)
    with pytest.raises(UnsupportedParameter):
        PairCopula(1, 0, "gaussian", 1.0)
    bv.check_parameter("student", 0.3, 6.0)


def copula_cdf(family, u, v, th):
    if family == "clayton":
        return (u**-th + v**-th - 1) ** (-1 / th)
    if family == "gumbel":
        return np.exp(-(((-np.log(u)) ** th + (-np.log(v)) ** th) ** (1 / th)))
    if family == "frank":
        return -np.log1p(np.expm1(-th * u) * np.expm1(-th * v) / np.expm1(-th)) / th
    a, b = (1 - u) ** th, (1 - v) ** th
    return 1 - (a + b - a * b) ** (1 / th)


@pytest.mark.parametrize("family,tau", [("clayton", 0.4), ("gumbel", 0.6), ("frank", -0.5), ("frank", 0.3),
                                        ("joe", 0.5), ("joe", 0.2)])
def test_h_is_partial_derivative_of_cdf(family, tau):
    th = bv.theta_from_tau(family, tau)
    g = np.linspace(0.05, 0.95, 19)
    u, v = np.meshgrid(g, g)
    eps = 1e-6
    fd = (copula_cdf(family, u, v + eps, th) - copula_cdf(family, u, v - eps, th)) / (2 * eps)
    np.testing.assert_allclose(bv.h(family, u, v, th), fd, atol=1e-7)


def test_elliptical_h_closed_forms():
    g = np.linspace(0.05, 0.95, 19)
    u, v = np.meshgrid(g, g)
    rho, df = 0.6, 5.0
    want = stats.norm.cdf((stats.norm.ppf(u) - rho * stats.norm.ppf(v)) / math.sqrt(1 - rho**2))
    np.testing.assert_allclose(bv.h("gaussian", u, v, rho), want, atol=1e-12)
    tu, tv = stats.t.ppf(u, df), stats.t.ppf(v, df)
    want = stats.t.cdf((tu - rho * tv) / np.sqrt((df + tv**2) * (1 - rho**2) / (df + 1)), df + 1)
    np.testing.assert_allclose(bv.h("student", u, v, rho, df), want, atol=1e-12)


PAIR_CASES = [(f, t) for f in bv.PAIR_FAMILIES
              for t in ((0.05, 0.35, 0.7) if f in bv.POSITIVE_ONLY else (-0.7, -0.2, 0.3, 0.7))]


@pytest.mark.parametrize("family,tau", PAIR_CASES)
def test_hinv_roundtrip_and_backends_agree(family, tau):
    th = bv.theta_from_tau(family, tau)
    df = 6.0 if family == "student" else 0.0
    code = bv.family_code(family)
    r = rng_from(hash((family, tau)) % 2**32)
    w = r.uniform(1e-8, 1 - 1e-8, 5000)
    v = np.r_[r.uniform(1e-8, 1 - 1e-8, 4990), 1e-8, 1e-6, 1e-3, 0.5, 0.9, 0.99, 0.999, 1 - 1e-6, 1 - 1e-8, 0.3]
    u = bv.hinv(family, w, v, th, df)
    assert np.all((u > 0) & (u < 1))
    np.testing.assert_allclose(bv.h(family, u, v, th, df), w, atol=1e-9)
    un = bv._clip(bv._hinv_numpy(code, bv._clip(w), bv._clip(v), th, df))
    np.testing.assert_allclose(bv._hinv_numba(code, w, v, th, df), un, atol=1e-9)
    hn = bv._clip(bv._h_numpy(code, bv._clip(w), bv._clip(v), th, df))
    np.testing.assert_allclose(bv._h_numba(code, w, v, th, df), hn, atol=1e-10)


@given(st.sampled_from(bv.PAIR_FAMILIES), st.floats(0.01, 0.7), st.floats(1e-6, 1 - 1e-6), st.floats(1e-6, 1 - 1e-6))
def test_h_monotone_in_u(family, tau, v, w):
    th = bv.theta_from_tau(family, tau)
    df = 5.0 if family == "student" else None
    u = np.linspace(1e-6, 1 - 1e-6, 200)
    hv = bv.h(family, u, v, th, df)
    assert np.all(np.diff(hv) >= -1e-12)
    assert 0 < bv.hinv(family, w, v, th, df) < 1


@pytest.mark.parametrize("family,tau", [("gaussian", -0.5), ("student", 0.4), ("clayton", 0.5), ("gumbel", 0.3),
                                        ("frank", -0.4), ("joe", 0.6)])
def test_simulated_pair_has_target_tau(family, tau):
    th = bv.theta_from_tau(family, tau)
    x = bv.simulate_pair(family, th, 3000, rng_from(2), 5.0 if family == "student" else None)
    assert stats.kendalltau(x[:, 0], x[:, 1])[0] == pytest.approx(tau, abs=0.035)
    for j in range(2):
        assert stats.kstest(x[:, j], "uniform").statistic < 0.03


def random_vine(d, rng):
    codes = rng.integers(0, len(bv.PAIR_FAMILIES), size=(d - 1, d - 1))
    dfs = rng.integers(4, 10, size=(d - 1, d - 1)).astype(float)
    taus = np.empty((d - 1, d - 1))
    thetas = np.empty((d - 1, d - 1))
    for idx in np.ndindex(codes.shape):
        fam = bv.PAIR_FAMILIES[codes[idx]]
        taus[idx] = rng.uniform(0.05, 0.7) if fam in bv.POSITIVE_ONLY else rng.uniform(-0.7, 0.7)
        thetas[idx] = bv.theta_from_tau(fam, taus[idx])
    return codes, thetas, dfs, taus


def test_dvine_backends_agree():
    rng = rng_from(5)
    codes, thetas, dfs, _ = random_vine(20, rng)
    w = rng.random((300, 20))
    a = bv._dvine_numba(w, codes, thetas, dfs)
    b = bv._dvine_numpy(bv._clip(w), codes, thetas, dfs)
    np.testing.assert_allclose(a, b, atol=1e-8)


def test_dvine_first_tree_and_uniform_margins():
    rng = rng_from(6)
    d = 6
    codes, thetas, dfs, taus = random_vine(d, rng)
    x = bv.dvine_sample(rng.random((5000, d)), codes, thetas, dfs)
    for j in range(d - 1):
        assert stats.kendalltau(x[:, j], x[:, j + 1])[0] == pytest.approx(taus[0, j], abs=0.04)
    for j in range(d):
        assert stats.kstest(x[:, j], "uniform").statistic < 0.025


def test_dvine_two_variables_is_conditional_inversion():
    rng = rng_from(7)
    w = rng.random((100, 2))
    codes = np.array([[3]])
    th = np.array([[2.0]])
    x = bv.dvine_sample(w, codes, th, np.zeros((1, 1)))
    np.testing.assert_allclose(x[:, 1], bv.hinv("gumbel", w[:, 1], w[:, 0], 2.0), atol=1e-12)
    np.testing.assert_array_equal(x[:, 0], w[:, 0])


# ---------------------------------------------------------------- copula specs

def test_random_correlation_is_valid():
    for d in (2, 5, 40):
        c = random_correlation(d, rng_from(d))
        assert np.array_equal(np.diag(c), np.ones(d))
        assert np.linalg.eigvalsh(c).min() > -1e-10
    with pytest.raises(InvalidCorrelation):
        CopulaSpec("gaussian", 2, correlation=np.array([[1.0, 1.5], [1.5, 1.0]]))


def test_spec_sampling_structure():
    for seed in range(10):
        d = 3 + seed * 7
        s = sample_copula_spec(d, rng_from(seed), "vine")
        assert len(s.pairs) == d * (d - 1) // 2
        assert s.independent.size == min(d - 1, math.ceil(s.indep_fraction * d))
        assert 0.1 <= s.indep_fraction <= 0.3
        for p in s.pairs:
            if p.family in bv.POSITIVE_ONLY:
                assert 0 < bv.kendall_tau(p.family, p.theta) <= 0.7 + 1e-9
            else:
                assert abs(bv.kendall_tau(p.family, p.theta)) <= 0.7 + 1e-9
            if p.family == "student":
                assert p.df in {4.0, 5.0, 6.0, 7.0, 8.0, 9.0}
        assert s.pair(2, 0) is s.pairs[d - 1]
    with pytest.raises(ValidationError):
        CopulaSpec("vine", 3, pairs=[])


def test_independent_columns_are_independent():
    s = sample_copula_spec(8, rng_from(1), "gaussian")
    u = sample_copula(s, 4000, 3)
    rest = [j for j in range(8) if j not in s.independent]
    for j in s.independent:
        for k in rest:
            assert abs(stats.kendalltau(u[:, j], u[:, k])[0]) < 0.05
    assert np.all((u > 0) & (u < 1))


@pytest.mark.parametrize("family", mg.FAMILIES)
@pytest.mark.parametrize("kind", ["gaussian", "vine"])
def test_inlier_marginals_ks(family, kind):
    params, ref = SCIPY_MARGINALS[family]
    s = sample_copula_spec(6, rng_from(11), kind)
    u = sample_copula(s, 5000, 12)
    x = to_features(u, [mg.MarginalSpec(family, params)] * 6)
    for j in range(6):
        assert stats.kstest(x[:, j], ref(params).cdf).statistic <= 0.05


def test_k_invcorr_range():
    for d in range(2, 101):
        lo, hi = k_invcorr_range(d)
        assert 1 <= lo < hi <= d
        assert lo == math.floor(1 + d / 3)


def test_probabilistic_perturb():
    u = rng_from(0).random((500, 10))
    out, cols = probabilistic_perturb(u, 3, rng_from(1))
    assert cols.shape == (500, 3)
    assert np.all(np.sort(cols, axis=1)[:, 1:] != np.sort(cols, axis=1)[:, :-1])
    vals = np.take_along_axis(out, cols, axis=1)
    assert np.all(((vals >= 0.1) & (vals <= 0.3)) | ((vals >= 0.7) & (vals <= 0.9)))
    mask = np.ones_like(u, dtype=bool)
    np.put_along_axis(mask, cols, False, axis=1)
    assert np.array_equal(out[mask], u[mask])


def test_inverse_corr_flips_correlation_sign():
    spec = CopulaSpec("gaussian", 2, correlation=np.array([[1.0, 0.9], [0.9, 1.0]]))
    u = sample_copula(spec, 5000, 0)
    before = np.corrcoef(u.T)[0, 1]
    after = np.corrcoef(dependence_perturb(u, np.array([1]), "inverse_corr", rng_from(0)).T)[0, 1]
    assert before > 0.8
    assert abs(after + before) <= 0.1


def test_random_permutation_keeps_column_values():
    u = rng_from(0).random((300, 4))
    out = dependence_perturb(u, np.array([0, 2]), "random_permutation", rng_from(1))
    for j in range(4):
        assert np.array_equal(np.sort(out[:, j]), np.sort(u[:, j]))
    assert np.array_equal(out[:, 1], u[:, 1])
    with pytest.raises(ValidationError):
        dependence_perturb(u, np.array([0]), "shuffle", rng_from(0))


@pytest.mark.parametrize("mode", ["inverse_corr", "random_permutation"])
def test_dependence_outliers_keep_marginals(mode):
    cfg = sample_copula_config(21, "dependence", d_range=(6, 6), n_range=(6000, 6000), r_range=(0.2, 0.2))
    cfg.dependence_mode = mode
    data, run = generate_copula_dataset(cfg, 5, return_run=True)
    for j in run.perturbed:
        assert stats.ks_2samp(run.outlier_u[:, j], run.inlier_u[:, j]).statistic <= 0.08


def test_copula_dataset_shapes_and_determinism():
    for kind in ("probabilistic", "dependence"):
        cfg = sample_copula_config(3, kind, d_range=(3, 12), n_range=(1000, 1200))
        a = generate_copula_dataset(cfg, 8)
        b = generate_copula_dataset(cfg, 8)
        assert np.array_equal(a.features, b.features)
        assert a.n_outliers == n_outliers_for(cfg.contamination, cfg.n_total)
        assert a.meta.outlier_kind == f"copula_{kind}" and a.meta.d == cfg.d
        assert np.all(np.isfinite(a.features))


def test_copula_config_validation():
    cfg = sample_copula_config(0, d_range=(4, 4))
    with pytest.raises(ValidationError):
        CopulaConfig(4, cfg.marginals, cfg.copula, "probabilistic", 0.1, "inverse_corr", 9, 0.1, 1000)
    with pytest.raises(UnsupportedParameter):
        CopulaConfig(4, cfg.marginals, cfg.copula, "probabilistic", 0.1, "inverse_corr", 2, 0.1, 1000,
                     u_low=(0.0, 0.3))


def test_newton_failure_is_reported(monkeypatch):
    monkeypatch.setattr(mg, "NEWTON_MAX_ITER", 1)
    with pytest.raises(NonConvergence):
        mg.inv_cdf(mg.MarginalSpec("beta", dict(a=2.0, b=3.0, loc=0.0, scale=1.0)), np.array([1e-9, 0.3]))
