"""Copula prior: Gaussian or D-vine dependence with parametric marginals.

Inliers are ``x_j = F_j^{-1}(u_j)`` with ``u ~ C``. Probabilistic outliers
overwrite a few copula coordinates per row with values from [0.1, 0.3] or
[0.7, 0.9]; dependence outliers flip (``u -> 1 - u``) or shuffle a block of
coordinates, which keeps every marginal intact but breaks the joint law.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from ..core import LabeledDataset, Metadata, derive_seed, n_outliers_for, rng_from, round_half_up
from ..exceptions import InvalidCorrelation, UnsupportedParameter, ValidationError
from . import bivariate
from .marginals import MarginalSpec, inv_cdf, sample_marginal

COPULA_KINDS = ("gaussian", "vine")
COPULA_OUTLIER_KINDS = ("probabilistic", "dependence")
DEPENDENCE_MODES = ("inverse_corr", "random_permutation")
U_LOW = (0.1, 0.3)
U_HIGH = (0.7, 0.9)
TAU_MAX = 0.7
PSD_TOL = 1e-10


@dataclass(frozen=True)
class PairCopula:
    """Edge ``(edge, edge + tree)`` of tree ``tree`` (1-based) in the D-vine."""

    tree: int
    edge: int
    family: str
    theta: float
    df: float | None = None

    def __post_init__(self):
        bivariate.check_parameter(self.family, self.theta, self.df)


@dataclass
class CopulaSpec:
    kind: str
    d: int
    correlation: np.ndarray | None = None
    pairs: list = field(default_factory=list)
    indep_fraction: float = 0.0
    independent: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))

    def __post_init__(self):
        if self.kind not in COPULA_KINDS:
            raise ValidationError(f"copula kind must be one of {COPULA_KINDS}")
        self.independent = np.asarray(self.independent, dtype=np.int64)
        if self.kind == "gaussian":
            if self.correlation is None:
                raise ValidationError("gaussian copula needs a correlation matrix")
            self.correlation = np.asarray(self.correlation, dtype=np.float64)
            check_correlation(self.correlation, self.d)
        else:
            expected = self.d * (self.d - 1) // 2
            if len(self.pairs) != expected:
                raise ValidationError(f"D-vine on {self.d} variables needs {expected} pairs")
            self.pairs = sorted(self.pairs, key=lambda p: (p.tree, p.edge))
            for p in self.pairs:
                if not (1 <= p.tree < self.d and 0 <= p.edge < self.d - p.tree):
                    raise ValidationError(f"pair ({p.tree}, {p.edge}) is not an edge of the D-vine")

    def vine_arrays(self):
        """(codes, thetas, dfs), each (d-1, d-1) and indexed by [tree - 1, edge]."""
        m = max(self.d - 1, 1)
        codes = np.zeros((m, m), dtype=np.int64)
        thetas = np.zeros((m, m))
        dfs = np.zeros((m, m))
        for p in self.pairs:
            codes[p.tree - 1, p.edge] = bivariate.family_code(p.family)
            thetas[p.tree - 1, p.edge] = p.theta
            dfs[p.tree - 1, p.edge] = 0.0 if p.df is None else p.df
        return codes, thetas, dfs

    def pair(self, tree: int, edge: int) -> PairCopula:
        # trees hold d-1, d-2, ... edges, stored contiguously
        offset = (tree - 1) * self.d - (tree - 1) * tree // 2
        return self.pairs[offset + edge]


def check_correlation(c: np.ndarray, d: int) -> None:
    if c.shape != (d, d):
        raise InvalidCorrelation(f"correlation has shape {c.shape}, expected {(d, d)}")
    if not np.allclose(c, c.T, atol=1e-12) or not np.allclose(np.diag(c), 1.0, atol=1e-12):
        raise InvalidCorrelation("correlation must be symmetric with unit diagonal")
    lam = np.linalg.eigvalsh(c).min()
    if lam < -PSD_TOL:
        raise InvalidCorrelation(f"correlation is not PSD (min eigenvalue {lam:.3g})")


def random_correlation(d: int, rng) -> np.ndarray:
    """Normalized A A^T with standard normal A, diagonal reset to exactly 1."""
    a = rng.standard_normal((d, d))
    s = a @ a.T
    inv = 1.0 / np.sqrt(np.diag(s))
    c = s * inv[:, None] * inv[None, :]
    c = 0.5 * (c + c.T)
    np.fill_diagonal(c, 1.0)
    return c


def _sample_pair(tree: int, edge: int, rng) -> PairCopula:
    family = bivariate.PAIR_FAMILIES[int(rng.integers(len(bivariate.PAIR_FAMILIES)))]
    if family in bivariate.POSITIVE_ONLY:
        tau = TAU_MAX * (1.0 - rng.random())
    else:
        tau = rng.uniform(-TAU_MAX, TAU_MAX)
    df = float(rng.integers(4, 10)) if family == "student" else None
    return PairCopula(tree, edge, family, bivariate.theta_from_tau(family, float(tau)), df)


def sample_copula_spec(d: int, rng, kind: str | None = None, indep_range=(0.1, 0.3)) -> CopulaSpec:
    kind = COPULA_KINDS[int(rng.integers(2))] if kind is None else kind
    alpha = float(rng.uniform(*indep_range))
    n_indep = min(d - 1, math.ceil(alpha * d))
    independent = np.sort(rng.choice(d, size=n_indep, replace=False))
    if kind == "gaussian":
        return CopulaSpec("gaussian", d, correlation=random_correlation(d, rng),
                          indep_fraction=alpha, independent=independent)
    pairs = [_sample_pair(t, j, rng) for t in range(1, d) for j in range(d - t)]
    return CopulaSpec("vine", d, pairs=pairs, indep_fraction=alpha, independent=independent)


def sample_copula(spec: CopulaSpec, n: int, seed: int) -> np.ndarray:
    """``n`` draws from the copula; every value lies strictly inside (0, 1)."""
    rng = rng_from(seed)
    d = spec.d
    if spec.kind == "gaussian":
        lam, vec = np.linalg.eigh(spec.correlation)
        if lam.min() < -PSD_TOL:
            raise InvalidCorrelation(f"correlation is not PSD (min eigenvalue {lam.min():.3g})")
        factor = vec * np.sqrt(np.clip(lam, 0.0, None))
        u = special.ndtr(rng.standard_normal((n, d)) @ factor.T)
    else:
        u = bivariate.dvine_sample(rng.random((n, d)), *spec.vine_arrays())
    if spec.independent.size:
        u[:, spec.independent] = rng.random((n, spec.independent.size))
    return np.clip(u, bivariate.EPS, 1.0 - bivariate.EPS)


@dataclass
class CopulaConfig:
    d: int
    marginals: list
    copula: CopulaSpec
    outlier_kind: str
    gamma_perturb: float
    dependence_mode: str
    k_invcorr: int
    contamination: float
    n_total: int
    u_low: tuple = U_LOW
    u_high: tuple = U_HIGH
    seed: int = 0

    def __post_init__(self):
        if len(self.marginals) != self.d or self.copula.d != self.d:
            raise ValidationError("marginals and copula must both have dimension d")
        if self.outlier_kind not in COPULA_OUTLIER_KINDS:
            raise ValidationError(f"outlier kind must be one of {COPULA_OUTLIER_KINDS}")
        if self.dependence_mode not in DEPENDENCE_MODES:
            raise ValidationError(f"dependence mode must be one of {DEPENDENCE_MODES}")
        if not 1 <= self.k_invcorr <= self.d:
            raise ValidationError(f"k_invcorr={self.k_invcorr} outside [1, {self.d}]")
        if not 0 < self.contamination < 0.5:
            raise ValidationError("contamination must lie in (0, 0.5)")
        for lo, hi in (self.u_low, self.u_high):
            if not 0 < lo <= hi < 1:
                raise UnsupportedParameter("perturbation ranges must lie inside (0, 1)")

    @property
    def n_perturbed(self) -> int:
        return max(1, round_half_up(self.gamma_perturb * self.d))


def k_invcorr_range(d: int) -> tuple[int, int]:
    """Half-open range [floor(1 + d/3), min(floor(1 + 2d/3), d))."""
    lo = int(1 + d / 3)
    hi = min(int(1 + 2 * d / 3), d)
    return lo, max(hi, lo + 1)


def sample_copula_config(
    seed: int,
    outlier_kind: str = "probabilistic",
    d_range=(2, 100),
    n_range=(1000, 6000),
    r_range=(0.02, 0.2),
    gamma_range=(0.02, 0.2),
    kind: str | None = None,
) -> CopulaConfig:
    rng = rng_from(seed)
    d = int(rng.integers(d_range[0], d_range[1] + 1))
    marginals = [sample_marginal(rng) for _ in range(d)]
    spec = sample_copula_spec(d, rng, kind)
    lo, hi = k_invcorr_range(d)
    return CopulaConfig(
        d=d,
        marginals=marginals,
        copula=spec,
        outlier_kind=outlier_kind,
        gamma_perturb=float(rng.uniform(*gamma_range)),
        dependence_mode=DEPENDENCE_MODES[int(rng.integers(2))],
        k_invcorr=int(rng.integers(lo, hi)),
        contamination=float(rng.uniform(*r_range)),
        n_total=int(rng.integers(n_range[0], n_range[1] + 1)),
        seed=int(seed),
    )


def probabilistic_perturb(u: np.ndarray, m: int, rng, low=U_LOW, high=U_HIGH):
    """Replace ``m`` random coordinates per row with boundary values.

    Returns the perturbed copy and the (rows, m) array of chosen columns.
    """
    n, d = u.shape
    cols = np.argsort(rng.random((n, d)), axis=1, kind="stable")[:, :m]
    upper = rng.random((n, m)) < 0.5
    vals = np.where(upper, rng.uniform(*high, size=(n, m)), rng.uniform(*low, size=(n, m)))
    out = u.copy()
    np.put_along_axis(out, cols, vals, axis=1)
    return out, cols


def dependence_perturb(u: np.ndarray, cols: np.ndarray, mode: str, rng) -> np.ndarray:
    out = u.copy()
    if mode == "inverse_corr":
        out[:, cols] = 1.0 - out[:, cols]
    elif mode == "random_permutation":
        for j in cols:
            out[:, j] = out[rng.permutation(out.shape[0]), j]
    else:
        raise ValidationError(f"unknown dependence mode {mode!r}")
    return out


def to_features(u: np.ndarray, marginals) -> np.ndarray:
    x = np.empty_like(u)
    for j, m in enumerate(marginals):
        x[:, j] = inv_cdf(m, u[:, j])
    return x


@dataclass
class CopulaRun:
    inlier_u: np.ndarray
    outlier_u: np.ndarray
    perturbed: np.ndarray  # (n_out, m) columns for probabilistic, (k,) for dependence


def generate_copula_dataset(cfg: CopulaConfig, seed: int, return_run: bool = False):
    n_out = n_outliers_for(cfg.contamination, cfg.n_total)
    n_in = cfg.n_total - n_out
    rng = rng_from(derive_seed(seed, 3))
    u_in = sample_copula(cfg.copula, n_in, derive_seed(seed, 1))
    u_base = sample_copula(cfg.copula, n_out, derive_seed(seed, 2))
    if cfg.outlier_kind == "probabilistic":
        u_out, perturbed = probabilistic_perturb(u_base, cfg.n_perturbed, rng, cfg.u_low, cfg.u_high)
    else:
        perturbed = np.sort(rng.choice(cfg.d, size=cfg.k_invcorr, replace=False))
        u_out = dependence_perturb(u_base, perturbed, cfg.dependence_mode, rng)
    u_out = np.clip(u_out, bivariate.EPS, 1.0 - bivariate.EPS)

    x = np.vstack([to_features(u_in, cfg.marginals), to_features(u_out, cfg.marginals)])
    y = np.r_[np.zeros(n_in, dtype=np.int8), np.ones(n_out, dtype=np.int8)]
    perm = rng.permutation(x.shape[0])
    kind = f"copula_{cfg.outlier_kind}"
    meta = Metadata(
        id=f"copula-{derive_seed(seed, 0):016x}",
        name=kind,
        source="synthetic",
        prior_family="copula",
        outlier_kind=kind,
        seed=int(seed),
        d=cfg.d,
        n_outliers=n_out,
        tags=["synthetic", "copula", cfg.copula.kind],
    )
    data = LabeledDataset(x[perm], y[perm], meta)
    return (data, CopulaRun(u_in, u_out, perturbed)) if return_run else data
