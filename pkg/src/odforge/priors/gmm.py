"""Gaussian-mixture prior with contextual subspace outliers.

Inliers come from a random diagonal GMM pushed through an affine map
``x -> W x + b``. Outliers come from the same mixture after one
component's diagonal variances are multiplied by ``s`` on a random subset
of dimensions (in the pre-transform coordinates). Labels are enforced by
the log-likelihood of the original mixture against ``tau``, its empirical
10th percentile: inliers have ``loglik >= tau``, outliers ``loglik < tau``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from ..core import LabeledDataset, Metadata, derive_seed, n_outliers_for, rng_from, round_half_up
from ..exceptions import RejectionBudgetExceeded, SingularCovariance, ValidationError

N_CALIBRATION = 10_000
LABEL_QUANTILE = 0.10
BUDGET_FACTOR = 1000


@dataclass
class GmmConfig:
    m: int
    d: int
    means: np.ndarray  # (m, d)
    diag_vars: np.ndarray  # (m, d)
    weights: np.ndarray  # (m,)
    transform_W: np.ndarray  # (d, d)
    transform_b: np.ndarray  # (d,)
    subspace_fraction: float
    inflation: float
    contamination: float
    n_total: int
    seed: int = 0

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=np.float64).reshape(self.m, self.d)
        self.diag_vars = np.asarray(self.diag_vars, dtype=np.float64).reshape(self.m, self.d)
        self.weights = np.asarray(self.weights, dtype=np.float64).reshape(self.m)
        self.transform_W = np.asarray(self.transform_W, dtype=np.float64).reshape(self.d, self.d)
        self.transform_b = np.asarray(self.transform_b, dtype=np.float64).reshape(self.d)
        if np.any(self.diag_vars <= 0):
            raise ValidationError("diagonal variances must be positive")
        if np.any(self.weights < 0) or not math.isclose(self.weights.sum(), 1.0, abs_tol=1e-9):
            raise ValidationError("mixture weights must form a simplex")
        if not 0 < self.contamination < 0.5:
            raise ValidationError("contamination must lie in (0, 0.5)")

    @property
    def subspace_size(self) -> int:
        return max(1, round_half_up(self.subspace_fraction * self.d))


def sample_gmm_config(
    seed: int,
    d_range=(2, 100),
    n_range=(1000, 6000),
    r_range=(0.02, 0.2),
    m_range=(1, 5),
    s_range=(5.0, 10.0),
) -> GmmConfig:
    """Draw every hyperparameter uniformly from its range.

    Integer ranges are inclusive; variances are drawn on (0, 5] and the
    subspace fraction on [1/d, 1].
    """
    rng = rng_from(seed)
    d = int(rng.integers(d_range[0], d_range[1] + 1))
    m = int(rng.integers(m_range[0], m_range[1] + 1))
    n_total = int(rng.integers(n_range[0], n_range[1] + 1))
    means = rng.uniform(-5.0, 5.0, size=(m, d))
    diag_vars = 5.0 * (1.0 - rng.random(size=(m, d)))
    weights = rng.dirichlet(np.ones(m))
    W = rng.uniform(-1.0, 1.0, size=(d, d))
    b = rng.uniform(-1.0, 1.0, size=d)
    alpha = float(rng.uniform(1.0 / d, 1.0))
    s = float(rng.uniform(*s_range))
    r = float(rng.uniform(*r_range))
    return GmmConfig(m, d, means, diag_vars, weights, W, b, alpha, s, r, n_total, int(seed))


@dataclass
class GmmModel:
    """Mixture in the transformed space, with regularized Cholesky factors."""

    weights: np.ndarray
    means: np.ndarray  # T(mu_k)
    covariances: np.ndarray  # W Sigma_k W^T plus the diagonal regularizer
    chol: np.ndarray

    @classmethod
    def from_config(cls, cfg: GmmConfig, diag_vars=None) -> "GmmModel":
        diag_vars = cfg.diag_vars if diag_vars is None else diag_vars
        W = cfg.transform_W
        means = cfg.means @ W.T + cfg.transform_b
        covs = np.einsum("ij,kj,lj->kil", W, diag_vars, W)
        covs = 0.5 * (covs + np.transpose(covs, (0, 2, 1)))
        chol = np.empty_like(covs)
        d = cfg.d
        for k in range(cfg.m):
            # W is random and may be near-singular
            covs[k].flat[:: d + 1] += 1e-9 * np.trace(covs[k]) / d
            try:
                chol[k] = np.linalg.cholesky(covs[k])
            except np.linalg.LinAlgError:
                raise SingularCovariance(f"component {k} covariance is not positive definite") from None
        return cls(cfg.weights.copy(), means, covs, chol)


def gmm_loglik(model: GmmModel, x) -> np.ndarray:
    """Log mixture density at each row of ``x`` (a single point gives a scalar)."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    n, d = x.shape
    comp = np.empty((n, model.weights.size))
    const = d * math.log(2.0 * math.pi)
    for k in range(model.weights.size):
        L = model.chol[k]
        z = solve_triangular(L, (x - model.means[k]).T, lower=True, check_finite=False)
        log_det = 2.0 * np.log(np.diag(L)).sum()
        comp[:, k] = -0.5 * (const + log_det + np.einsum("ij,ij->j", z, z))
    with np.errstate(divide="ignore"):
        comp += np.log(model.weights)
    out = logsumexp(comp, axis=1)
    return float(out[0]) if single else out


def _sample_mixture(cfg: GmmConfig, diag_vars: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    comp = rng.choice(cfg.m, size=n, p=cfg.weights)
    z = cfg.means[comp] + np.sqrt(diag_vars[comp]) * rng.standard_normal((n, cfg.d))
    return z @ cfg.transform_W.T + cfg.transform_b


@dataclass
class GmmRun:
    """Generation details kept for inspection and tests."""

    model: GmmModel
    tau: float
    component: int
    subspace: np.ndarray
    inflated_vars: np.ndarray


def _rejection(cfg, diag_vars, model, needed, keep, rng, what):
    budget = BUDGET_FACTOR * needed
    drawn = 0
    kept = []
    have = 0
    rate = 0.5
    while have < needed:
        if drawn >= budget:
            raise RejectionBudgetExceeded(f"{what}: only {have}/{needed} accepted after {drawn} draws")
        batch = int(min(budget - drawn, max(64, math.ceil(1.2 * (needed - have) / max(rate, 1e-3)))))
        x = _sample_mixture(cfg, diag_vars, batch, rng)
        drawn += batch
        ok = keep(gmm_loglik(model, x))
        rate = max(ok.mean(), 1.0 / batch)
        kept.append(x[ok])
        have += int(ok.sum())
    return np.concatenate(kept)[:needed]


def generate_gmm_dataset(cfg: GmmConfig, seed: int, return_run: bool = False):
    """Sample a labeled dataset from ``cfg``.

    Exactly ``round(r * n_total)`` outliers (halves rounded up). Raises
    :class:`RejectionBudgetExceeded` if either rejection loop needs more
    than 1000 draws per accepted row.
    """
    rng = rng_from(seed)
    model = GmmModel.from_config(cfg)

    calib = _sample_mixture(cfg, cfg.diag_vars, N_CALIBRATION, rng)
    tau = float(np.quantile(gmm_loglik(model, calib), LABEL_QUANTILE))

    n_out = n_outliers_for(cfg.contamination, cfg.n_total)
    n_in = cfg.n_total - n_out
    inliers = _rejection(cfg, cfg.diag_vars, model, n_in, lambda ll: ll >= tau, rng, "inliers")

    component = int(rng.choice(cfg.m, p=cfg.weights))
    subspace = np.sort(rng.choice(cfg.d, size=cfg.subspace_size, replace=False))
    inflated = cfg.diag_vars.copy()
    inflated[component, subspace] *= cfg.inflation
    outliers = (
        _rejection(cfg, inflated, model, n_out, lambda ll: ll < tau, rng, "outliers")
        if n_out
        else np.empty((0, cfg.d))
    )

    x = np.vstack([inliers, outliers])
    y = np.r_[np.zeros(n_in, dtype=np.int8), np.ones(n_out, dtype=np.int8)]
    perm = rng.permutation(x.shape[0])
    meta = Metadata(
        id=f"gmm-{derive_seed(seed, 0):016x}",
        name="gmm_subspace",
        source="synthetic",
        prior_family="gmm",
        outlier_kind="gmm_subspace",
        seed=int(seed),
        d=cfg.d,
        n_outliers=n_out,
        tags=["synthetic", "gmm"],
    )
    data = LabeledDataset(x[perm], y[perm], meta)
    if return_run:
        return data, GmmRun(model, tau, component, subspace, inflated)
    return data
