"""Reference anomaly scorers. Higher score means more outlying.

All scorers expect features standardized with train statistics (see
:func:`odforge.core.standardize`); they do not rescale internally.

* :func:`knn_scores`: distance to the k nearest train rows (k-th, mean,
  or mean of squares).
* :func:`dtenp_scores`: the non-parametric diffusion-time score, which
  is the mean k-NN distance.
* :func:`dte_posterior_score`: posterior mean of the Gaussian noise scale
  sigma given the whole train set, computed on a grid in log space.
* :func:`egmm_scores`: bootstrap ensemble of full-covariance GMMs with
  out-of-bag pruning.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from . import _accel
from ._accel import njit
from .core import derive_seed, rng_from
from .exceptions import DimensionMismatch, EmNonConvergenceWarning, KTooLarge, ValidationError

KNN_VARIANTS = ("kth", "mean", "mean_squared")
_VARIANT_CODE = {v: i for i, v in enumerate(KNN_VARIANTS)}

# target size of the (rows x train x d) difference block in the numpy path
_CHUNK_ELEMS = 1 << 22


@dataclass(frozen=True)
class KnnParams:
    k: int = 5
    variant: str = "kth"

    def __post_init__(self):
        if self.k < 1:
            raise ValidationError("k must be at least 1")
        if self.variant not in KNN_VARIANTS:
            raise ValidationError(f"variant must be one of {KNN_VARIANTS}")


def default_sigma_grid() -> np.ndarray:
    return np.geomspace(0.01, 10.0, 100)


@dataclass(frozen=True)
class DtePosteriorParams:
    sigma_grid: np.ndarray = field(default_factory=default_sigma_grid)

    def __post_init__(self):
        g = np.asarray(self.sigma_grid, dtype=np.float64).ravel()
        if g.size < 1 or np.any(g <= 0) or np.any(np.diff(g) <= 0):
            raise ValidationError("sigma grid must be positive and strictly increasing")
        object.__setattr__(self, "sigma_grid", g)


@dataclass(frozen=True)
class EgmmParams:
    k_list: tuple = (6, 7, 8, 9, 10)
    n_bootstrap: int = 15
    discard_threshold: float = 0.85
    max_iter: int = 100
    rel_tol: float = 1e-4
    ridge: float = 1e-6

    def __post_init__(self):
        object.__setattr__(self, "k_list", tuple(int(k) for k in self.k_list))
        if not self.k_list or min(self.k_list) < 1:
            raise ValidationError("k_list must hold positive component counts")
        if not 0 < self.discard_threshold <= 1:
            raise ValidationError("discard_threshold must lie in (0, 1]")
        if self.n_bootstrap < 1:
            raise ValidationError("n_bootstrap must be at least 1")


def _pair(train, test):
    train = np.ascontiguousarray(train, dtype=np.float64)
    test = np.ascontiguousarray(test, dtype=np.float64)
    if train.ndim != 2 or test.ndim != 2 or train.shape[1] != test.shape[1]:
        raise DimensionMismatch(f"train {train.shape} and test {test.shape} are incompatible")
    return train, test


# --------------------------------------------------------------------------
# kNN kernels
# --------------------------------------------------------------------------


@njit
def _knn_numba(train, test, k):
    n_train, d = train.shape
    n_test = test.shape[0]
    out = np.empty((n_test, k))
    dist = np.empty(n_train)
    for i in range(n_test):
        for j in range(n_train):
            s = 0.0
            for c in range(d):
                diff = test[i, c] - train[j, c]
                s += diff * diff
            dist[j] = s
        # stable: ties keep train-row order
        order = np.argsort(dist, kind="mergesort")
        for t in range(k):
            out[i, t] = dist[order[t]]
    return out


def _sq_dist_block(train, block):
    diff = block[:, None, :] - train[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _row_chunks(n_rows, n_train, d):
    step = max(1, _CHUNK_ELEMS // max(1, n_train * d))
    for start in range(0, n_rows, step):
        yield slice(start, min(n_rows, start + step))


def _knn_numpy(train, test, k):
    out = np.empty((test.shape[0], k))
    for sl in _row_chunks(test.shape[0], train.shape[0], train.shape[1]):
        sq = _sq_dist_block(train, test[sl])
        order = np.argsort(sq, axis=1, kind="stable")[:, :k]
        out[sl] = np.take_along_axis(sq, order, axis=1)
    return out


def _reduce_nearest(sq, variant):
    # correctly rounded sums, so mathematically tied scores stay tied
    if variant == 0:
        return np.sqrt(sq[:, -1])
    vals = np.sqrt(sq) if variant == 1 else sq
    k = sq.shape[1]
    return np.fromiter((math.fsum(row) / k for row in vals), dtype=np.float64, count=sq.shape[0])


def knn_scores(train, test, params: KnnParams = KnnParams()) -> np.ndarray:
    """Euclidean k-NN outlier scores of ``test`` rows against ``train``.

    ``kth`` returns the k-th smallest distance, ``mean`` the average of the
    k smallest, ``mean_squared`` the average of their squares. Distance ties
    are broken by train row index.
    """
    train, test = _pair(train, test)
    if params.k >= train.shape[0]:
        raise KTooLarge(f"k={params.k} needs more than {params.k} train rows, got {train.shape[0]}")
    kernel = _knn_numba if _accel.USE_NUMBA else _knn_numpy
    return _reduce_nearest(kernel(train, test, int(params.k)), _VARIANT_CODE[params.variant])


def dtenp_scores(train, test, k: int = 5) -> np.ndarray:
    """DTE-NP score: the posterior-mean diffusion time under the max
    approximation is proportional to the mean k-NN distance, so the score
    is exactly the mean-variant k-NN score."""
    return knn_scores(train, test, KnnParams(k=k, variant="mean"))


# --------------------------------------------------------------------------
# exact DTE posterior over sigma
# --------------------------------------------------------------------------


@njit
def _dte_log_post_numba(train, test, log_sigma, inv_two_var):
    n_train, d = train.shape
    n_test = test.shape[0]
    g = log_sigma.shape[0]
    out = np.empty((n_test, g))
    sq = np.empty(n_train)
    for i in range(n_test):
        dmin = np.inf
        for j in range(n_train):
            s = 0.0
            for c in range(d):
                diff = test[i, c] - train[j, c]
                s += diff * diff
            sq[j] = s
            if s < dmin:
                dmin = s
        for t in range(g):
            # log sum_j exp(-sq_j / 2s^2), shifted by the nearest neighbour
            acc = 0.0
            for j in range(n_train):
                acc += math.exp(-(sq[j] - dmin) * inv_two_var[t])
            out[i, t] = -d * log_sigma[t] - dmin * inv_two_var[t] + math.log(acc)
    return out


def _dte_log_post_numpy(train, test, log_sigma, inv_two_var):
    d = train.shape[1]
    out = np.empty((test.shape[0], log_sigma.size))
    for sl in _row_chunks(test.shape[0], train.shape[0], d):
        sq = _sq_dist_block(train, test[sl])
        for t in range(log_sigma.size):
            out[sl, t] = -d * log_sigma[t] + logsumexp(-sq * inv_two_var[t], axis=1)
    return out


def dte_log_posterior(train, test, params: DtePosteriorParams = DtePosteriorParams()) -> np.ndarray:
    """Normalized log posterior over the sigma grid, one row per test point.

    Unnormalized: ``sigma^-d * sum_{x0 in train} exp(-|x - x0|^2 / (2 sigma^2))``.
    """
    train, test = _pair(train, test)
    grid = params.sigma_grid
    log_sigma = np.log(grid)
    inv_two_var = 1.0 / (2.0 * grid * grid)
    kernel = _dte_log_post_numba if _accel.USE_NUMBA else _dte_log_post_numpy
    logp = kernel(train, test, log_sigma, inv_two_var)
    return logp - logsumexp(logp, axis=1, keepdims=True)


def dte_posterior_score(train, test, params: DtePosteriorParams = DtePosteriorParams()) -> np.ndarray:
    """Posterior mean of sigma for each test row."""
    weights = np.exp(dte_log_posterior(train, test, params))
    return weights @ params.sigma_grid


# --------------------------------------------------------------------------
# Gaussian mixtures by EM
# --------------------------------------------------------------------------


@dataclass
class GaussianMixture:
    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    converged: bool = True
    n_iter: int = 0

    def __post_init__(self):
        self._chol = np.linalg.cholesky(self.covariances)

    def component_loglik(self, x: np.ndarray) -> np.ndarray:
        """(n, k) matrix of log w_k + log N(x | mu_k, Sigma_k)."""
        x = np.atleast_2d(x)
        n, d = x.shape
        out = np.empty((n, self.weights.size))
        for c in range(self.weights.size):
            L = self._chol[c]
            z = solve_triangular(L, (x - self.means[c]).T, lower=True, check_finite=False)
            log_det = 2.0 * np.log(np.diag(L)).sum()
            out[:, c] = -0.5 * (d * math.log(2 * math.pi) + log_det + np.einsum("ij,ij->j", z, z))
        return out + np.log(self.weights)

    def loglik(self, x: np.ndarray) -> np.ndarray:
        return logsumexp(self.component_loglik(x), axis=1)


def kmeans_pp_centers(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding (D^2 sampling)."""
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    closest = np.sum((x - centers[0]) ** 2, axis=1)
    for c in range(1, k):
        total = closest.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers[c] = x[idx]
        closest = np.minimum(closest, np.sum((x - centers[c]) ** 2, axis=1))
    return centers


def _m_step(x, resp, ridge):
    nk = resp.sum(axis=0) + 10 * np.finfo(np.float64).eps
    means = (resp.T @ x) / nk[:, None]
    d = x.shape[1]
    covs = np.empty((nk.size, d, d))
    for c in range(nk.size):
        diff = x - means[c]
        covs[c] = (resp[:, c, None] * diff).T @ diff / nk[c]
        covs[c].flat[:: d + 1] += ridge
    return nk / x.shape[0], means, covs


def fit_gmm(x, k: int, seed: int, max_iter: int = 100, rel_tol: float = 1e-4, ridge: float = 1e-6) -> GaussianMixture:
    """Full-covariance EM from a k-means++ hard assignment.

    Stops when the mean log-likelihood changes by at most ``rel_tol`` relative
    to its previous value. Hitting ``max_iter`` first emits
    :class:`EmNonConvergenceWarning` and keeps the last iterate.
    """
    x = np.asarray(x, dtype=np.float64)
    rng = rng_from(seed)
    centers = kmeans_pp_centers(x, k, rng)
    assign = np.argmin(((x[:, None, :] - centers[None]) ** 2).sum(axis=2), axis=1)
    resp = np.zeros((x.shape[0], k))
    resp[np.arange(x.shape[0]), assign] = 1.0

    gmm = GaussianMixture(*_m_step(x, resp, ridge))
    prev = -np.inf
    converged = False
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        comp = gmm.component_loglik(x)
        norm = logsumexp(comp, axis=1)
        ll = float(norm.mean())
        if abs(ll - prev) <= rel_tol * abs(prev):
            converged = True
            break
        prev = ll
        resp = np.exp(comp - norm[:, None])
        gmm = GaussianMixture(*_m_step(x, resp, ridge))
    if not converged:
        warnings.warn(f"EM did not converge in {max_iter} iterations (k={k})", EmNonConvergenceWarning)
    gmm.converged = converged
    gmm.n_iter = n_iter
    return gmm


@dataclass
class EgmmMember:
    k: int
    bootstrap_index: np.ndarray
    model: GaussianMixture
    oob_mean_loglik: float


def fit_egmm(train, params: EgmmParams = EgmmParams(), seed: int = 0) -> list[EgmmMember]:
    """Fit every (k, bootstrap) member and return the retained ones.

    A member is kept when ``exp(mean OOB loglik)`` is at least
    ``discard_threshold`` times the best member's, i.e. its mean OOB
    log-likelihood is within ``-log(discard_threshold)`` of the best.
    """
    train = np.asarray(train, dtype=np.float64)
    n = train.shape[0]
    if n < 2 * max(params.k_list):
        raise ValidationError(f"EGMM needs at least {2 * max(params.k_list)} train rows, got {n}")
    members = []
    stream = 0
    for k in params.k_list:
        for b in range(params.n_bootstrap):
            member_seed = derive_seed(seed, stream)
            stream += 1
            rng = rng_from(member_seed)
            idx = rng.integers(0, n, size=n)
            oob = np.ones(n, dtype=bool)
            oob[idx] = False
            if not oob.any():
                oob[:] = True
            model = fit_gmm(
                train[idx], k, derive_seed(member_seed, 1),
                max_iter=params.max_iter, rel_tol=params.rel_tol, ridge=params.ridge,
            )
            members.append(EgmmMember(k, idx, model, float(model.loglik(train[oob]).mean())))

    best = max(m.oob_mean_loglik for m in members)
    cutoff = best + math.log(params.discard_threshold)
    kept = [m for m in members if m.oob_mean_loglik >= cutoff]
    if not kept:
        kept = [max(members, key=lambda m: m.oob_mean_loglik)]
    return kept


def egmm_scores(train, test, params: EgmmParams = EgmmParams(), seed: int = 0) -> np.ndarray:
    """Negative mean log-likelihood of ``test`` over the retained ensemble."""
    train, test = _pair(train, test)
    members = fit_egmm(train, params, seed)
    total = np.zeros(test.shape[0])
    for m in members:
        total += m.model.loglik(test)
    return -total / len(members)


METHODS = ("knn", "dtenp", "dteposterior", "egmm")


def score(method: str, train, test, k: int = 5, variant: str = "kth", seed: int = 0) -> np.ndarray:
    """Dispatch by method name (used by the CLI)."""
    if method == "knn":
        return knn_scores(train, test, KnnParams(k=k, variant=variant))
    if method == "dtenp":
        return dtenp_scores(train, test, k=k)
    if method == "dteposterior":
        return dte_posterior_score(train, test)
    if method == "egmm":
        return egmm_scores(train, test, seed=seed)
    raise ValidationError(f"unknown method {method!r}; expected one of {METHODS}")
