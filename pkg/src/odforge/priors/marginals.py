"""Parametric marginals and their inverse CDFs.

Exponential, power-law (Lomax / Pareto II) and log-logistic quantiles are
closed form. Gaussian, Beta and Student-t quantiles are found by a
bracketed Newton iteration on the log-CDF, solving in the lower tail
(``min(u, 1 - u)``) so both tails keep full relative precision.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import special

from ..exceptions import NonConvergence, UnsupportedParameter

FAMILIES = ("gaussian", "beta", "exponential", "student_t", "power_law", "log_logistic")

U_CLAMP = 1e-12
NEWTON_TOL = 1e-10
NEWTON_MAX_ITER = 200


@dataclass(frozen=True)
class MarginalSpec:
    family: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise UnsupportedParameter(f"unknown marginal family {self.family!r}")
        p = self.params
        required = {
            "gaussian": ("mu", "sigma"),
            "beta": ("a", "b", "loc", "scale"),
            "exponential": ("lam", "loc"),
            "student_t": ("df", "loc", "scale"),
            "power_law": ("a", "loc", "scale"),
            "log_logistic": ("c", "loc", "scale"),
        }[self.family]
        missing = [k for k in required if k not in p]
        if missing:
            raise UnsupportedParameter(f"{self.family} marginal is missing {missing}")
        positive = {"sigma", "a", "b", "lam", "df", "scale", "c"}
        bad = [k for k in required if k in positive and not p[k] > 0]
        if bad:
            raise UnsupportedParameter(f"{self.family} parameters {bad} must be positive")


def sample_marginal(rng: np.random.Generator) -> MarginalSpec:
    family = FAMILIES[int(rng.integers(len(FAMILIES)))]
    if family == "gaussian":
        params = {"mu": rng.uniform(-1, 1), "sigma": rng.uniform(0.5, 1.0)}
    elif family == "beta":
        params = {"a": rng.uniform(1, 5), "b": rng.uniform(1, 5), "loc": -5.0, "scale": 10.0}
    elif family == "exponential":
        params = {"lam": rng.uniform(0.5, 1.0), "loc": -5.0}
    elif family == "student_t":
        params = {"df": rng.uniform(3, 10), "loc": rng.uniform(-1, 1), "scale": rng.uniform(0.5, 1.0)}
    elif family == "power_law":
        params = {"a": rng.uniform(0.5, 5), "loc": -5.0, "scale": 5.0}
    else:
        params = {"c": rng.uniform(0.5, 5), "loc": -5.0, "scale": 5.0}
    return MarginalSpec(family, {k: float(v) for k, v in params.items()})


def cdf(m: MarginalSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    p = m.params
    if m.family == "gaussian":
        return special.ndtr((x - p["mu"]) / p["sigma"])
    if m.family == "beta":
        z = np.clip((x - p["loc"]) / p["scale"], 0.0, 1.0)
        return special.betainc(p["a"], p["b"], z)
    if m.family == "exponential":
        z = np.maximum(x - p["loc"], 0.0) / p["lam"]
        return -np.expm1(-z)
    if m.family == "student_t":
        return special.stdtr(p["df"], (x - p["loc"]) / p["scale"])
    if m.family == "power_law":
        z = np.maximum(x - p["loc"], 0.0) / p["scale"]
        return -np.expm1(-p["a"] * np.log1p(z))
    z = np.maximum(x - p["loc"], 0.0) / p["scale"]
    with np.errstate(divide="ignore"):
        return 1.0 / (1.0 + z ** (-p["c"]))


def _newton_lower(log_cdf, pdf, q, lo, hi, x0, what):
    """Solve F(x) = q on [lo, hi] by Newton on log F with bisection fallback."""
    x = np.clip(np.asarray(x0, dtype=np.float64), lo, hi)
    lo = np.full_like(q, lo)
    hi = np.full_like(q, hi)
    log_q = np.log(q)
    active = np.ones(q.shape, dtype=bool)
    for _ in range(NEWTON_MAX_ITER):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            return x
        xi = x[idx]
        lf = log_cdf(xi)
        above = lf > log_q[idx]
        hi[idx] = np.where(above, xi, hi[idx])
        lo[idx] = np.where(above, lo[idx], xi)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            slope = pdf(xi) / np.exp(lf)
            step = (lf - log_q[idx]) / slope
            nxt = xi - step
        bad = ~np.isfinite(nxt) | (nxt < lo[idx]) | (nxt > hi[idx])
        nxt = np.where(bad, 0.5 * (lo[idx] + hi[idx]), nxt)
        # a residual hit keeps xi itself, never the bisection midpoint
        hit = np.abs(lf - log_q[idx]) <= NEWTON_TOL * 1e-3
        nxt = np.where(hit, xi, nxt)
        done = hit | (~bad & (np.abs(nxt - xi) <= NEWTON_TOL * np.maximum(1.0, np.abs(xi))))
        x[idx] = nxt
        active[idx[done]] = False
    if active.any():
        j = int(np.flatnonzero(active)[0])
        raise NonConvergence(f"{what} quantile did not converge for u={q[j]!r}")
    return x


def _gauss_guess(q):
    # logistic approximation to the normal quantile
    return np.log(q / (1.0 - q)) / 1.702


def inv_cdf(m: MarginalSpec, u) -> np.ndarray:
    """Quantile function; ``u`` is clamped to [1e-12, 1 - 1e-12]."""
    u = np.clip(np.asarray(u, dtype=np.float64), U_CLAMP, 1.0 - U_CLAMP)
    scalar = u.ndim == 0
    u = np.atleast_1d(u)
    p = m.params
    fam = m.family

    if fam == "exponential":
        out = p["loc"] - p["lam"] * np.log1p(-u)
    elif fam == "power_law":
        out = p["loc"] + p["scale"] * np.expm1(-np.log1p(-u) / p["a"])
    elif fam == "log_logistic":
        out = p["loc"] + p["scale"] * np.exp((np.log(u) - np.log1p(-u)) / p["c"])
    elif fam in ("gaussian", "student_t"):
        upper = u > 0.5
        q = np.where(upper, 1.0 - u, u)
        if fam == "gaussian":
            z = _newton_lower(special.log_ndtr, lambda x: np.exp(-0.5 * x * x) / np.sqrt(2 * np.pi),
                              q, -40.0, 0.0, _gauss_guess(q), f"gaussian{p}")
            loc, scale = p["mu"], p["sigma"]
        else:
            df = p["df"]
            log_norm = special.gammaln((df + 1) / 2) - special.gammaln(df / 2) - 0.5 * np.log(df * np.pi)
            z = _newton_lower(
                lambda x: np.log(special.stdtr(df, x)),
                lambda x: np.exp(log_norm - (df + 1) / 2 * np.log1p(x * x / df)),
                q, -1e8, 0.0, _gauss_guess(q), f"student_t{p}",
            )
            loc, scale = p["loc"], p["scale"]
        z = np.where(upper, -z, z)
        out = loc + scale * z
    else:
        a, b = p["a"], p["b"]
        upper = u > 0.5
        q = np.where(upper, 1.0 - u, u)
        log_beta = special.betaln(a, b)
        z = np.empty_like(q)
        for flag, (pa, pb) in ((False, (a, b)), (True, (b, a))):
            sel = upper == flag
            if not sel.any():
                continue
            z[sel] = _newton_lower(
                lambda x, pa=pa, pb=pb: np.log(special.betainc(pa, pb, x)),
                lambda x, pa=pa, pb=pb: np.exp((pa - 1) * np.log(x) + (pb - 1) * np.log1p(-x) - log_beta),
                q[sel], 0.0, 1.0, np.full(int(sel.sum()), pa / (pa + pb)), f"beta{p}",
            )
        z = np.where(upper, 1.0 - z, z)
        out = p["loc"] + p["scale"] * z
    return out[0] if scalar else out
