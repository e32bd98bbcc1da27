"""Bivariate pair copulas: conditional distributions and their inverses.

``h(u, v)`` is the conditional CDF ``P(U <= u | V = v) = dC(u, v)/dv`` and
``hinv(w, v)`` solves ``h(u, v) = w`` for ``u``. All families here are
exchangeable, so conditioning on either argument uses the same formula.

Gaussian, Student-t, Clayton and Frank have closed-form inverses. Gumbel and
Joe are inverted by a safeguarded Newton iteration (a numba kernel, or a
vectorized numpy loop when numba is off).
"""

from __future__ import annotations

import functools
import math

import numpy as np
from scipy import optimize, special

from .. import _accel
from .._accel import njit
from ..exceptions import UnsupportedParameter

PAIR_FAMILIES = ("gaussian", "student", "clayton", "gumbel", "frank", "joe")
POSITIVE_ONLY = ("clayton", "gumbel", "joe")

EPS = 1e-12
Z_CLIP = float(-special.ndtri(EPS))  # normal score of the EPS clip
INDEP_THETA = 1e-8
NEWTON_MAX_ITER = 100
F_TOL = 1e-14
U_TOL = 1e-15


def _clip(x):
    return np.clip(x, EPS, 1.0 - EPS)


# ---------------------------------------------------------------------------
# Kendall's tau <-> parameter


# tau = sum_k 4 B_2k t^(2k-1) / ((2k+1) (2k)!)
_BERNOULLI_EVEN = (1 / 6, -1 / 30, 1 / 42, -1 / 30, 5 / 66, -691 / 2730, 7 / 6)
_FRANK_SERIES = tuple(
    4.0 * b / ((2 * k + 1) * math.factorial(2 * k)) for k, b in enumerate(_BERNOULLI_EVEN, start=1)
)


def _frank_tau(theta: np.ndarray) -> np.ndarray:
    """tau(theta) for theta > 0 via the first Debye function.

    int_0^t s/(e^s - 1) ds = pi^2/6 + t log(1 - e^-t) - Li2(e^-t), and
    scipy's ``spence(z)`` is Li2(1 - z).
    """
    t = np.asarray(theta, dtype=np.float64)
    e = np.exp(-t)
    integral = math.pi**2 / 6.0 + t * np.log1p(-e) - special.spence(1.0 - e)
    debye = integral / t
    tau = 1.0 - 4.0 / t * (1.0 - debye)
    # the closed form cancels badly near 0; Debye series there
    series = sum(c * t ** (2 * k - 1) for k, c in enumerate(_FRANK_SERIES, start=1))
    return np.where(t < 0.5, series, tau)


def joe_tau(theta):
    """Closed form tau(theta) = 1 + 2/(2 - theta) (psi(2) - psi(2/theta + 1)), theta >= 1."""
    theta = np.asarray(theta, dtype=np.float64)
    near2 = np.abs(theta - 2.0) < 1e-6
    t = np.where(near2, 2.0 + 1e-6, theta)
    tau = 1.0 + 2.0 / (2.0 - t) * (special.digamma(2.0) - special.digamma(2.0 / t + 1.0))
    # removable singularity at 2: tau(2) = 1 - psi'(2)
    return np.where(near2, 1.0 - special.polygamma(1, 2.0), tau)


@functools.lru_cache(maxsize=None)
def _tau_table(family: str):
    if family == "frank":
        theta = np.geomspace(1e-4, 80.0, 1500)
        return theta, _frank_tau(theta)
    theta = 1.0 + np.geomspace(1e-6, 80.0, 3000)
    return theta, joe_tau(theta)


def kendall_tau(family: str, theta: float) -> float:
    if family in ("gaussian", "student"):
        return 2.0 / math.pi * math.asin(theta)
    if family == "clayton":
        return theta / (theta + 2.0)
    if family == "gumbel":
        return 1.0 - 1.0 / theta
    if family == "frank":
        if abs(theta) < INDEP_THETA:
            return 0.0
        return math.copysign(float(_frank_tau(np.array([abs(theta)]))[0]), theta)
    if family == "joe":
        return float(joe_tau(theta))
    raise UnsupportedParameter(f"unknown pair family {family!r}")


def theta_from_tau(family: str, tau: float) -> float:
    """Invert the family's tau relation (tables + interpolation for Frank and Joe)."""
    if not -1 < tau < 1:
        raise UnsupportedParameter(f"tau={tau} outside (-1, 1)")
    if family in POSITIVE_ONLY and tau < 0:
        raise UnsupportedParameter(f"{family} copula needs tau >= 0, got {tau}")
    if family in ("gaussian", "student"):
        return math.sin(math.pi * tau / 2.0)
    if family == "clayton":
        return 2.0 * tau / (1.0 - tau)
    if family == "gumbel":
        return 1.0 / (1.0 - tau)
    if tau == 0:
        return 0.0 if family == "frank" else 1.0
    theta, taus = _tau_table(family)
    target = abs(tau)
    i = int(np.searchsorted(taus, target))
    if 0 < i < taus.size:
        f = (lambda x: float(_frank_tau(x)) - target) if family == "frank" else (lambda x: float(joe_tau(x)) - target)
        root = optimize.brentq(f, theta[i - 1], theta[i], xtol=1e-14, rtol=1e-14)
    else:
        root = float(np.interp(target, taus, theta, left=theta[0] if family == "frank" else 1.0))
    return math.copysign(root, tau) if family == "frank" else root


def check_parameter(family: str, theta: float, df: float | None = None) -> None:
    ok = {
        "gaussian": -1 < theta < 1,
        "student": -1 < theta < 1 and df is not None and df >= 1 and float(df).is_integer(),
        "clayton": theta >= 0,
        "gumbel": theta >= 1,
        "frank": math.isfinite(theta),
        "joe": theta >= 1,
    }.get(family)
    if ok is None:
        raise UnsupportedParameter(f"unknown pair family {family!r}")
    if not ok:
        raise UnsupportedParameter(f"{family} parameter theta={theta}, df={df} outside its domain")


# ---------------------------------------------------------------------------
# array (numpy) implementations


def _gumbel_h(u, v, th):
    x = -np.log(u)
    y = -np.log(v)
    la = np.log(x**th + y**th)
    return np.exp(-np.exp(la / th) + (1.0 / th - 1.0) * la + (th - 1.0) * np.log(y)) / v


def _gumbel_hinv(w, v, th):
    """Solve for z = A^(1/theta) in z + (theta-1) ln z = c, then recover u.

    The left side is increasing and concave, and the root is >= y, so
    Newton started at z = y climbs monotonically onto it.
    """
    y = -np.log(v)
    c = (th - 1.0) * np.log(y) - np.log(v) - np.log(w)
    z = y.copy()
    active = np.arange(z.size)
    for _ in range(NEWTON_MAX_ITER):
        if active.size == 0:
            break
        za = z[active]
        step = (za + (th - 1.0) * np.log(za) - c[active]) / (1.0 + (th - 1.0) / za)
        nxt = np.maximum(za - step, y[active])
        z[active] = nxt
        active = active[np.abs(nxt - za) > 1e-15 * nxt]
    x = np.maximum(z**th - y**th, 0.0) ** (1.0 / th)
    return np.exp(-x)


def _joe_hc(u, v, th):
    ou = 1.0 - u
    ov = 1.0 - v
    a = ou**th
    b = ov**th
    s = a + b - a * b
    ls = np.log(s)
    h = ov ** (th - 1.0) * (1.0 - a) * np.exp((1.0 / th - 1.0) * ls)
    dens = (ou * ov) ** (th - 1.0) * np.exp((1.0 / th - 2.0) * ls) * (th - 1.0 + s)
    return h, dens


def _joe_hinv(w, v, th):
    """Newton with bisection safeguard on h(u | v) = w."""
    u = w.copy()
    lo = np.zeros_like(w)
    hi = np.ones_like(w)
    dx_old = np.ones_like(w)
    active = np.arange(w.size)
    for _ in range(NEWTON_MAX_ITER):
        if active.size == 0:
            break
        ua = u[active]
        with np.errstate(all="ignore"):
            h, c = _joe_hc(ua, v[active], th)
            f = h - w[active]
            hi[active] = np.where(f > 0, ua, hi[active])
            lo[active] = np.where(f > 0, lo[active], ua)
            done = (np.abs(f) <= F_TOL) | (hi[active] - lo[active] <= U_TOL)
            nxt = ua - f / c
            bad = ~((nxt > lo[active]) & (nxt < hi[active])) | (np.abs(2.0 * f) > np.abs(dx_old[active] * c))
        nxt = np.where(bad, 0.5 * (lo[active] + hi[active]), nxt)
        nxt = np.where(done, ua, nxt)
        dx_old[active] = nxt - ua
        u[active] = nxt
        active = active[~done]
    return u


def _h_numpy(code, u, v, theta, df):
    if code == 0:
        s = math.sqrt(1.0 - theta * theta)
        return special.ndtr((special.ndtri(u) - theta * special.ndtri(v)) / s)
    if code == 1:
        tu = special.stdtrit(df, u)
        tv = special.stdtrit(df, v)
        s = np.sqrt((df + tv * tv) * (1.0 - theta * theta) / (df + 1.0))
        return special.stdtr(df + 1.0, (tu - theta * tv) / s)
    if code == 2:
        if theta < INDEP_THETA:
            return u.copy()
        lu, lv = np.log(u), np.log(v)
        inner = np.expm1(-theta * lu) + np.exp(-theta * lv)
        return np.exp((-theta - 1.0) * lv + (-1.0 - 1.0 / theta) * np.log(inner))
    if code == 3:
        return u.copy() if theta == 1.0 else _gumbel_h(u, v, theta)
    if code == 4:
        if abs(theta) < INDEP_THETA:
            return u.copy()
        eu = np.expm1(-theta * u)
        ev = np.expm1(-theta * v)
        return np.exp(-theta * v) * eu / (np.expm1(-theta) + eu * ev)
    return u.copy() if theta == 1.0 else _joe_hc(u, v, theta)[0]


def _hinv_numpy(code, w, v, theta, df):
    if code == 0:
        s = math.sqrt(1.0 - theta * theta)
        return special.ndtr(special.ndtri(w) * s + theta * special.ndtri(v))
    if code == 1:
        tv = special.stdtrit(df, v)
        s = np.sqrt((df + tv * tv) * (1.0 - theta * theta) / (df + 1.0))
        return special.stdtr(df, special.stdtrit(df + 1.0, w) * s + theta * tv)
    if code == 2:
        if theta < INDEP_THETA:
            return w.copy()
        lv = np.log(v)
        a = np.exp(-theta / (1.0 + theta) * (np.log(w) + (theta + 1.0) * lv))
        return np.exp(-np.log(a - np.exp(-theta * lv) + 1.0) / theta)
    if code == 3:
        return w.copy() if theta == 1.0 else _gumbel_hinv(w, v, theta)
    if code == 4:
        if abs(theta) < INDEP_THETA:
            return w.copy()
        denom = (1.0 / w - 1.0) * np.exp(-theta * v) + 1.0
        return -np.log1p(np.expm1(-theta) / denom) / theta
    return w.copy() if theta == 1.0 else _joe_hinv(w, v, theta)


# ---------------------------------------------------------------------------
# scalar kernels for numba. Student-t pairs use integer degrees of freedom,
# whose CDF is a finite trigonometric series.

# Acklam's rational approximation to the normal quantile
_ACK_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
          1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_ACK_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
          6.680131188771972e01, -1.328068155288572e01)
_ACK_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
          -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_ACK_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
          3.754408661907416e00)


@njit
def _ndtr_s(x):
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


@njit
def _acklam_s(q):
    """Acklam's lower-tail normal quantile, relative error below 1.2e-9 (q <= 0.5)."""
    a, b, c, d = _ACK_A, _ACK_B, _ACK_C, _ACK_D
    if q < 0.02425:
        r = math.sqrt(-2.0 * math.log(q))
        return (((((c[0] * r + c[1]) * r + c[2]) * r + c[3]) * r + c[4]) * r + c[5]) / (
            (((d[0] * r + d[1]) * r + d[2]) * r + d[3]) * r + 1.0)
    r = q - 0.5
    r2 = r * r
    return (((((a[0] * r2 + a[1]) * r2 + a[2]) * r2 + a[3]) * r2 + a[4]) * r2 + a[5]) * r / (
        ((((b[0] * r2 + b[1]) * r2 + b[2]) * r2 + b[3]) * r2 + b[4]) * r2 + 1.0)


@njit
def _ndtri_s(p):
    """Normal quantile: Acklam's approximation plus one Halley step."""
    q = min(p, 1.0 - p)
    x = _acklam_s(q)
    e = _ndtr_s(x) - q
    u = e * math.sqrt(2.0 * math.pi) * math.exp(0.5 * x * x)
    x = x - u / (1.0 + 0.5 * x * u)
    return x if p <= 0.5 else -x


@njit
def _t_cdf_s(t, df):
    """CDF of Student's t with integer ``df`` (series in cos(atan(t/sqrt(df))))."""
    nu = int(df)
    th = math.atan(t / math.sqrt(nu))
    s = math.sin(th)
    c2 = math.cos(th) ** 2
    if nu % 2 == 1:
        acc = 0.0
        term = 1.0
        for k in range(1, (nu - 1) // 2 + 1):
            acc += term
            term *= c2 * (2.0 * k) / (2.0 * k + 1.0)
        a = 2.0 / math.pi * (th + s * math.cos(th) * acc)
    else:
        acc = 0.0
        term = 1.0
        for k in range(1, nu // 2 + 1):
            acc += term
            term *= c2 * (2.0 * k - 1.0) / (2.0 * k)
        a = s * acc
    return 0.5 + 0.5 * a


@njit
def _t_quantile_start(q, df):
    """Hill's (1970) approximation to the lower-tail t quantile, q <= 0.5."""
    pp = 2.0 * q
    a = 1.0 / (df - 0.5)
    b = 48.0 / (a * a)
    c = ((20700.0 * a / b - 98.0) * a - 16.0) * a + 96.36
    d = ((94.5 / (b + c) - 3.0) / b + 1.0) * math.sqrt(a * math.pi / 2.0) * df
    y = (d * pp) ** (2.0 / df)
    if y > 0.05 + a:
        x = _acklam_s(0.5 * pp)
        y = x * x
        if df < 5.0:
            c += 0.3 * (df - 4.5) * (x + 0.6)
        c = (((0.05 * d * x - 5.0) * x - 7.0) * x - 2.0) * x + b + c
        y = (((((0.4 * y + 6.3) * y + 36.0) * y + 94.5) / c - y - 3.0) / b + 1.0) * x
        y = math.expm1(a * y * y)
    else:
        y = ((1.0 / (((df + 6.0) / (df * y) - 0.089 * d - 0.822) * (df + 2.0) * 3.0)
              + 0.5 / (df + 4.0)) * y - 1.0) * (df + 1.0) / (df + 2.0) + 1.0 / y
    return -math.sqrt(df * y)


@njit
def _t_log_norm(df):
    """log of the Student-t density constant for integer ``df``.

    Gamma((nu+1)/2) / Gamma(nu/2) by the recurrence r(nu + 2) = r(nu) (nu + 1) / nu.
    """
    nu = int(df)
    if nu % 2 == 1:
        r = 1.0 / math.sqrt(math.pi)
        k = 1
    else:
        r = 0.5 * math.sqrt(math.pi)
        k = 2
    while k < nu:
        r *= (k + 1.0) / k
        k += 2
    return math.log(r) - 0.5 * math.log(df * math.pi)


@njit
def _t_quantile_s(p, df):
    """Student-t quantile: Halley steps on the CDF from Hill's start.

    Solved in the lower tail and mirrored for p > 0.5.
    """
    q = min(p, 1.0 - p)
    if q >= 0.5:
        return 0.0
    t = _t_quantile_start(q, df)
    log_norm = _t_log_norm(df)
    for _ in range(NEWTON_MAX_ITER):
        f = _t_cdf_s(t, df) - q
        dens = math.exp(log_norm - 0.5 * (df + 1.0) * math.log1p(t * t / df))
        r = f / dens
        # f''/f' = -(df + 1) t / (df + t^2)
        step = r / (1.0 + 0.5 * r * (df + 1.0) * t / (df + t * t))
        nxt = min(t - step, 0.0)
        # cubic convergence: a step below 1e-5 leaves an error near 1e-15
        if abs(nxt - t) <= 1e-5 * max(1.0, abs(t)):
            t = nxt
            break
        t = nxt
    return -t if p > 0.5 else t


@njit
def _gumbel_hinv_s(w, v, th):
    y = -math.log(v)
    c = (th - 1.0) * math.log(y) - math.log(v) - math.log(w)
    # z + k ln z = c has z ~ c - k ln c for large c
    z = max(y, c - (th - 1.0) * math.log(c)) if c > 1.0 else y
    for _ in range(NEWTON_MAX_ITER):
        nxt = z - (z + (th - 1.0) * math.log(z) - c) / (1.0 + (th - 1.0) / z)
        if nxt < y:
            nxt = y
        # quadratic convergence: a relative step of 1e-8 leaves ~1e-16
        if abs(nxt - z) <= 1e-8 * nxt:
            z = nxt
            break
        z = nxt
    x = max(z**th - y**th, 0.0) ** (1.0 / th)
    return math.exp(-x)


@njit
def _joe_hinv_s(w, v, th):
    """Solve h(u | v) = w in L = log A, A = (1 - u)^theta.

    With B = (1 - v)^theta, log h = (theta - 1) log(1 - v) + log(1 - A)
    + (1/theta - 1) log(B + A (1 - B)), strictly decreasing in A. Working
    in log A keeps relative precision when A and B are tiny (u, v near 1).
    Newton with a bisection safeguard on [theta log EPS, 0].
    """
    ov = 1.0 - v
    bb = ov**th
    e = 1.0 / th - 1.0
    c = math.log(w) - (th - 1.0) * math.log(ov)
    lo = th * math.log(EPS)
    hi = 0.0
    ll = th * math.log1p(-w)
    for _ in range(NEWTON_MAX_ITER):
        aa = math.exp(ll)
        lin = bb + aa * (1.0 - bb)
        g = math.log(-math.expm1(ll)) + e * math.log(lin) - c
        if g > 0.0:
            lo = ll
        else:
            hi = ll
        if abs(g) <= F_TOL or hi - lo <= 1e-15 * max(1.0, -ll):
            break
        slope = -aa / (-math.expm1(ll)) + e * aa * (1.0 - bb) / lin
        nxt = ll - g / slope
        if not (nxt > lo and nxt < hi):
            nxt = 0.5 * (lo + hi)
        elif abs(nxt - ll) <= 1e-9 * max(1.0, -ll):
            ll = nxt
            break
        ll = nxt
    return -math.expm1(ll / th)


@njit
def _clip_s(x):
    return min(max(x, EPS), 1.0 - EPS)


@njit
def _h_s(code, u, v, theta, df):
    u = _clip_s(u)
    v = _clip_s(v)
    if code == 0:
        out = _ndtr_s((_ndtri_s(u) - theta * _ndtri_s(v)) / math.sqrt(1.0 - theta * theta))
    elif code == 1:
        tu = _t_quantile_s(u, df)
        tv = _t_quantile_s(v, df)
        s = math.sqrt((df + tv * tv) * (1.0 - theta * theta) / (df + 1.0))
        out = _t_cdf_s((tu - theta * tv) / s, df + 1.0)
    elif code == 2:
        if theta < INDEP_THETA:
            out = u
        else:
            lv = math.log(v)
            inner = math.expm1(-theta * math.log(u)) + math.exp(-theta * lv)
            out = math.exp((-theta - 1.0) * lv + (-1.0 - 1.0 / theta) * math.log(inner))
    elif code == 3:
        if theta == 1.0:
            out = u
        else:
            y = -math.log(v)
            la = math.log((-math.log(u)) ** theta + y**theta)
            out = math.exp(-math.exp(la / theta) + (1.0 / theta - 1.0) * la + (theta - 1.0) * math.log(y)) / v
    elif code == 4:
        if abs(theta) < INDEP_THETA:
            out = u
        else:
            eu = math.expm1(-theta * u)
            ev = math.expm1(-theta * v)
            out = math.exp(-theta * v) * eu / (math.expm1(-theta) + eu * ev)
    else:
        if theta == 1.0:
            out = u
        else:
            ov = 1.0 - v
            a = (1.0 - u) ** theta
            b = ov**theta
            s = a + b - a * b
            out = ov ** (theta - 1.0) * (1.0 - a) * math.exp((1.0 / theta - 1.0) * math.log(s))
    return _clip_s(out)


@njit
def _hinv_s(code, w, v, theta, df):
    w = _clip_s(w)
    v = _clip_s(v)
    if code == 0:
        out = _ndtr_s(_ndtri_s(w) * math.sqrt(1.0 - theta * theta) + theta * _ndtri_s(v))
    elif code == 1:
        tv = _t_quantile_s(v, df)
        s = math.sqrt((df + tv * tv) * (1.0 - theta * theta) / (df + 1.0))
        out = _t_cdf_s(_t_quantile_s(w, df + 1.0) * s + theta * tv, df)
    elif code == 2:
        if theta < INDEP_THETA:
            out = w
        else:
            lv = math.log(v)
            a = math.exp(-theta / (1.0 + theta) * (math.log(w) + (theta + 1.0) * lv))
            out = math.exp(-math.log(a - math.exp(-theta * lv) + 1.0) / theta)
    elif code == 3:
        out = w if theta == 1.0 else _gumbel_hinv_s(w, v, theta)
    elif code == 4:
        if abs(theta) < INDEP_THETA:
            out = w
        else:
            denom = (1.0 / w - 1.0) * math.exp(-theta * v) + 1.0
            out = -math.log1p(math.expm1(-theta) / denom) / theta
    else:
        out = w if theta == 1.0 else _joe_hinv_s(w, v, theta)
    return _clip_s(out)


@njit
def _h_numba(code, u, v, theta, df):
    out = np.empty(u.shape[0])
    for i in range(u.shape[0]):
        out[i] = _h_s(code, u[i], v[i], theta, df)
    return out


@njit
def _hinv_numba(code, w, v, theta, df):
    out = np.empty(w.shape[0])
    for i in range(w.shape[0]):
        out[i] = _hinv_s(code, w[i], v[i], theta, df)
    return out


# ---------------------------------------------------------------------------
# public h / hinv


def family_code(family: str) -> int:
    try:
        return PAIR_FAMILIES.index(family)
    except ValueError:
        raise UnsupportedParameter(f"unknown pair family {family!r}") from None


def _prepare(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    shape = np.broadcast(a, b).shape
    a = _clip(np.broadcast_to(a, shape).ravel())
    b = _clip(np.broadcast_to(b, shape).ravel())
    return a, b, shape


def h(family: str, u, v, theta: float, df: float | None = None) -> np.ndarray:
    """Conditional CDF of U at ``u`` given V = ``v``."""
    code = family_code(family)
    u, v, shape = _prepare(u, v)
    df = 0.0 if df is None else float(df)
    if _accel.USE_NUMBA:
        out = _h_numba(code, u, v, float(theta), df)
    else:
        with np.errstate(divide="ignore", over="ignore"):
            out = _clip(_h_numpy(code, u, v, float(theta), df))
    return out.reshape(shape)


def hinv(family: str, w, v, theta: float, df: float | None = None) -> np.ndarray:
    """Inverse of :func:`h` in its first argument."""
    code = family_code(family)
    w, v, shape = _prepare(w, v)
    df = 0.0 if df is None else float(df)
    if _accel.USE_NUMBA:
        out = _hinv_numba(code, w, v, float(theta), df)
    else:
        with np.errstate(divide="ignore", over="ignore"):
            out = _clip(_hinv_numpy(code, w, v, float(theta), df))
    return out.reshape(shape)


def simulate_pair(family: str, theta: float, n: int, rng, df: float | None = None) -> np.ndarray:
    """``n`` draws from the bivariate copula by conditional inversion."""
    v = rng.random(n)
    u = hinv(family, rng.random(n), v, theta, df)
    return np.column_stack([u, v])


# ---------------------------------------------------------------------------
# D-vine sampling


@njit
def _dvine_numba(w, codes, thetas, dfs):
    n, d = w.shape
    x = np.empty((n, d))
    a = np.empty(d)
    b = np.empty(d + 2)
    nxt = np.empty(d)
    # Gaussian pairs work on normal scores; za/zb hold the score of a/b
    # when the value was produced by a Gaussian pair (flags ga/gb)
    za = np.empty(d)
    zb = np.empty(d + 2)
    znxt = np.empty(d)
    ga = np.zeros(d, dtype=np.bool_)
    gb = np.zeros(d + 2, dtype=np.bool_)
    gnxt = np.zeros(d, dtype=np.bool_)
    # scores of a[t-1] and b[t] from the inverse pass, reused by the
    # forward h pass (Gaussian and Student pairs)
    ta = np.empty(d + 1)
    tb = np.empty(d + 1)
    for r in range(n):
        x[r, 0] = w[r, 0]
        a[0] = w[r, 0]
        ga[0] = False
        for i in range(1, d):
            b[i + 1] = w[r, i]
            gb[i + 1] = False
            for t in range(i, 0, -1):
                j = i - t
                code = codes[t - 1, j]
                if code == 0:
                    rho = thetas[t - 1, j]
                    zv = za[t - 1] if ga[t - 1] else _ndtri_s(_clip_s(a[t - 1]))
                    zw = zb[t + 1] if gb[t + 1] else _ndtri_s(_clip_s(b[t + 1]))
                    z = min(max(zw * math.sqrt(1.0 - rho * rho) + rho * zv, -Z_CLIP), Z_CLIP)
                    b[t] = _clip_s(_ndtr_s(z))
                    zb[t] = z
                    gb[t] = True
                    ta[t] = zv
                    tb[t] = z
                elif code == 1:
                    rho = thetas[t - 1, j]
                    df = dfs[t - 1, j]
                    tv = _t_quantile_s(_clip_s(a[t - 1]), df)
                    sc = math.sqrt((df + tv * tv) * (1.0 - rho * rho) / (df + 1.0))
                    z = _t_quantile_s(_clip_s(b[t + 1]), df + 1.0) * sc + rho * tv
                    b[t] = _clip_s(_t_cdf_s(z, df))
                    gb[t] = False
                    ta[t] = tv
                    tb[t] = z
                else:
                    b[t] = _hinv_s(code, b[t + 1], a[t - 1], thetas[t - 1, j], dfs[t - 1, j])
                    gb[t] = False
            x[r, i] = b[1]
            if i + 1 < d:
                nxt[0] = b[1]
                znxt[0] = zb[1]
                gnxt[0] = gb[1]
                for t in range(1, i + 1):
                    j = i - t
                    code = codes[t - 1, j]
                    if code == 0:
                        rho = thetas[t - 1, j]
                        z = min(max((ta[t] - rho * tb[t]) / math.sqrt(1.0 - rho * rho), -Z_CLIP), Z_CLIP)
                        nxt[t] = _clip_s(_ndtr_s(z))
                        znxt[t] = z
                        gnxt[t] = True
                    elif code == 1:
                        rho = thetas[t - 1, j]
                        df = dfs[t - 1, j]
                        tv = tb[t]
                        sc = math.sqrt((df + tv * tv) * (1.0 - rho * rho) / (df + 1.0))
                        nxt[t] = _clip_s(_t_cdf_s((ta[t] - rho * tv) / sc, df + 1.0))
                        gnxt[t] = False
                    else:
                        nxt[t] = _h_s(code, a[t - 1], b[t], thetas[t - 1, j], dfs[t - 1, j])
                        gnxt[t] = False
                for t in range(i + 1):
                    a[t] = nxt[t]
                    za[t] = znxt[t]
                    ga[t] = gnxt[t]
    return x


def _dvine_numpy(w, codes, thetas, dfs):
    n, d = w.shape
    x = np.empty_like(w)
    x[:, 0] = w[:, 0]
    a = [x[:, 0]]
    with np.errstate(divide="ignore", over="ignore"):
        for i in range(1, d):
            b = [None] * (i + 2)
            b[i + 1] = w[:, i]
            for t in range(i, 0, -1):
                j = i - t
                b[t] = _clip(_hinv_numpy(codes[t - 1, j], _clip(b[t + 1]), a[t - 1], thetas[t - 1, j], dfs[t - 1, j]))
            x[:, i] = b[1]
            if i + 1 < d:
                nxt = [b[1]]
                for t in range(1, i + 1):
                    j = i - t
                    nxt.append(_clip(_h_numpy(codes[t - 1, j], a[t - 1], b[t], thetas[t - 1, j], dfs[t - 1, j])))
                a = nxt
    return x


def dvine_sample(w: np.ndarray, codes: np.ndarray, thetas: np.ndarray, dfs: np.ndarray) -> np.ndarray:
    """Map independent uniforms ``w`` (n, d) to a D-vine sample.

    ``codes``, ``thetas`` and ``dfs`` are (d-1, d-1) arrays indexed by
    ``[tree - 1, edge]``; the pair at ``[t - 1, j]`` couples variables
    ``j`` and ``j + t`` given those in between.

    For variable i, ``a[t-1] = F(x_{i-t} | x_{i-t+1..i-1})`` and
    ``b[t] = F(x_i | x_{i-t+1..i-1})``. ``b[i+1] = w_i`` is peeled down to
    ``b[1] = x_i`` by inverse h-functions, then ``a`` is rolled forward
    for the next variable.
    """
    w = np.ascontiguousarray(w, dtype=np.float64)
    if w.shape[1] == 0:
        return w.copy()
    if _accel.USE_NUMBA:
        return _dvine_numba(w, codes, thetas, dfs)
    return _dvine_numpy(_clip(w), codes, thetas, dfs)
