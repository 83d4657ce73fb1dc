"""Weibull failure-rate (WFRF) and inverse failure-rate (IFRF) curve fitting.

WFRF:  lambda(k) = c + a1 * beta / eta**beta * k**(beta - 1)
IFRF:  F(k)      = a3 / (k + a2)**beta

The four WFRF parameters only enter through ``c``, ``beta`` and the product
``a1 * beta / eta**beta``, so the fit runs on three identifiable quantities and
``eta`` is held at the reference value passed in ``init`` (default 1).  Both
families are fitted in an internal parameterisation that keeps ``beta > 0``
and, for IFRF, the pole left of the fitted domain:

    WFRF  y = c + A * (k / k_ref)**(beta - 1),           beta = exp(q)
    IFRF  y = A * (d / (k - k_min + d))**beta,           d = exp(u), beta = exp(q)

The amplitudes enter linearly; every start solves them exactly for its shape
parameters before Levenberg-Marquardt polishes all three jointly.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import least_squares

from rulforge.data import FeatureMatrix
from rulforge.errors import InsufficientData, NonConvergence, PoleInDomain
from rulforge.features.health import trailing_windows, window_statistics

log = logging.getLogger(__name__)

WFRF, IFRF = "WFRF", "IFRF"
N_PARAMS = {WFRF: 4, IFRF: 3}
# log-uniform start ranges
WFRF_BETA_RANGE = (0.5, 30.0)
IFRF_BETA_RANGE = (0.05, 10.0)
IFRF_OFFSET_RANGE = (0.01, 10.0)   # d / span
CURVE_CHANNELS = ("mean_fit", "sd_fit", "rms_fit")


@dataclass(frozen=True)
class WfrfParams:
    c: float
    a1: float
    beta: float
    eta: float = 1.0

    def __post_init__(self):
        if not (self.beta > 0 and self.eta > 0):
            raise ValueError("WFRF needs beta > 0 and eta > 0")


@dataclass(frozen=True)
class IfrfParams:
    beta: float
    a2: float
    a3: float

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("IFRF needs beta > 0")


def eval_wfrf(params: WfrfParams, k):
    k = np.asarray(k, dtype=np.float64)
    p = params
    return p.c + p.a1 * (p.beta / p.eta**p.beta) * k ** (p.beta - 1.0)


def eval_ifrf(params: IfrfParams, k):
    k = np.asarray(k, dtype=np.float64)
    base = k + params.a2
    if np.any(base <= 0):
        raise PoleInDomain(f"k + a2 <= 0 for a2={params.a2}")
    return params.a3 / base**params.beta


@dataclass(frozen=True)
class CurveFit:
    family: str
    params: WfrfParams | IfrfParams
    residual: float
    converged: bool
    k_min: float
    k_max: float

    def __call__(self, k):
        if self.family == WFRF:
            return eval_wfrf(self.params, k)
        return eval_ifrf(self.params, k)

    def to_dict(self) -> dict:
        return {"family": self.family, "params": asdict(self.params), "residual": self.residual,
                "converged": self.converged, "domain": [self.k_min, self.k_max]}

    @classmethod
    def from_dict(cls, d: dict) -> "CurveFit":
        params = WfrfParams(**d["params"]) if d["family"] == WFRF else IfrfParams(**d["params"])
        return cls(d["family"], params, d["residual"], d["converged"], *d["domain"])


# internal model: (basis for the linear amplitude, its derivatives) ----------

def _wfrf_basis(theta, k, k_ref):
    q = theta[2]
    beta = np.exp(q)
    r = k / k_ref
    g = r ** (beta - 1.0)
    dg_dq = g * np.log(r) * beta
    return g, dg_dq


def _wfrf_resid(theta, k, y, k_ref):
    g, _ = _wfrf_basis(theta, k, k_ref)
    return theta[0] + theta[1] * g - y


def _wfrf_jac(theta, k, y, k_ref):
    g, dg_dq = _wfrf_basis(theta, k, k_ref)
    return np.column_stack([np.ones_like(k), g, theta[1] * dg_dq])


def _ifrf_basis(theta, k, k_min):
    d = np.exp(theta[1])
    beta = np.exp(theta[2])
    t = k - k_min + d
    ratio = d / t
    g = ratio**beta
    # d/du of ratio**beta with d = e^u: beta * ratio**beta * (1 - d/t)
    dg_du = beta * g * (1.0 - ratio)
    dg_dq = g * np.log(ratio) * beta
    return g, dg_du, dg_dq


def _ifrf_resid(theta, k, y, k_min):
    g, _, _ = _ifrf_basis(theta, k, k_min)
    return theta[0] * g - y


def _ifrf_jac(theta, k, y, k_min):
    g, dg_du, dg_dq = _ifrf_basis(theta, k, k_min)
    return np.column_stack([g, theta[0] * dg_du, theta[0] * dg_dq])


def _linear_amplitudes(G: np.ndarray, y: np.ndarray, with_offset: bool):
    """Least-squares amplitudes for many candidate bases at once.

    ``G`` has shape ``(m, n)``: one basis per candidate.  Returns the
    coefficients and residual sums of squares.
    """
    if with_offset:
        n = y.size
        sg, sy = G.sum(axis=1), y.sum()
        sgg, sgy = (G * G).sum(axis=1), G @ y
        det = n * sgg - sg * sg
        safe = np.where(np.abs(det) > 1e-300, det, 1.0)
        A = np.where(np.abs(det) > 1e-300, (n * sgy - sg * sy) / safe, 0.0)
        c = (sy - A * sg) / n
        res = ((c[:, None] + A[:, None] * G - y) ** 2).sum(axis=1)
        return np.column_stack([c, A]), res
    sgg, sgy = (G * G).sum(axis=1), G @ y
    A = np.where(sgg > 0, sgy / np.where(sgg > 0, sgg, 1.0), 0.0)
    res = ((A[:, None] * G - y) ** 2).sum(axis=1)
    return A[:, None], res


def _starts_wfrf(k, y, k_ref, rng, n_starts):
    grid_q = np.log(np.geomspace(*WFRF_BETA_RANGE, 48))
    rand_q = np.log(WFRF_BETA_RANGE[0]) + rng.random(max(n_starts - 1, 0)) * np.log(
        WFRF_BETA_RANGE[1] / WFRF_BETA_RANGE[0])
    r = k / k_ref
    G = r[None, :] ** (np.exp(grid_q)[:, None] - 1.0)
    coef, res = _linear_amplitudes(G, y, True)
    best = int(np.argmin(res))
    starts = [np.array([coef[best, 0], coef[best, 1], grid_q[best]])]
    if rand_q.size:
        G = r[None, :] ** (np.exp(rand_q)[:, None] - 1.0)
        coef, _ = _linear_amplitudes(G, y, True)
        starts += [np.array([coef[i, 0], coef[i, 1], rand_q[i]]) for i in range(rand_q.size)]
    return starts


def _starts_ifrf(k, y, k_min, rng, n_starts):
    span = max(float(k.max() - k_min), 1.0)
    lo_b, hi_b = np.log(IFRF_BETA_RANGE)
    lo_d, hi_d = np.log(np.array(IFRF_OFFSET_RANGE) * span)
    qs = np.linspace(lo_b, hi_b, 32)
    us = np.linspace(lo_d, hi_d, 32)
    U, Q = np.meshgrid(us, qs, indexing="ij")
    U, Q = U.ravel(), Q.ravel()
    d = np.exp(U)[:, None]
    G = (d / (k[None, :] - k_min + d)) ** np.exp(Q)[:, None]
    coef, res = _linear_amplitudes(G, y, False)
    best = int(np.argmin(res))
    starts = [np.array([coef[best, 0], U[best], Q[best]])]
    m = max(n_starts - 1, 0)
    if m:
        ru = lo_d + rng.random(m) * (hi_d - lo_d)
        rq = lo_b + rng.random(m) * (hi_b - lo_b)
        d = np.exp(ru)[:, None]
        G = (d / (k[None, :] - k_min + d)) ** np.exp(rq)[:, None]
        coef, _ = _linear_amplitudes(G, y, False)
        starts += [np.array([coef[i, 0], ru[i], rq[i]]) for i in range(m)]
    return starts


def _to_params(family, theta, eta, ref):
    with np.errstate(over="ignore", invalid="ignore"):
        if family == WFRF:
            c, A, q = theta
            beta = float(np.exp(q))
            a1 = float(A * np.power(eta, beta) / (beta * np.power(float(ref), beta - 1.0)))
            vals = (c, a1, beta)
        else:
            A, u, q = theta
            beta, d = float(np.exp(q)), float(np.exp(u))
            a3 = float(A * np.power(d, beta))
            vals = (beta, d, a3)
    if not all(np.isfinite(v) for v in vals) or not beta > 0:
        return None
    if family == WFRF:
        return WfrfParams(float(vals[0]), vals[1], vals[2], eta)
    return IfrfParams(beta, d - ref, a3)


_MAX_LOG_SCALE = 500.0


def _bounded_fit(family, resid, jac, extra, theta, k, eta, max_nfev):
    span = max(float(k.max() - k.min()), 1.0)
    if family == WFRF:
        lo = [-np.inf, -np.inf, np.log(WFRF_BETA_RANGE[0] / 10)]
        hi = [np.inf, np.inf, np.log(WFRF_BETA_RANGE[1] * 10)]
    else:
        u_hi = np.log(IFRF_OFFSET_RANGE[1] * span * 10)
        # keep beta * log(d) well inside the float range so a3 = A * d**beta stays finite
        q_hi = np.log(IFRF_BETA_RANGE[1] * 10)
        if u_hi > 0:
            q_hi = min(q_hi, np.log(_MAX_LOG_SCALE / u_hi))
        lo = [-np.inf, np.log(IFRF_OFFSET_RANGE[0] * span / 10), np.log(IFRF_BETA_RANGE[0] / 10)]
        hi = [np.inf, u_hi, q_hi]
    x0 = np.clip(theta, np.nextafter(lo, np.inf), np.nextafter(hi, -np.inf))
    with np.errstate(over="ignore", invalid="ignore", divide="ignore", under="ignore"):
        sol = least_squares(resid, x0, jac=jac, args=extra, bounds=(lo, hi), method="trf",
                            xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=max_nfev)
    params = _to_params(family, sol.x, eta, extra[2])
    if params is None:
        return None, None
    try:
        fitted = eval_wfrf(params, k) if family == WFRF else eval_ifrf(params, k)
    except PoleInDomain:
        return None, None
    return (params, fitted) if np.all(np.isfinite(fitted)) else (None, None)


def fit_curve(feature_series, family: str = WFRF, init: WfrfParams | IfrfParams | None = None,
              seed: int = 0, cycles=None, n_starts: int = 8, max_nfev: int = 4000,
              strict: bool = False) -> CurveFit:
    """Least-squares fit of a WFRF or IFRF curve with multi-start Levenberg-Marquardt.

    ``cycles`` gives the cycle index of each value (default ``1..n``).  The
    returned fit carries the final sum of squared residuals.  When no start
    converges the best-so-far fit comes back with ``converged=False``, or
    :class:`NonConvergence` is raised if ``strict``.
    """
    if family not in N_PARAMS:
        raise ValueError(f"family must be {WFRF} or {IFRF}")
    y = np.asarray(feature_series, dtype=np.float64)
    k = np.arange(1, y.size + 1, dtype=np.float64) if cycles is None else np.asarray(cycles, np.float64)
    if y.size < N_PARAMS[family] + 1:
        raise InsufficientData(f"{family} fit needs at least {N_PARAMS[family] + 1} points, got {y.size}")
    if k.shape != y.shape or np.any(k <= 0) or not np.all(np.isfinite(y)):
        raise ValueError("cycles must be positive, finite data must match their length")
    rng = np.random.default_rng(seed)

    if family == WFRF:
        k_ref = float(k.max())
        resid, jac, extra = _wfrf_resid, _wfrf_jac, (k, y, k_ref)
        starts = _starts_wfrf(k, y, k_ref, rng, n_starts)
        if isinstance(init, WfrfParams):
            A = init.a1 * init.beta / init.eta**init.beta * k_ref ** (init.beta - 1.0)
            starts.insert(0, np.array([init.c, A, np.log(init.beta)]))
    else:
        k_min = float(k.min())
        resid, jac, extra = _ifrf_resid, _ifrf_jac, (k, y, k_min)
        starts = _starts_ifrf(k, y, k_min, rng, n_starts)
        if isinstance(init, IfrfParams) and k_min + init.a2 > 0:
            d = k_min + init.a2
            starts.insert(0, np.array([init.a3 / d**init.beta, np.log(d), np.log(init.beta)]))

    solutions, any_ok = [], False
    scale = max(float(np.abs(y).max()), 1e-300)
    for theta0 in starts:
        if not np.all(np.isfinite(theta0)):
            continue
        with np.errstate(over="ignore", invalid="ignore", divide="ignore", under="ignore"):
            try:
                sol = least_squares(resid, theta0, jac=jac, args=extra, method="lm",
                                    xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=max_nfev)
            except (ValueError, FloatingPointError):
                continue
        if not np.all(np.isfinite(sol.fun)):
            continue
        cost = float(sol.fun @ sol.fun)
        solutions.append((cost, len(solutions), sol.x))
        any_ok |= sol.status > 0
        if cost <= (1e-14 * scale) ** 2 * y.size:
            break   # exact fit; further starts cannot improve

    # best start whose public parameterisation is representable in floating point
    eta = init.eta if isinstance(init, WfrfParams) else 1.0
    params = None
    for best_cost, _, best in sorted(solutions, key=lambda s: s[:2]):
        params = _to_params(family, best, eta, extra[2])
        if params is None:
            continue
        try:
            with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                fitted = eval_wfrf(params, k) if family == WFRF else eval_ifrf(params, k)
        except PoleInDomain:
            fitted = np.array([np.nan])
        if np.all(np.isfinite(fitted)):
            break
        params = None
    if params is None and solutions:
        # the unconstrained optimum sits at an unrepresentable limit (e.g. an
        # exponential or constant tail); settle for the best fit inside a box
        params, fitted = _bounded_fit(family, resid, jac, extra, min(solutions, key=lambda s: s[:2])[2],
                                      k, eta, max_nfev)
    if params is None:
        raise NonConvergence(f"{family} fit produced no finite solution")
    # the reported residual is recomputed on the returned parameterisation
    r = fitted - y
    residual = float(r @ r)
    fit = CurveFit(family, params, residual, bool(any_ok), float(k.min()), float(k.max()))
    if not any_ok:
        if strict:
            raise NonConvergence(f"{family} fit did not converge", best=fit)
        log.warning("%s fit did not converge; returning best-so-far (residual %.3g)", family, residual)
    return fit


# featurization ----------------------------------------------------------------

def _pattern_shape(pattern) -> str:
    if pattern in (0, "pattern1", "rise", "Pattern1"):
        return "rise"
    if pattern in (1, "pattern2", "rise-decay", "Pattern2"):
        return "rise-decay"
    raise ValueError(f"unknown pattern {pattern!r}")


def _fit_channel(y, k, shape, split, seed, n_starts):
    if shape == "rise" or split is None:
        fit = fit_curve(y, WFRF, seed=seed, cycles=k, n_starts=n_starts)
        return fit(k), [fit]
    head = fit_curve(y[: split + 1], WFRF, seed=seed, cycles=k[: split + 1], n_starts=n_starts)
    tail = fit_curve(y[split + 1:], IFRF, seed=seed, cycles=k[split + 1:], n_starts=n_starts)
    return np.concatenate([head(k[: split + 1]), tail(k[split + 1:])]), [head, tail]


def curvefit_features(x, pattern, window_length: int = 20, seed: int = 0, n_starts: int = 8):
    """Fitted Mean/SD/RMS curves for one series, plus the fits themselves.

    Rise patterns get a WFRF over the whole series.  Rise-then-decay patterns
    are split at the argmax of the windowed mean: WFRF up to it, IFRF after.
    If either side is too short to fit, the whole channel falls back to WFRF.
    """
    shape = _pattern_shape(pattern)
    values = np.asarray(getattr(x, "values", x), dtype=np.float64)
    cycles = np.asarray(getattr(x, "cycles", np.arange(1, values.size + 1)))
    stats = window_statistics(trailing_windows(values, window_length))
    k = cycles[window_length - 1:].astype(np.float64)
    channels = (stats[:, 0], stats[:, 1], stats[:, 2])
    if k.size < N_PARAMS[WFRF] + 1:
        raise InsufficientData(f"only {k.size} windowed points to fit")
    split = None
    if shape == "rise-decay":
        split = int(np.argmax(channels[0]))
        if split + 1 < N_PARAMS[WFRF] + 1 or k.size - split - 1 < N_PARAMS[IFRF] + 1:
            split = None
    out, fits = [], {}
    for name, y in zip(CURVE_CHANNELS, channels):
        curve, f = _fit_channel(y, k, shape, split, seed, n_starts)
        out.append(curve)
        fits[name] = f
    rows = np.column_stack(out)
    if not np.all(np.isfinite(rows)):
        raise NonConvergence("fitted curves are not finite")
    fm = FeatureMatrix(rows, cycles[window_length - 1:], "CurveFit", getattr(x, "series_id", ""), CURVE_CHANNELS)
    return fm, {"split_cycle": None if split is None else int(k[split]), "fits": fits}


def curvefit_featurize(x, pattern, window_length: int = 20, seed: int = 0, n_starts: int = 8) -> FeatureMatrix:
    return curvefit_features(x, pattern, window_length, seed, n_starts)[0]


def fits_to_json(info: dict) -> str:
    return json.dumps({
        "split_cycle": info["split_cycle"],
        "fits": {name: [f.to_dict() for f in fs] for name, fs in info["fits"].items()},
    }, indent=2)
