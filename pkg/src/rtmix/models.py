"""Model densities, priors, parameter transforms, and gradients.

Two accounts of reading-time data are implemented as differentiable log
posterior densities over unconstrained parameter vectors:

* the "linear" model: a hierarchical lognormal regression in which the
  sum-coded condition shifts the location of a single lognormal;
* the "mixture" model: a two-component lognormal mixture in which each
  trial comes from a slow, more variable component with a
  condition-specific probability, and from the ordinary component
  otherwise.

Both include varying intercepts for participants and items.  Random
effects are parameterized non-centered: the unconstrained vector carries
standard-normal deviates z, and the constrained view exposes
u = sigma_u * z (likewise w for items).  Scales enter through log
transforms and mixing probabilities through logits, so every point of R^d
maps to a legal parameter value; the corresponding log-Jacobian terms are
part of the log posterior.

Priors: Cauchy(0, 2.5) on location coefficients (and on the positive shift
delta, restricted to its support), half-Cauchy(0, 2.5) on standard
deviations, Beta(1, 1) on mixing probabilities, Normal(0, sigma_u) and
Normal(0, sigma_w) on the random effects.

All evaluations are pure functions of their arguments and safe to call
from multiple threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_expit, logit

from .data import Condition, Dataset, Trial, sum_code
from .errors import NumericalError

CAUCHY_SCALE = 2.5

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
_LOG_2 = math.log(2.0)


# ---------------------------------------------------------------------------
# density helpers

def lognormal_logpdf(y, mu, sigma):
    """Log density of LogNormal(mu, sigma) at y > 0; broadcasts like numpy."""
    logy = np.log(y)
    z = (logy - mu) / sigma
    return -logy - np.log(sigma) - _HALF_LOG_2PI - 0.5 * z * z


def cauchy_logpdf(x, scale=CAUCHY_SCALE):
    """Log density of Cauchy(0, scale) at x."""
    r = np.abs(np.asarray(x, dtype=float)) / scale
    with np.errstate(over="ignore", divide="ignore"):
        r2 = r * r
        # past the overflow point of r*r, log1p(r^2) = 2 log r to full precision
        tail = 2.0 * np.log(r)
        return -math.log(math.pi * scale) - np.where(np.isinf(r2), tail, np.log1p(r2))


def half_cauchy_logpdf(x, scale=CAUCHY_SCALE):
    """Log density of half-Cauchy(0, scale) at x >= 0 (includes the ln 2)."""
    return _LOG_2 + cauchy_logpdf(x, scale)


def normal_logpdf(x, mu, sigma):
    z = (x - mu) / sigma
    return -np.log(sigma) - _HALF_LOG_2PI - 0.5 * z * z


def _dcauchy(x, scale=CAUCHY_SCALE):
    # d/dx log Cauchy(0, scale)
    return -2.0 * x / (scale * scale + x * x)


def _sigma_prior_grad(s, scale=CAUCHY_SCALE):
    # d/da [log half-Cauchy(e^a) + a] at s = e^a
    return 1.0 - 2.0 * s * s / (scale * scale + s * s)


# ---------------------------------------------------------------------------
# parameter containers

@dataclass(frozen=True, eq=False)
class LinearParams:
    """Constrained parameters of the linear model.

    beta0: intercept on the log-ms scale; beta1: condition slope against the
    sum-coded contrast; sigma_e: residual scale; sigma_u/sigma_w: random
    effect scales; u/w: participant and item intercept offsets (centered).
    """

    beta0: float
    beta1: float
    sigma_e: float
    sigma_u: float
    sigma_w: float
    u: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "u", np.asarray(self.u, dtype=float))
        object.__setattr__(self, "w", np.asarray(self.w, dtype=float))
        for name in ("sigma_e", "sigma_u", "sigma_w"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")


@dataclass(frozen=True, eq=False)
class MixtureParams:
    """Constrained parameters of the two-component mixture model.

    beta is the ordinary-component location, delta > 0 the extra shift of
    the slow component (identified by its positivity), p_sr/p_or the
    condition-specific probabilities of the slow component, sigma_e the
    ordinary residual scale and sigma_ep the slow component's scale.

    p_sr and p_or live in the closed interval [0, 1]: the boundary values
    represent degenerate single-component mixtures (useful as limits, and
    never produced by sampling, which works through a logit).
    """

    beta: float
    delta: float
    p_sr: float
    p_or: float
    sigma_e: float
    sigma_ep: float
    sigma_u: float
    sigma_w: float
    u: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "u", np.asarray(self.u, dtype=float))
        object.__setattr__(self, "w", np.asarray(self.w, dtype=float))
        if not self.delta > 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        for name in ("p_sr", "p_or"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {p}")
        for name in ("sigma_e", "sigma_ep", "sigma_u", "sigma_w"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")


LINEAR_POPULATION = ("beta0", "beta1", "sigma_e", "sigma_u", "sigma_w")
MIXTURE_POPULATION = ("beta", "delta", "p_sr", "p_or",
                      "sigma_e", "sigma_ep", "sigma_u", "sigma_w")

MODELS = ("linear", "mixture")


@dataclass(frozen=True)
class ParamLayout:
    """Coordinate bookkeeping for one model at a given dataset size.

    names are the constrained coordinate names in draw-file order;
    transforms[i] says how unconstrained coordinate i maps to names[i]:
    identity, log, logit, or scaling of a standard-normal deviate by
    sigma_u / sigma_w (the non-centered random effects).
    """

    model: str
    n_participants: int
    n_items: int
    names: tuple[str, ...]
    transforms: tuple[str, ...]

    @property
    def dim(self) -> int:
        return len(self.names)

    @property
    def n_population(self) -> int:
        return len(LINEAR_POPULATION if self.model == "linear" else MIXTURE_POPULATION)


def layout_for(model: str, n_participants: int, n_items: int) -> ParamLayout:
    """Build the coordinate layout for a model at the given dataset size."""
    if model not in MODELS:
        raise ValueError(f"unknown model {model!r}, expected one of {MODELS}")
    u_names = tuple(f"u[{i}]" for i in range(1, n_participants + 1))
    w_names = tuple(f"w[{j}]" for j in range(1, n_items + 1))
    u_tf = ("scale_by_sigma_u",) * n_participants
    w_tf = ("scale_by_sigma_w",) * n_items
    if model == "linear":
        names = LINEAR_POPULATION + u_names + w_names
        transforms = ("identity", "identity", "log", "log", "log") + u_tf + w_tf
    else:
        names = MIXTURE_POPULATION + u_names + w_names
        transforms = ("identity", "log", "logit", "logit",
                      "log", "log", "log", "log") + u_tf + w_tf
    return ParamLayout(model=model, n_participants=n_participants, n_items=n_items,
                       names=names, transforms=transforms)


def layout_for_dataset(model: str, dataset: Dataset) -> ParamLayout:
    return layout_for(model, dataset.n_participants, dataset.n_items)


def constrain(layout: ParamLayout, theta) -> LinearParams | MixtureParams:
    """Map an unconstrained vector to a constrained parameter object.

    Every point of R^dim maps to legal parameters: scales through exp,
    probabilities through the logistic, random effects through scaling the
    z deviates by their sigma.  The zero vector maps to all-zero locations,
    unit scales, delta = 1, and p = 0.5.
    """
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (layout.dim,):
        raise ValueError(f"expected vector of length {layout.dim}, got shape {theta.shape}")
    n_p, n_i = layout.n_participants, layout.n_items
    with np.errstate(over="ignore"):
        if layout.model == "linear":
            b0, b1 = theta[:2]
            se, su, sw = np.exp(theta[2:5])
            return LinearParams(beta0=float(b0), beta1=float(b1), sigma_e=float(se),
                                sigma_u=float(su), sigma_w=float(sw),
                                u=su * theta[5:5 + n_p], w=sw * theta[5 + n_p:])
        b, d, qsr, qor = theta[:4]
        se, sep, su, sw = np.exp(theta[4:8])
        return MixtureParams(beta=float(b), delta=float(np.exp(d)),
                             p_sr=float(expit(qsr)), p_or=float(expit(qor)),
                             sigma_e=float(se), sigma_ep=float(sep),
                             sigma_u=float(su), sigma_w=float(sw),
                             u=su * theta[8:8 + n_p], w=sw * theta[8 + n_p:])


def unconstrain(layout: ParamLayout, params) -> np.ndarray:
    """Inverse of constrain.  Probabilities must be interior (0 < p < 1)."""
    n_p, n_i = layout.n_participants, layout.n_items
    if layout.model == "linear":
        if not isinstance(params, LinearParams):
            raise TypeError("layout is for the linear model")
        head = [params.beta0, params.beta1,
                math.log(params.sigma_e), math.log(params.sigma_u), math.log(params.sigma_w)]
    else:
        if not isinstance(params, MixtureParams):
            raise TypeError("layout is for the mixture model")
        for name in ("p_sr", "p_or"):
            p = getattr(params, name)
            if not 0.0 < p < 1.0:
                raise ValueError(f"cannot unconstrain boundary probability {name}={p}")
        head = [params.beta, math.log(params.delta),
                float(logit(params.p_sr)), float(logit(params.p_or)),
                math.log(params.sigma_e), math.log(params.sigma_ep),
                math.log(params.sigma_u), math.log(params.sigma_w)]
    if params.u.shape != (n_p,) or params.w.shape != (n_i,):
        raise ValueError("random effect lengths do not match the layout")
    return np.concatenate([head, params.u / params.sigma_u, params.w / params.sigma_w])


def constrain_array(layout: ParamLayout, thetas: np.ndarray) -> np.ndarray:
    """Vectorized constrain for a (n_draws, dim) array of unconstrained rows."""
    thetas = np.asarray(thetas, dtype=float)
    out = thetas.copy()
    n_pop = layout.n_population
    z0 = n_pop
    z1 = n_pop + layout.n_participants
    if layout.model == "linear":
        out[:, 2:5] = np.exp(thetas[:, 2:5])
        su, sw = out[:, 3], out[:, 4]
    else:
        out[:, 1] = np.exp(thetas[:, 1])
        out[:, 2:4] = expit(thetas[:, 2:4])
        out[:, 4:8] = np.exp(thetas[:, 4:8])
        su, sw = out[:, 6], out[:, 7]
    out[:, z0:z1] = su[:, None] * thetas[:, z0:z1]
    out[:, z1:] = sw[:, None] * thetas[:, z1:]
    return out


# ---------------------------------------------------------------------------
# pointwise log likelihoods

def linear_pointwise_loglik(params: LinearParams, trial: Trial, x: float) -> float:
    """Log likelihood of one trial under the linear model.

    x is the sum-coded condition contrast (see data.sum_code); the location
    on the log-ms scale is beta0 + beta1*x + u_i + w_j.
    """
    mu = (params.beta0 + params.beta1 * x
          + params.u[trial.participant - 1] + params.w[trial.item - 1])
    with np.errstate(over="ignore"):
        value = float(lognormal_logpdf(trial.rt_ms, mu, params.sigma_e))
    if not math.isfinite(value):
        raise NumericalError(
            f"non-finite linear log likelihood for rt={trial.rt_ms}")
    return value


def mixture_pointwise_loglik(params: MixtureParams, trial: Trial) -> float:
    """Log likelihood of one trial under the two-component mixture.

    The slow-component weight is p_sr for subject relatives and p_or for
    object relatives.  Weights of exactly 0 or 1 degenerate to the single
    active component.
    """
    p = params.p_sr if trial.condition is Condition.SUBJECT_RELATIVE else params.p_or
    base = params.beta + params.u[trial.participant - 1] + params.w[trial.item - 1]
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        lp_slow = lognormal_logpdf(trial.rt_ms, base + params.delta, params.sigma_ep)
        lp_ord = lognormal_logpdf(trial.rt_ms, base, params.sigma_e)
        # log 0 = -inf is the correct degenerate weight
        value = float(np.logaddexp(np.log(p) + lp_slow, np.log1p(-p) + lp_ord))
    if not math.isfinite(value):
        raise NumericalError(
            f"non-finite mixture log likelihood for rt={trial.rt_ms}")
    return value


# ---------------------------------------------------------------------------
# log priors (constrained scale, centered random effects)

def log_prior_linear(params: LinearParams) -> float:
    """Joint log prior of the linear model on the constrained scale."""
    lp = cauchy_logpdf(params.beta0) + cauchy_logpdf(params.beta1)
    lp += (half_cauchy_logpdf(params.sigma_e)
           + half_cauchy_logpdf(params.sigma_u)
           + half_cauchy_logpdf(params.sigma_w))
    lp += float(np.sum(normal_logpdf(params.u, 0.0, params.sigma_u)))
    lp += float(np.sum(normal_logpdf(params.w, 0.0, params.sigma_w)))
    return float(lp)


def log_prior_mixture(params: MixtureParams) -> float:
    """Joint log prior of the mixture model on the constrained scale.

    delta carries the Cauchy(0, 2.5) log density restricted to delta > 0;
    the Beta(1, 1) prior on each probability contributes 0.
    """
    lp = cauchy_logpdf(params.beta) + cauchy_logpdf(params.delta)
    lp += (half_cauchy_logpdf(params.sigma_e)
           + half_cauchy_logpdf(params.sigma_ep)
           + half_cauchy_logpdf(params.sigma_u)
           + half_cauchy_logpdf(params.sigma_w))
    lp += float(np.sum(normal_logpdf(params.u, 0.0, params.sigma_u)))
    lp += float(np.sum(normal_logpdf(params.w, 0.0, params.sigma_w)))
    return float(lp)


# ---------------------------------------------------------------------------
# joint density over unconstrained coordinates

class PosteriorDensity:
    """Vectorized log posterior and gradient for one (model, dataset) pair.

    Index arrays are precomputed once; logp/logp_grad are then pure
    functions of the unconstrained vector.  Non-finite inputs or outputs
    raise NumericalError (carrying the offending coordinate index when one
    is identifiable) rather than being clamped.
    """

    def __init__(self, model: str, dataset: Dataset):
        self.layout = layout_for_dataset(model, dataset)
        self.dataset = dataset
        n = len(dataset)
        self._logy = np.array([math.log(t.rt_ms) for t in dataset.trials])
        self._x = np.array([sum_code(t.condition) for t in dataset.trials])
        self._pidx = np.array([t.participant - 1 for t in dataset.trials], dtype=np.intp)
        self._iidx = np.array([t.item - 1 for t in dataset.trials], dtype=np.intp)
        self._is_sr = np.array(
            [t.condition is Condition.SUBJECT_RELATIVE for t in dataset.trials])
        self._sum_logy = float(self._logy.sum())
        self._n = n

    @property
    def dim(self) -> int:
        return self.layout.dim

    def logp(self, theta: np.ndarray) -> float:
        return self.logp_grad(theta)[0]

    def logp_grad(self, theta: np.ndarray) -> tuple[float, np.ndarray]:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim,):
            raise ValueError(f"expected vector of length {self.dim}, got shape {theta.shape}")
        finite = np.isfinite(theta)
        if not finite.all():
            bad = int(np.flatnonzero(~finite)[0])
            raise NumericalError("non-finite unconstrained coordinate", coordinate=bad)
        try:
            # numpy overflow propagates as inf/nan and is caught by the
            # finiteness checks below; Python-float overflow raises
            with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                if self.layout.model == "linear":
                    value, grad = self._linear_logp_grad(theta)
                else:
                    value, grad = self._mixture_logp_grad(theta)
        except OverflowError:
            raise NumericalError("overflow while evaluating the log posterior") from None
        except ZeroDivisionError:
            # exp(a) flushed to zero for some log-scale coordinate
            raise NumericalError("scale parameter underflowed to zero") from None
        if not np.isfinite(grad).all():
            bad = int(np.flatnonzero(~np.isfinite(grad))[0])
            raise NumericalError("non-finite gradient", coordinate=bad)
        if not math.isfinite(value):
            raise NumericalError("non-finite log posterior")
        return value, grad

    def _linear_logp_grad(self, th):
        n_p, n_i, n = self.layout.n_participants, self.layout.n_items, self._n
        b0, b1, ae, au, aw = th[:5]
        se, su, sw = math.exp(ae), math.exp(au), math.exp(aw)
        zu = th[5:5 + n_p]
        zw = th[5 + n_p:]
        u = su * zu
        w = sw * zw

        mu = b0 + b1 * self._x + u[self._pidx] + w[self._iidx]
        r = self._logy - mu
        inv_var = 1.0 / (se * se)
        rr = float(np.dot(r, r))
        value = -self._sum_logy - n * (ae + _HALF_LOG_2PI) - 0.5 * inv_var * rr

        g_mu = inv_var * r
        bu = np.bincount(self._pidx, weights=g_mu, minlength=n_p)
        bw = np.bincount(self._iidx, weights=g_mu, minlength=n_i)

        grad = np.empty(self.dim)
        grad[0] = g_mu.sum() + _dcauchy(b0)
        grad[1] = float(np.dot(self._x, g_mu)) + _dcauchy(b1)
        grad[2] = (-n + inv_var * rr) + _sigma_prior_grad(se)
        grad[3] = float(np.dot(u, bu)) + _sigma_prior_grad(su)
        grad[4] = float(np.dot(w, bw)) + _sigma_prior_grad(sw)
        grad[5:5 + n_p] = su * bu - zu
        grad[5 + n_p:] = sw * bw - zw

        value += cauchy_logpdf(b0) + cauchy_logpdf(b1)
        value += (half_cauchy_logpdf(se) + ae
                  + half_cauchy_logpdf(su) + au
                  + half_cauchy_logpdf(sw) + aw)
        value += -0.5 * float(np.dot(zu, zu)) - n_p * _HALF_LOG_2PI
        value += -0.5 * float(np.dot(zw, zw)) - n_i * _HALF_LOG_2PI
        return float(value), grad

    def _mixture_logp_grad(self, th):
        n_p, n_i, n = self.layout.n_participants, self.layout.n_items, self._n
        b, d, qsr, qor, ae, aep, au, aw = th[:8]
        delta = math.exp(d)
        se, sep = math.exp(ae), math.exp(aep)
        su, sw = math.exp(au), math.exp(aw)
        zu = th[8:8 + n_p]
        zw = th[8 + n_p:]
        u = su * zu
        w = sw * zw

        base = b + u[self._pidx] + w[self._iidx]
        r_ord = self._logy - base            # ordinary component residual
        r_slow = r_ord - delta               # slow component: location base + delta
        inv_o = 1.0 / (se * se)
        inv_s = 1.0 / (sep * sep)
        lp_ord = -self._logy - ae - _HALF_LOG_2PI - 0.5 * inv_o * r_ord * r_ord
        lp_slow = -self._logy - aep - _HALF_LOG_2PI - 0.5 * inv_s * r_slow * r_slow

        # stable log weights: log p = log_expit(q), log(1-p) = log_expit(-q)
        lw_slow = np.where(self._is_sr, log_expit(qsr), log_expit(qor))
        lw_ord = np.where(self._is_sr, log_expit(-qsr), log_expit(-qor))
        a_t = lw_slow + lp_slow
        b_t = lw_ord + lp_ord
        value = float(np.logaddexp(a_t, b_t).sum())

        # responsibilities, stable at extreme weight ratios
        g_slow = expit(a_t - b_t)
        g_ord = expit(b_t - a_t)

        gm_slow = g_slow * (inv_s * r_slow)
        gm_ord = g_ord * (inv_o * r_ord)
        g_mu = gm_slow + gm_ord
        bu = np.bincount(self._pidx, weights=g_mu, minlength=n_p)
        bw = np.bincount(self._iidx, weights=g_mu, minlength=n_i)

        p_sr, p_or = expit(qsr), expit(qor)
        p_t = np.where(self._is_sr, p_sr, p_or)
        g_q = g_slow * (1.0 - p_t) - g_ord * p_t

        grad = np.empty(self.dim)
        grad[0] = g_mu.sum() + _dcauchy(b)
        grad[1] = delta * gm_slow.sum() + (_dcauchy(delta) * delta + 1.0)
        grad[2] = float(g_q[self._is_sr].sum()) + (1.0 - 2.0 * p_sr)
        grad[3] = float(g_q[~self._is_sr].sum()) + (1.0 - 2.0 * p_or)
        grad[4] = float((g_ord * (inv_o * r_ord * r_ord - 1.0)).sum()) + _sigma_prior_grad(se)
        grad[5] = float((g_slow * (inv_s * r_slow * r_slow - 1.0)).sum()) + _sigma_prior_grad(sep)
        grad[6] = float(np.dot(u, bu)) + _sigma_prior_grad(su)
        grad[7] = float(np.dot(w, bw)) + _sigma_prior_grad(sw)
        grad[8:8 + n_p] = su * bu - zu
        grad[8 + n_p:] = sw * bw - zw

        value += cauchy_logpdf(b) + (cauchy_logpdf(delta) + d)
        value += float(log_expit(qsr) + log_expit(-qsr))    # Beta(1,1) + logit Jacobian
        value += float(log_expit(qor) + log_expit(-qor))
        value += (half_cauchy_logpdf(se) + ae
                  + half_cauchy_logpdf(sep) + aep
                  + half_cauchy_logpdf(su) + au
                  + half_cauchy_logpdf(sw) + aw)
        value += -0.5 * float(np.dot(zu, zu)) - n_p * _HALF_LOG_2PI
        value += -0.5 * float(np.dot(zw, zw)) - n_i * _HALF_LOG_2PI
        return float(value), grad


def log_posterior(model: str, theta, dataset: Dataset) -> float:
    """Joint unnormalized log posterior over unconstrained coordinates.

    Equals the summed pointwise log likelihoods plus the log prior of the
    constrained parameters plus the change-of-variables terms (log-Jacobians
    of the exp/logit transforms and the non-centered scaling of z).
    """
    return PosteriorDensity(model, dataset).logp(np.asarray(theta, dtype=float))


def grad_log_posterior(model: str, theta, dataset: Dataset) -> np.ndarray:
    """Analytic gradient of log_posterior with respect to theta."""
    return PosteriorDensity(model, dataset).logp_grad(np.asarray(theta, dtype=float))[1]
