"""Gradient-based MCMC: Hamiltonian Monte Carlo with dual-averaging step
size adaptation and a diagonal mass matrix, plus convergence diagnostics
(split R-hat, effective sample size).

Chains are run sequentially with per-chain generators spawned from one
SeedSequence, so results are bit-reproducible for a given seed and config
regardless of platform thread count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Dataset
from .errors import InitializationError, NumericalError
from .models import PosteriorDensity, constrain_array, layout_for_dataset

_LOG2 = math.log(2.0)
_DIVERGENCE_ENERGY = 1000.0   # energy error above this marks a divergent transition
_INT_TIME = 8.0               # target integration time; leapfrog count = int_time/eps
_INIT_TRIES = 100


@dataclass(frozen=True)
class SamplerConfig:
    """Settings for one sampling run."""

    n_chains: int = 4
    n_warmup: int = 1000
    n_samples: int = 1000
    seed: int = 1234
    target_accept: float = 0.8
    max_leapfrog: int = 1024

    def __post_init__(self):
        for name in ("n_chains", "n_warmup", "n_samples", "max_leapfrog"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1, got {getattr(self, name)}")
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError(f"target_accept must lie in (0, 1), got {self.target_accept}")


@dataclass(frozen=True, eq=False)
class PosteriorDraws:
    """Retained posterior draws on the constrained scale.

    draws has shape (n_chains, n_samples, dim) with coordinates named by
    names (see models.ParamLayout).  accept_rate and divergences are
    per-chain post-warmup statistics.
    """

    model: str
    names: tuple[str, ...]
    draws: np.ndarray
    accept_rate: np.ndarray
    divergences: np.ndarray
    seed: int
    config: SamplerConfig

    @property
    def n_chains(self) -> int:
        return self.draws.shape[0]

    @property
    def n_samples(self) -> int:
        return self.draws.shape[1]

    def flat(self) -> np.ndarray:
        """Draws flattened to (n_chains * n_samples, dim), chain-major."""
        c, s, d = self.draws.shape
        return self.draws.reshape(c * s, d)

    def column(self, name: str) -> np.ndarray:
        """Flattened draws of one named coordinate."""
        return self.flat()[:, self.names.index(name)]


@dataclass(frozen=True, eq=False)
class Diagnostics:
    """Per-coordinate convergence summaries and divergence counts."""

    rhat: dict[str, float]
    ess: dict[str, float]
    divergences: tuple[int, ...]
    warnings: tuple[str, ...]


# ---------------------------------------------------------------------------
# core dynamics

def _kinetic(p: np.ndarray, inv_mass: np.ndarray) -> float:
    # inf is fine here: a blown-up momentum makes the energy error inf and
    # the trajectory is rejected as divergent
    with np.errstate(over="ignore"):
        return 0.5 * float(np.dot(p * p, inv_mass))


def _leapfrog(value_grad, q, p, grad, eps, n_steps, inv_mass):
    """Integrate Hamilton's equations for n_steps of size eps.

    Returns (q, p, logp, grad) at the endpoint.  Raises NumericalError if
    the target does (off-support or overflowing positions)."""
    p = p + 0.5 * eps * grad
    logp = None
    for step in range(n_steps):
        q = q + eps * inv_mass * p
        logp, grad = value_grad(q)
        if step < n_steps - 1:
            p = p + eps * grad
    p = p + 0.5 * eps * grad
    return q, p, logp, grad


def _find_reasonable_step(value_grad, q, logp, grad, inv_mass, rng):
    """Double/halve from eps=1 until the one-step acceptance crosses 1/2."""
    eps = 1.0
    p = rng.standard_normal(q.size) / np.sqrt(inv_mass)
    h0 = -logp + _kinetic(p, inv_mass)

    def energy_error(step):
        try:
            q1, p1, logp1, _ = _leapfrog(value_grad, q, p, grad, step, 1, inv_mass)
        except NumericalError:
            return math.inf
        h1 = -logp1 + _kinetic(p1, inv_mass)
        de = h1 - h0
        return de if math.isfinite(de) else math.inf

    de = energy_error(eps)
    direction = 1.0 if de < _LOG2 else -1.0
    for _ in range(100):
        if direction > 0 and de >= _LOG2:
            break
        if direction < 0 and de <= _LOG2:
            break
        eps *= 2.0 ** direction
        if not 1e-12 <= eps <= 1e7:
            break
        de = energy_error(eps)
    return float(min(max(eps, 1e-12), 1e7))


class _DualAveraging:
    """Nesterov dual averaging of log step size toward a target acceptance."""

    gamma = 0.05
    t0 = 10.0
    kappa = 0.75

    def __init__(self, eps0: float, target: float):
        self.mu = math.log(10.0 * eps0)
        self.log_eps = math.log(eps0)
        self.log_eps_bar = math.log(eps0)
        self.h_bar = 0.0
        self.t = 0
        self.target = target

    def update(self, accept_prob: float) -> None:
        self.t += 1
        frac = 1.0 / (self.t + self.t0)
        self.h_bar = (1.0 - frac) * self.h_bar + frac * (self.target - accept_prob)
        self.log_eps = self.mu - math.sqrt(self.t) / self.gamma * self.h_bar
        eta = self.t ** (-self.kappa)
        self.log_eps_bar = eta * self.log_eps + (1.0 - eta) * self.log_eps_bar

    @property
    def eps(self) -> float:
        return math.exp(self.log_eps)

    @property
    def eps_bar(self) -> float:
        return math.exp(self.log_eps_bar)


def _adaptation_windows(n_warmup: int) -> tuple[int, list[int], int]:
    """Split warmup into (initial step-size phase, mass window ends, final polish).

    Mass-estimation windows start at 25 iterations and double, with the tail
    absorbed into the last window; window ends are absolute warmup iteration
    counts.  Short warmups (< 20 middle iterations) adapt step size only.
    """
    init = int(round(0.15 * n_warmup))
    term = int(round(0.10 * n_warmup))
    middle = n_warmup - init - term
    ends: list[int] = []
    if middle >= 20:
        width = max(10, min(25, middle // 3))
        pos = 0
        while pos < middle:
            nxt = pos + width
            if middle - nxt < 2 * width:
                nxt = middle
            ends.append(init + nxt)
            pos = nxt
            width *= 2
    return init, ends, term


def _regularized_variance(samples: np.ndarray) -> np.ndarray:
    # shrink the raw diagonal variance toward 1e-3, as a guard for short windows
    n = samples.shape[0]
    if n < 2:
        return np.ones(samples.shape[1])
    var = samples.var(axis=0, ddof=1)
    reg = (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
    return np.maximum(reg, 1e-12)


def _run_chain(value_grad, q0, rng, *, n_warmup, n_samples, target_accept=0.8,
               max_leapfrog=1024, int_time=_INT_TIME, step_size=None, adapt=True):
    """One HMC chain.  Returns (draws, mean accept prob, divergence count).

    draws are unconstrained, shape (n_samples, dim).  step_size/adapt exist
    for verification runs at fixed dynamics; normal use adapts both the step
    size (dual averaging) and the diagonal mass matrix (doubling windows).
    The number of leapfrog steps per transition is drawn uniformly from
    1..round(int_time/eps), capped at max_leapfrog.
    """
    q = np.array(q0, dtype=float)
    logp, grad = value_grad(q)
    dim = q.size
    inv_mass = np.ones(dim)
    eps = _find_reasonable_step(value_grad, q, logp, grad, inv_mass, rng) \
        if step_size is None else float(step_size)
    da = _DualAveraging(eps, target_accept) if (adapt and n_warmup > 0) else None
    init_end, window_ends, _ = _adaptation_windows(n_warmup) if da else (0, [], 0)
    window_buf: list[np.ndarray] = []
    next_window = 0

    draws = np.empty((n_samples, dim))
    accept_sum = 0.0
    divergences = 0
    for it in range(n_warmup + n_samples):
        warming = it < n_warmup
        p = rng.standard_normal(dim) / np.sqrt(inv_mass)
        h0 = -logp + _kinetic(p, inv_mass)
        cap = max(1, min(max_leapfrog, int(round(int_time / eps))))
        n_steps = int(rng.integers(1, cap + 1))
        accept_prob = 0.0
        divergent = False
        try:
            qn, pn, logpn, gradn = _leapfrog(value_grad, q, p, grad, eps, n_steps, inv_mass)
            d_energy = (-logpn + _kinetic(pn, inv_mass)) - h0
            if not math.isfinite(d_energy) or d_energy > _DIVERGENCE_ENERGY:
                divergent = True
            else:
                accept_prob = 1.0 if d_energy <= 0.0 else math.exp(-d_energy)
                if rng.random() < accept_prob:
                    q, logp, grad = qn, logpn, gradn
        except NumericalError:
            divergent = True

        if warming:
            if da is not None:
                da.update(accept_prob)
                eps = da.eps
                if next_window < len(window_ends):
                    if it >= init_end:
                        window_buf.append(q.copy())
                    if it + 1 == window_ends[next_window]:
                        inv_mass = _regularized_variance(np.asarray(window_buf))
                        window_buf = []
                        next_window += 1
                        da = _DualAveraging(eps, target_accept)
                if it + 1 == n_warmup:
                    eps = da.eps_bar
        else:
            draws[it - n_warmup] = q
            accept_sum += accept_prob
            divergences += divergent
    return draws, accept_sum / max(n_samples, 1), divergences


# ---------------------------------------------------------------------------
# public sampling entry points

def init_point(model: str, dataset: Dataset, seed: int) -> np.ndarray:
    """Random unconstrained starting point.

    Coordinates are uniform on [-2, 2]; the intercept coordinate is pinned
    to the mean log reading time to start chains near the data's scale.
    Mixture fits additionally start inside the intended labeling basin
    (clearly positive shift, minority weights, slow component wider), since
    the shift-positivity constraint alone leaves a mirror mode where the
    slow component absorbs the bulk of the data.
    """
    layout = layout_for_dataset(model, dataset)
    rng = np.random.default_rng(seed)
    return _jittered_point(rng, layout.dim, dataset.rt_log_mean(), model)


def _jittered_point(rng, dim, intercept, model=None):
    theta = rng.uniform(-2.0, 2.0, dim)
    theta[0] = intercept
    if model == "mixture":
        theta[1] = rng.uniform(-1.2, -0.2)    # shift in [0.30, 0.82]
        theta[2] = rng.uniform(-2.5, -1.0)    # weights in [0.076, 0.27]
        theta[3] = rng.uniform(-2.5, -1.0)
        theta[4] = rng.uniform(-1.7, -0.7)    # fast scale in [0.18, 0.50]
        theta[5] = rng.uniform(-0.7, 0.3)     # slow scale in [0.50, 1.35]
    return theta


def _initial_state(value_grad, rng, dim, intercept, model=None):
    """A starting point where both density and gradient are finite."""
    for _ in range(_INIT_TRIES):
        theta = _jittered_point(rng, dim, intercept, model)
        try:
            value_grad(theta)
        except NumericalError:
            continue
        return theta
    raise InitializationError(
        f"no finite starting point after {_INIT_TRIES} jittered tries")


def sample(model: str, dataset: Dataset, config: SamplerConfig) -> PosteriorDraws:
    """Fit a model by HMC and return constrained posterior draws.

    Deterministic in (model, dataset, config): chains use generators spawned
    from SeedSequence(config.seed) and run sequentially.
    """
    if len(dataset) == 0:
        raise ValueError("cannot sample from an empty dataset")
    post = PosteriorDensity(model, dataset)
    intercept = dataset.rt_log_mean()
    children = np.random.SeedSequence(config.seed).spawn(config.n_chains)
    all_draws = np.empty((config.n_chains, config.n_samples, post.dim))
    accept = np.empty(config.n_chains)
    div = np.empty(config.n_chains, dtype=np.int64)
    for c, ss in enumerate(children):
        rng = np.random.default_rng(ss)
        q0 = _initial_state(post.logp_grad, rng, post.dim, intercept, model)
        u_draws, acc, dv = _run_chain(
            post.logp_grad, q0, rng,
            n_warmup=config.n_warmup, n_samples=config.n_samples,
            target_accept=config.target_accept, max_leapfrog=config.max_leapfrog)
        all_draws[c] = constrain_array(post.layout, u_draws)
        accept[c] = acc
        div[c] = dv
    if not np.isfinite(all_draws).all():
        raise NumericalError("non-finite value among retained draws")
    return PosteriorDraws(model=model, names=post.layout.names, draws=all_draws,
                          accept_rate=accept, divergences=div,
                          seed=config.seed, config=config)


def sample_density(value_grad, dim: int, config: SamplerConfig,
                   init: np.ndarray | None = None):
    """Run the same HMC machinery on an arbitrary differentiable log density.

    value_grad(theta) must return (logp, grad) and may raise NumericalError
    off-support.  Returns (draws, accept_rate, divergences) with draws of
    shape (n_chains, n_samples, dim) on the target's own scale.  Intended
    for verifying the sampler against closed-form targets; model fitting
    goes through sample().
    """
    children = np.random.SeedSequence(config.seed).spawn(config.n_chains)
    draws = np.empty((config.n_chains, config.n_samples, dim))
    accept = np.empty(config.n_chains)
    div = np.empty(config.n_chains, dtype=np.int64)
    for c, ss in enumerate(children):
        rng = np.random.default_rng(ss)
        if init is not None:
            q0 = np.array(init, dtype=float)
        else:
            q0 = _initial_state(value_grad, rng, dim, intercept=0.0)
        draws[c], accept[c], div[c] = _run_chain(
            value_grad, q0, rng,
            n_warmup=config.n_warmup, n_samples=config.n_samples,
            target_accept=config.target_accept, max_leapfrog=config.max_leapfrog)
    return draws, accept, div


# ---------------------------------------------------------------------------
# diagnostics

def rhat(chains) -> float:
    """Split R-hat of one coordinate from an (n_chains, n_draws) array.

    Each chain is split in half (middle draw dropped when odd) before the
    usual between/within variance ratio.  Returns +inf when the within
    variance is exactly zero (identical constant chains).
    """
    x = np.asarray(chains, dtype=float)
    if x.ndim != 2:
        raise ValueError("expected a 2-d array of shape (n_chains, n_draws)")
    m, n = x.shape
    if m < 2 or n < 4:
        raise ValueError("need at least 2 chains with at least 4 draws each")
    half = n // 2
    split = np.vstack([x[:, :half], x[:, n - half:]])
    within = float(split.var(axis=1, ddof=1).mean())
    if within == 0.0:
        return math.inf
    between_over_n = float(split.mean(axis=1).var(ddof=1))
    var_hat = (half - 1) / half * within + between_over_n
    return float(math.sqrt(var_hat / within))


def _autocov(x: np.ndarray) -> np.ndarray:
    """Biased autocovariance (normalized by n) of one chain, via FFT."""
    n = x.size
    xc = x - x.mean()
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, nfft)
    return np.fft.irfft(f * np.conj(f), nfft)[:n].real / n


def ess(chains) -> float:
    """Effective sample size of one coordinate from (n_chains, n_draws) draws.

    Uses autocorrelations combined across chains (with the between-chain
    variance correction) and Geyer's initial positive sequence: the sum is
    truncated at the first even/odd lag pair with a negative sum.  Constant
    chains return 0.0.
    """
    x = np.asarray(chains, dtype=float)
    if x.ndim != 2:
        raise ValueError("expected a 2-d array of shape (n_chains, n_draws)")
    m, n = x.shape
    if n < 4:
        raise ValueError("need at least 4 draws per chain")
    acov = np.vstack([_autocov(x[c]) for c in range(m)])
    mean_var = float(acov[:, 0].mean()) * n / (n - 1.0)
    var_plus = mean_var * (n - 1.0) / n
    if m > 1:
        var_plus += float(x.mean(axis=1).var(ddof=1))
    if var_plus == 0.0 or not math.isfinite(var_plus):
        return 0.0

    rho = 1.0 - (mean_var - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    tau = -1.0
    k = 0
    while 2 * k + 1 < n:
        pair = rho[2 * k] + rho[2 * k + 1]
        if pair < 0.0:
            break
        tau += 2.0 * pair
        k += 1
    tau = max(tau, np.finfo(float).eps)
    return float(m * n / tau)


def diagnose(draws: PosteriorDraws) -> Diagnostics:
    """Split R-hat and ESS per coordinate, plus divergence warnings."""
    rhats: dict[str, float] = {}
    esss: dict[str, float] = {}
    warnings: list[str] = []
    single_chain = draws.n_chains < 2
    if single_chain:
        warnings.append("single chain: split R-hat unavailable")
    for d, name in enumerate(draws.names):
        chains = draws.draws[:, :, d]
        rhats[name] = math.nan if single_chain else rhat(chains)
        esss[name] = ess(chains)
    total = draws.n_chains * draws.n_samples
    n_div = int(draws.divergences.sum())
    if total > 0 and n_div / total > 0.10:
        warnings.append(
            f"divergence rate {n_div / total:.1%} exceeds 10%; "
            "estimates may be unreliable")
    return Diagnostics(rhat=rhats, ess=esss,
                       divergences=tuple(int(v) for v in draws.divergences),
                       warnings=tuple(warnings))


# ---------------------------------------------------------------------------
# exports

def save_draws_csv(draws: PosteriorDraws, path) -> None:
    """Write draws as CSV with columns chain, iter, then coordinate names."""
    with open(Path(path), "w", newline="") as fh:
        fh.write(",".join(["chain", "iter", *draws.names]) + "\n")
        for c in range(draws.n_chains):
            for s in range(draws.n_samples):
                row = draws.draws[c, s]
                fh.write(f"{c + 1},{s + 1}," + ",".join(repr(float(v)) for v in row) + "\n")


def diagnostics_to_dict(diag: Diagnostics) -> dict:
    """JSON-ready mapping: coordinate -> {rhat, ess}, plus per-chain divergences."""
    out: dict = {}
    for name in diag.rhat:
        r = diag.rhat[name]
        out[name] = {
            "rhat": None if math.isnan(r) else (r if math.isfinite(r) else "inf"),
            "ess": diag.ess[name],
        }
    out["divergences"] = list(diag.divergences)
    if diag.warnings:
        out["warnings"] = list(diag.warnings)
    return out
