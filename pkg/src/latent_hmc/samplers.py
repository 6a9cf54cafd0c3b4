"""NUTS Hamiltonian Monte Carlo and the Langevin-dynamics baseline.

The target is anything exposing ``dim``, ``value_and_grad(phi)`` and
``record(phi)`` (see ``models``).  NUTS uses iterative tree doubling with
multinomial sampling across the trajectory, dual-averaging step-size
adaptation toward a 0.8 acceptance statistic, and windowed diagonal mass
estimation during warmup.  Langevin dynamics is a single leapfrog step from
fresh momentum with a Metropolis correction and a fixed, user-supplied step
size (no adaptation), matching its role as a deliberately weaker baseline.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, NumericError
from .sampleset import SampleSet

DIVERGENCE_THRESHOLD = 1000.0
MAX_TREE_DEPTH = 10
TARGET_ACCEPT = 0.8


def philox_rng(seed, *stream):
    """Counter-based per-stream generator with a stable stream digest."""
    digest = hashlib.blake2s(repr(stream).encode(), digest_size=8).digest()
    key = np.array([np.uint64(seed & 0xFFFFFFFFFFFFFFFF),
                    np.uint64(int.from_bytes(digest, "little"))],
                   dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass
class SamplerConfig:
    draws: int
    warmup: int = 1000
    chains: int = 1
    seed: int = 0
    sampler: str = "nuts"        # "nuts" | "ld"
    target_accept: float = TARGET_ACCEPT
    max_depth: int = MAX_TREE_DEPTH
    divergence_threshold: float = DIVERGENCE_THRESHOLD
    ld_step: float = 0.01        # fixed Langevin step size, unconstrained space
    init: np.ndarray | None = None
    init_jitter: float = 2.0

    def validate(self):
        if self.draws < 1:
            raise ContractViolation("draws must be >= 1")
        if self.chains < 1:
            raise ContractViolation("chains must be >= 1")
        if self.warmup < 0:
            raise ContractViolation("warmup must be >= 0")
        if self.sampler not in ("nuts", "ld"):
            raise ContractViolation(f"unknown sampler {self.sampler!r}")


@dataclass
class UnconstrainedState:
    """Position with its cached log density and gradient."""

    phi: np.ndarray
    log_density: float
    gradient: np.ndarray | None


@dataclass
class DrawStats:
    depth: int = 0
    n_leapfrog: int = 0
    divergent: bool = False
    depth_capped: bool = False
    accept_stat: float = 1.0
    energy: float = 0.0
    energy_error: float = 0.0


def _evaluate(target, phi):
    # a NaN inside the backward pass aborts the step as a divergence
    try:
        lp, grad = target.value_and_grad(phi)
    except NumericError:
        return UnconstrainedState(phi, -np.inf, None)
    return UnconstrainedState(phi, lp, grad)


def hamiltonian(state, r, mass):
    """Total energy -log q(phi) + kinetic term under a diagonal mass."""
    if not np.isfinite(state.log_density):
        return np.inf
    return -state.log_density + 0.5 * float(np.sum(r * r / mass))


def leapfrog(target, state, r, eps, mass):
    """One half-kick / drift / half-kick step.

    Callers pass a positive step size; tree building reuses the same code
    with a negated step to integrate backward in time.  Returns
    (state', r', diverged); a non-finite gradient or density at the new
    position flags divergence instead of raising.
    """
    if eps == 0 or not np.isfinite(eps):
        raise ContractViolation("leapfrog: step size must be nonzero finite")
    if state.gradient is None:
        return state, r, True
    r_half = r + 0.5 * eps * state.gradient
    phi_new = state.phi + eps * r_half / mass
    new = _evaluate(target, phi_new)
    if new.gradient is None or not np.all(np.isfinite(new.gradient)):
        return new, r_half, True
    r_new = r_half + 0.5 * eps * new.gradient
    return new, r_new, False


@dataclass
class _Tree:
    """One side of the trajectory plus the running multinomial proposal."""

    left_state: UnconstrainedState
    left_r: np.ndarray
    right_state: UnconstrainedState
    right_r: np.ndarray
    proposal: UnconstrainedState
    proposal_energy: float
    log_weight: float
    sum_accept: float
    n_leapfrog: int
    stop: bool
    divergent: bool


def _uturn(left_state, left_r, right_state, right_r, mass):
    dq = right_state.phi - left_state.phi
    return (np.dot(dq, left_r / mass) < 0) or (np.dot(dq, right_r / mass) < 0)


def _build_tree(target, state, r, direction, depth, eps, mass, h0, rng,
                threshold):
    if depth == 0:
        new, r_new, diverged = leapfrog(target, state, r, direction * eps, mass)
        h_new = hamiltonian(new, r_new, mass)
        delta = h_new - h0 if np.isfinite(h_new) else np.inf
        divergent = diverged or not np.isfinite(delta) or abs(delta) > threshold
        accept = float(np.exp(min(0.0, -delta))) if np.isfinite(delta) else 0.0
        return _Tree(new, r_new, new, r_new, new, h_new,
                     -delta if not divergent else -np.inf,
                     accept, 1, divergent, divergent)
    first = _build_tree(target, state, r, direction, depth - 1, eps, mass, h0,
                        rng, threshold)
    if first.stop:
        return first
    if direction == 1:
        second = _build_tree(target, first.right_state, first.right_r,
                             direction, depth - 1, eps, mass, h0, rng,
                             threshold)
        first.right_state, first.right_r = second.right_state, second.right_r
    else:
        second = _build_tree(target, first.left_state, first.left_r,
                             direction, depth - 1, eps, mass, h0, rng,
                             threshold)
        first.left_state, first.left_r = second.left_state, second.left_r
    total = np.logaddexp(first.log_weight, second.log_weight)
    # multinomial sampling within the combined subtree
    if np.isfinite(second.log_weight) and \
            np.log(rng.random()) < second.log_weight - total:
        first.proposal = second.proposal
        first.proposal_energy = second.proposal_energy
    first.log_weight = total
    first.sum_accept += second.sum_accept
    first.n_leapfrog += second.n_leapfrog
    first.divergent = first.divergent or second.divergent
    first.stop = (second.stop or _uturn(first.left_state, first.left_r,
                                        first.right_state, first.right_r,
                                        mass))
    return first


def nuts_draw(target, state, eps, mass, rng, max_depth=MAX_TREE_DEPTH,
              threshold=DIVERGENCE_THRESHOLD):
    """One No-U-Turn transition; returns the next state and its statistics.

    The trajectory doubles in a random direction until a U-turn, a
    divergence, or the depth cap; the next state is drawn multinomially by
    trajectory weight (biased toward the fresh subtree at the outer level).
    """
    if not np.isfinite(state.log_density):
        raise NumericError("nuts: current state has non-finite density")
    r0 = rng.normal(size=state.phi.shape) * np.sqrt(mass)
    h0 = hamiltonian(state, r0, mass)
    stats = DrawStats(energy=h0)
    left_state = right_state = proposal = state
    left_r = right_r = r0
    proposal_energy = h0
    log_weight = 0.0
    sum_accept = 0.0
    n_leapfrog = 0
    depth = 0
    while depth < max_depth:
        direction = 1 if rng.random() < 0.5 else -1
        if direction == 1:
            sub = _build_tree(target, right_state, right_r, 1, depth, eps,
                              mass, h0, rng, threshold)
        else:
            sub = _build_tree(target, left_state, left_r, -1, depth, eps,
                              mass, h0, rng, threshold)
        sum_accept += sub.sum_accept
        n_leapfrog += sub.n_leapfrog
        stats.divergent = stats.divergent or sub.divergent
        if sub.stop:
            break
        if direction == 1:
            right_state, right_r = sub.right_state, sub.right_r
        else:
            left_state, left_r = sub.left_state, sub.left_r
        # biased progressive sampling: favor the fresh half of the trajectory
        if np.isfinite(sub.log_weight) and \
                np.log(rng.random()) < sub.log_weight - log_weight:
            proposal = sub.proposal
            proposal_energy = sub.proposal_energy
        log_weight = np.logaddexp(log_weight, sub.log_weight)
        depth += 1
        if _uturn(left_state, left_r, right_state, right_r, mass):
            break
    stats.depth = depth
    stats.depth_capped = depth >= max_depth
    stats.n_leapfrog = n_leapfrog
    stats.accept_stat = sum_accept / max(n_leapfrog, 1)
    stats.energy = proposal_energy
    stats.energy_error = proposal_energy - h0
    return proposal, stats


def langevin_draw(target, state, eps, rng, mass=None):
    """Langevin baseline: one leapfrog step, Metropolis-corrected."""
    if mass is None:
        mass = np.ones_like(state.phi)
    r0 = rng.normal(size=state.phi.shape) * np.sqrt(mass)
    h0 = hamiltonian(state, r0, mass)
    new, r_new, diverged = leapfrog(target, state, r0, eps, mass)
    stats = DrawStats(depth=0, n_leapfrog=1, energy=h0)
    if diverged:
        stats.divergent = True
        stats.accept_stat = 0.0
        return state, stats
    h_new = hamiltonian(new, r_new, mass)
    delta = h_new - h0
    stats.energy_error = delta
    stats.accept_stat = float(np.exp(min(0.0, -delta)))
    if np.log(rng.random()) < -delta:
        stats.energy = h_new
        return new, stats
    return state, stats


# ---------------------------------------------------------------------------
# warmup adaptation


@dataclass
class DualAveraging:
    """Nesterov dual averaging of log step size toward a target acceptance."""

    mu: float
    gamma: float = 0.05
    t0: float = 10.0
    kappa: float = 0.75
    log_eps: float = 0.0
    log_eps_bar: float = 0.0
    h_bar: float = 0.0
    t: int = 0

    @classmethod
    def start(cls, eps):
        da = cls(mu=np.log(10.0 * eps))
        da.log_eps = np.log(eps)
        da.log_eps_bar = np.log(eps)
        return da

    def update(self, accept_stat, target):
        self.t += 1
        eta = 1.0 / (self.t + self.t0)
        self.h_bar = (1 - eta) * self.h_bar + eta * (target - accept_stat)
        self.log_eps = self.mu - np.sqrt(self.t) / self.gamma * self.h_bar
        w = self.t ** (-self.kappa)
        self.log_eps_bar = w * self.log_eps + (1 - w) * self.log_eps_bar
        return float(np.exp(self.log_eps))

    @property
    def adapted(self):
        return float(np.exp(self.log_eps_bar))


class _Welford:
    def __init__(self, dim):
        self.n = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)

    def push(self, x):
        self.n += 1
        delta = x - self.mean
        self.mean += delta / self.n
        self.m2 += delta * (x - self.mean)

    def variance(self):
        return self.m2 / max(self.n - 1, 1)


def _mass_windows(warmup, init_buffer=75, term_buffer=50, base_window=25):
    """Stan-style expanding estimation windows inside the warmup phase."""
    if warmup < init_buffer + term_buffer + base_window:
        return []
    ends = []
    start = init_buffer
    size = base_window
    while True:
        end = start + size
        if end + term_buffer >= warmup or end + size * 2 + term_buffer > warmup:
            ends.append(warmup - term_buffer)
            break
        ends.append(end)
        start = end
        size *= 2
    return ends


def find_reasonable_epsilon(target, state, mass, rng):
    """Doubling heuristic for the initial step size."""
    eps = 1.0
    r = rng.normal(size=state.phi.shape) * np.sqrt(mass)
    h0 = hamiltonian(state, r, mass)
    new, r_new, diverged = leapfrog(target, state, r, eps, mass)
    delta = hamiltonian(new, r_new, mass) - h0 if not diverged else np.inf
    while not np.isfinite(delta):
        eps *= 0.5
        if eps < 1e-10:
            raise NumericError("cannot find a stable initial step size")
        new, r_new, diverged = leapfrog(target, state, r, eps, mass)
        delta = hamiltonian(new, r_new, mass) - h0 if not diverged else np.inf
    direction = 1 if -delta > np.log(0.5) else -1
    while True:
        eps *= 2.0 ** direction
        if eps > 1e7 or eps < 1e-10:
            break
        new, r_new, diverged = leapfrog(target, state, r, eps, mass)
        delta = hamiltonian(new, r_new, mass) - h0 if not diverged else np.inf
        accept = -delta
        if direction == 1 and not accept > np.log(0.5):
            break
        if direction == -1 and not accept < np.log(0.5):
            break
    return min(max(eps, 1e-10), 1e7)


# ---------------------------------------------------------------------------
# chain runner


def _init_state(target, config, rng):
    if config.init is not None:
        state = _evaluate(target, np.asarray(config.init, dtype=np.float64))
        if not np.isfinite(state.log_density):
            raise NumericError("supplied init has non-finite log density")
        return state
    for _ in range(100):
        phi = rng.uniform(-config.init_jitter, config.init_jitter,
                          size=target.dim)
        state = _evaluate(target, phi)
        if np.isfinite(state.log_density) and state.gradient is not None \
                and np.all(np.isfinite(state.gradient)):
            return state
    raise NumericError(
        "initialization failed: non-finite density after 100 jittered tries")


def _run_single_chain(target, config, chain_index):
    rng = philox_rng(config.seed, "chain", chain_index)
    state = _init_state(target, config, rng)
    mass = np.ones(target.dim)
    records = []
    stats = []

    if config.sampler == "ld":
        eps = config.ld_step
        for _ in range(config.warmup):
            state, _ = langevin_draw(target, state, eps, rng)
        for _ in range(config.draws):
            state, st = langevin_draw(target, state, eps, rng)
            records.append(target.record(state.phi))
            stats.append(st)
        return records, stats, {"step_size": eps}

    eps = find_reasonable_epsilon(target, state, mass, rng)
    da = DualAveraging.start(eps)
    window_ends = _mass_windows(config.warmup)
    welford = _Welford(target.dim) if window_ends else None
    next_window = 0
    for m in range(1, config.warmup + 1):
        state, st = nuts_draw(target, state, eps, mass, rng,
                              config.max_depth, config.divergence_threshold)
        eps = da.update(st.accept_stat, config.target_accept)
        if welford is not None and next_window < len(window_ends):
            if m > (window_ends[next_window - 1] if next_window else 75):
                welford.push(state.phi)
            if m == window_ends[next_window]:
                var = welford.variance()
                n = welford.n
                mass = 1.0 / (var * n / (n + 5.0) + 1e-3 * 5.0 / (n + 5.0))
                welford = _Welford(target.dim)
                eps = find_reasonable_epsilon(target, state, mass, rng)
                da = DualAveraging.start(eps)
                next_window += 1
    if config.warmup:
        eps = da.adapted
    for _ in range(config.draws):
        state, st = nuts_draw(target, state, eps, mass, rng,
                              config.max_depth, config.divergence_threshold)
        records.append(target.record(state.phi))
        stats.append(st)
    return records, stats, {"step_size": eps, "mass": mass}


def run_chains(target, config):
    """Run independent chains and merge their post-warmup draws.

    Each chain derives its own counter-based stream from (seed, chain), so
    chain c's draws do not depend on how many chains run.  Constrained-space
    parameter values are recorded every post-warmup iteration.
    """
    config.validate()
    t_start = time.perf_counter()
    results = [_run_single_chain(target, config, c)
               for c in range(config.chains)]
    names = list(results[0][0][0].keys())
    params = {}
    for name in names:
        params[name] = np.stack([
            np.stack([np.asarray(rec[name], dtype=np.float64)
                      for rec in records])
            for records, _, _ in results])
    all_stats = [stats for _, stats, _ in results]
    meta = {
        "sampler": config.sampler,
        "seed": config.seed,
        "chains": config.chains,
        "draws": config.draws,
        "warmup": config.warmup,
        "wall_time": time.perf_counter() - t_start,
        "divergences": int(np.sum([[s.divergent for s in st]
                                   for st in all_stats])),
        "depth_capped": int(np.sum([[s.depth_capped for s in st]
                                    for st in all_stats])),
        "mean_depth": float(np.mean([[s.depth for s in st]
                                     for st in all_stats])),
        "mean_accept": float(np.mean([[s.accept_stat for s in st]
                                      for st in all_stats])),
        "step_size": [info.get("step_size") for _, _, info in results],
    }
    if hasattr(target, "spec"):
        meta["family"] = target.spec.family
    return SampleSet(params=params, meta=meta)
