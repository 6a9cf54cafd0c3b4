"""Replication studies mirroring the paper-style simulation designs.

``stm_study`` pits the integrated HMC fit of the covariate-driven topic
model against the separated two-step pipeline (collapsed Gibbs then
log-ratio OLS with the pooled-normal bootstrap) on the stm simulation:
the quantity of interest is the covariate slope, whose true value is 1.

``dsr_study`` fits the dynamic survey model with NUTS (2,000 draws after
500 warmup) and with Langevin dynamics (20,000 draws after 5,000), then
pools per-parameter error / ESS / split R-hat for the type-share
trajectories into one table.

Replications run independently (optionally across worker processes) and a
failed replication is recorded without aborting the study.
"""

from __future__ import annotations

import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import diagnostics as diag
from .errors import ContractViolation
from .gibbs import run_gibbs
from .models import DsrModel, StmModel, make_spec
from .samplers import SamplerConfig, run_chains
from .simgen import simulate_dsr, simulate_stm

TRUE_SLOPE = 1.0
LD_SEED_OFFSET = 10_000_019


@dataclass
class StudyResult:
    name: str
    replications: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)


def _aligned_sign(beta_mean, truth):
    """+1 if estimated topic 0 matches true topic 0, else -1 (K=2 swap)."""
    perm = diag.match_topics(beta_mean, truth.params["beta"])
    return 1.0 if perm[0] == 0 else -1.0, perm


def stm_replication(rep, base_seed, draws=2000, warmup=1000,
                    gibbs_draws=500, gibbs_thin=10):
    """One stm-sim replication: slope point/interval from both methods."""
    seed = base_seed + rep
    corpus, covariates, truth = simulate_stm(seed)
    out = {"rep": rep, "seed": seed}

    spec = make_spec("stm", K=2)
    model = StmModel(corpus, covariates, spec)
    ss = run_chains(model, SamplerConfig(draws=draws, warmup=warmup,
                                         chains=1, seed=seed))
    sign, _ = _aligned_sign(ss.mean("beta"), truth)
    slope_draws = sign * ss.params["gamma"][:, :, 1, 0].reshape(-1)
    lo, hi = diag.credible_interval(slope_draws)
    out["hmc"] = {
        "point": float(slope_draws.mean()), "lo": lo, "hi": hi,
        "covers": bool(lo <= TRUE_SLOPE <= hi),
        "abs_error": abs(float(slope_draws.mean()) - TRUE_SLOPE),
        "divergences": ss.meta["divergences"],
        "mean_depth": ss.meta["mean_depth"],
    }

    gb = run_gibbs(corpus, 2, alpha=1.0, eta=spec.eta, draws=gibbs_draws,
                   thin=gibbs_thin, seed=seed)
    _, perm = _aligned_sign(gb.mean("beta"), truth)
    topic = int(np.flatnonzero(perm == 0)[0])
    anchor = int(np.flatnonzero(perm == 1)[0])
    g = covariates.topic[:, 1]
    point, (blo, bhi) = diag.two_step_bootstrap(
        gb.params["theta"][0], g, topic, anchor, seed=seed)
    out["two_step"] = {
        "point": point, "lo": blo, "hi": bhi,
        "covers": bool(blo <= TRUE_SLOPE <= bhi),
        "abs_error": abs(point - TRUE_SLOPE),
    }
    return out


def _stm_rep_star(args):
    return stm_replication(*args)


def _run_replications(fn, arg_list, jobs):
    results, failures = [], []
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outputs = list(pool.map(_Guard(fn), arg_list))
    else:
        outputs = [_Guard(fn)(args) for args in arg_list]
    for args, res in zip(arg_list, outputs):
        if isinstance(res, str):
            failures.append((args[0], res))
        else:
            results.append(res)
    return results, failures


class _Guard:
    """Picklable wrapper that converts worker exceptions into strings."""

    def __init__(self, fn):
        self.fn = fn

    def __call__(self, args):
        try:
            return self.fn(args)
        except Exception:
            return traceback.format_exc()


def stm_study(replications, base_seed=0, jobs=1, draws=2000, warmup=1000):
    """The stm simulation study; coverage and error of the slope estimate."""
    if replications < 1:
        raise ContractViolation("replications must be >= 1")
    args = [(rep, base_seed, draws, warmup) for rep in range(replications)]
    results, failures = _run_replications(_stm_rep_star, args, jobs)
    res = StudyResult("stm-sim", results, failures)
    for method in ("hmc", "two_step"):
        pts = np.array([r[method]["point"] for r in results])
        res.summary[method] = {
            "replications": len(results),
            "coverage_count": int(sum(r[method]["covers"] for r in results)),
            "coverage_rate": float(np.mean([r[method]["covers"]
                                            for r in results])),
            "mae": float(np.mean([r[method]["abs_error"] for r in results])),
            "mean_point": float(pts.mean()),
        }
    res.summary["failures"] = len(failures)
    return res


def dsr_replication(rep, base_seed, scale, hmc_draws=2000, hmc_warmup=500,
                    ld_draws=20000, ld_warmup=5000, ld_step=0.01):
    """One dsr-sim replication: per-scalar theta diagnostics per sampler."""
    seed = base_seed + rep
    panel, truth = simulate_dsr(seed, scale=scale)
    spec = make_spec("dsr")
    model = DsrModel(panel, spec)
    truth_beta = np.concatenate(
        [truth.params[f"beta_q{j}"] for j in range(panel.n_questions)], axis=1)
    out = {"rep": rep, "seed": seed, "scale": scale}
    runs = {
        "hmc": run_chains(model, SamplerConfig(
            draws=hmc_draws, warmup=hmc_warmup, chains=1, seed=seed)),
        "ld": run_chains(model, SamplerConfig(
            draws=ld_draws, warmup=ld_warmup, chains=1,
            seed=seed + LD_SEED_OFFSET, sampler="ld", ld_step=ld_step)),
    }
    for method, ss in runs.items():
        est_beta = np.concatenate(
            [ss.mean(f"beta_q{j}") for j in range(panel.n_questions)], axis=1)
        perm = diag.match_topics(est_beta, truth_beta)
        aligned_truth = truth.params["theta"][:, perm]
        errors = (ss.mean("theta") - aligned_truth).reshape(-1)
        report = diag.summarize(ss, params=["theta"])
        out[method] = {
            "errors": errors,
            "ess": report.values("ess"),
            "rhat": report.values("rhat"),
            "draws": ss.n_draws,
            "divergences": ss.meta["divergences"],
            "mean_accept": ss.meta["mean_accept"],
            "mean_depth": ss.meta.get("mean_depth", 0.0),
            "wall_time": ss.meta["wall_time"],
        }
    return out


def _dsr_rep_star(args):
    return dsr_replication(*args)


def dsr_study(replications, base_seed=0, scale=0.05, jobs=1, hmc_draws=2000,
              hmc_warmup=500, ld_draws=20000, ld_warmup=5000, ld_step=0.01):
    """The dsr simulation study; pooled theta diagnostics per sampler."""
    if replications < 1:
        raise ContractViolation("replications must be >= 1")
    args = [(rep, base_seed, scale, hmc_draws, hmc_warmup, ld_draws,
             ld_warmup, ld_step) for rep in range(replications)]
    results, failures = _run_replications(_dsr_rep_star, args, jobs)
    res = StudyResult("dsr-sim", results, failures)
    for method in ("hmc", "ld"):
        errors = np.concatenate([r[method]["errors"] for r in results])
        ess = np.concatenate([r[method]["ess"] for r in results])
        rhat = np.concatenate([r[method]["rhat"] for r in results])
        draws = results[0][method]["draws"]
        res.summary[method] = {
            "error": _quantile_row(errors),
            "ess": _quantile_row(ess),
            "rhat": _quantile_row(rhat),
            "frac_rhat_above_1_1": float(np.mean(rhat > 1.1)),
            "draws": draws,
            "ess_per_draw": float(ess.mean() / draws),
        }
    if all(m in res.summary for m in ("hmc", "ld")):
        res.summary["ess_per_draw_ratio"] = (
            res.summary["hmc"]["ess_per_draw"]
            / max(res.summary["ld"]["ess_per_draw"], 1e-300))
    res.summary["failures"] = len(failures)
    return res


def _quantile_row(values):
    q05, q50, q95 = np.quantile(values, [0.05, 0.5, 0.95])
    return {"mean": float(values.mean()), "q05": float(q05),
            "q50": float(q50), "q95": float(q95)}
