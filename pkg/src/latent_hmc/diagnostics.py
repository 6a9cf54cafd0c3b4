"""MCMC quality metrics and cross-run comparison machinery.

ESS follows the multi-chain autocorrelation estimator built on the
between/within variance decomposition (the "formula 11.8" estimator),
with Geyer's initial-positive-pair truncation plus the monotone
refinement.  R-hat is the split-chain potential scale reduction factor.
Cross-run topic comparisons go through minimum-distance matching to undo
label switching; within-chain relabeling is never performed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ContractViolation

RHAT_FLOOR = 1.0 - 1e-6


def _split_halves(draws):
    """(C, S) -> (2C, S//2): each chain split into first/second half."""
    x = np.atleast_2d(np.asarray(draws, dtype=np.float64))
    half = x.shape[1] // 2
    return np.vstack([x[:, :half], x[:, x.shape[1] - half:]])


def _autocov(x):
    """Biased (1/n) autocovariance of each row via FFT."""
    n = x.shape[1]
    xc = x - x.mean(axis=1, keepdims=True)
    size = 2 ** int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(xc, size, axis=1)
    acov = np.fft.irfft(f * np.conj(f), size, axis=1)[:, :n].real
    return acov / n


def ess(draws):
    """Effective sample size of one scalar parameter, shape (C, S) or (S,).

    Chains are split in half, autocorrelations are estimated from the
    pooled variance decomposition, and the sum is truncated where the
    paired autocorrelations first turn negative (kept monotone).  Constant
    chains report the cap C*S (degenerate-variance convention).
    """
    x = np.atleast_2d(np.asarray(draws, dtype=np.float64))
    if x.shape[1] < 4:
        raise ContractViolation("ess: need at least 4 draws")
    cap = float(x.shape[0] * x.shape[1])
    xs = _split_halves(x)
    m, n = xs.shape
    acov = _autocov(xs)
    chain_var = acov[:, 0] * n / (n - 1.0)
    w = chain_var.mean()
    var_plus = w * (n - 1.0) / n
    if m > 1:
        var_plus += np.var(xs.mean(axis=1), ddof=1)
    if var_plus <= 0 or w <= 0:
        return cap
    rho = 1.0 - (w - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    # Geyer initial positive sequence of paired sums, then monotone
    max_pairs = (n - 1) // 2
    pair_sums = []
    for k in range(max_pairs):
        s = rho[2 * k] + rho[2 * k + 1]
        if s <= 0:
            break
        pair_sums.append(s)
    if pair_sums:
        pair_sums = np.minimum.accumulate(pair_sums)
        tau = -1.0 + 2.0 * float(np.sum(pair_sums))
    else:
        tau = 1.0
    tau = max(tau, 1.0 / np.log10(cap + 10.0))
    return float(min(cap, m * n / tau))


def rhat(draws):
    """Split-chain potential scale reduction factor sqrt(var_plus / W).

    Zero within-chain variance reports +inf; results are floored at
    1 - 1e-6.
    """
    xs = _split_halves(np.asarray(draws, dtype=np.float64))
    m, n = xs.shape
    if m < 2 or n < 2:
        raise ContractViolation("rhat: need at least 2 split halves of length 2")
    w = xs.var(axis=1, ddof=1).mean()
    b_over_n = np.var(xs.mean(axis=1), ddof=1)
    if w <= 0:
        return np.inf
    var_plus = w * (n - 1.0) / n + b_over_n
    return float(max(np.sqrt(var_plus / w), RHAT_FLOOR))


def credible_interval(draws, level=0.95):
    """Central empirical quantile interval with linear interpolation."""
    x = np.asarray(draws, dtype=np.float64).reshape(-1)
    needed = int(np.ceil(2.0 / (1.0 - level)))
    if x.shape[0] < needed:
        raise ContractViolation(
            f"credible_interval: need >= {needed} draws for level {level}")
    tail = (1.0 - level) / 2.0
    lo, hi = np.quantile(x, [tail, 1.0 - tail])
    return float(lo), float(hi)


# ---------------------------------------------------------------------------
# topic matching


def _match_cost(beta_a, beta_b, metric):
    a = np.asarray(beta_a, dtype=np.float64)
    b = np.asarray(beta_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractViolation(
            f"match_topics: shapes {a.shape} and {b.shape} differ")
    diff = a[:, None, :] - b[None, :, :]
    if metric == "euclidean":
        return np.sqrt((diff ** 2).sum(axis=2))
    if metric == "tv":
        return 0.5 * np.abs(diff).sum(axis=2)
    raise ContractViolation(f"match_topics: unknown metric {metric!r}")


def match_topics(beta_a, beta_b, metric="euclidean"):
    """Permutation matching rows of ``beta_a`` to rows of ``beta_b``.

    Returns ``perm`` with row i of ``beta_a`` matched to row ``perm[i]`` of
    ``beta_b``, minimizing the total distance (exact assignment).  Among
    equally cheap assignments the lexicographically smallest permutation is
    returned, so ties break toward lower indices.
    """
    cost = _match_cost(beta_a, beta_b, metric)
    k = cost.shape[0]
    rows, cols = linear_sum_assignment(cost)
    best = cost[rows, cols].sum()
    tol = 1e-9 * max(1.0, best)
    perm = np.empty(k, dtype=np.int64)
    free = list(range(k))
    fixed = 0.0
    for i in range(k):
        for j in free:
            rest_rows = np.arange(i + 1, k)
            rest_cols = [c for c in free if c != j]
            if rest_rows.size:
                sub = cost[np.ix_(rest_rows, rest_cols)]
                rr, cc = linear_sum_assignment(sub)
                completion = sub[rr, cc].sum()
            else:
                completion = 0.0
            if fixed + cost[i, j] + completion <= best + tol:
                perm[i] = j
                fixed += cost[i, j]
                free.remove(j)
                break
    return perm


def matched_distances(beta_a, beta_b, perm, metric="euclidean"):
    cost = _match_cost(beta_a, beta_b, metric)
    return cost[np.arange(len(perm)), perm]


# ---------------------------------------------------------------------------
# two-step bootstrap (separated-model inference)


def _ols_slope(design, y):
    coef, res, rank, _ = np.linalg.lstsq(design, y, rcond=None)
    if rank < design.shape[1]:
        raise ContractViolation("two_step_bootstrap: rank-deficient design")
    resid = y - design @ coef
    dof = max(design.shape[0] - design.shape[1], 1)
    sigma2 = float(resid @ resid) / dof
    cov = sigma2 * np.linalg.inv(design.T @ design)
    return float(coef[1]), float(np.sqrt(cov[1, 1]))


def two_step_bootstrap(theta_draws, g, topic, anchor, n_boot=1000, seed=0,
                       level=0.95):
    """Separated-model slope estimate with the pooled-normal bootstrap.

    For every posterior draw s of theta, fit log(theta[:, topic] /
    theta[:, anchor]) on [1, g] by OLS to get a slope and its standard
    error, draw ``n_boot`` normals from each fitted sampling distribution,
    pool everything, and report the central interval.  The point estimate
    is the OLS slope computed on the across-draw mean of theta.
    """
    th = np.asarray(theta_draws, dtype=np.float64)
    if th.ndim != 3:
        raise ContractViolation("two_step_bootstrap: theta draws must be (S, D, K)")
    gv = np.asarray(g, dtype=np.float64).reshape(-1)
    if gv.shape[0] != th.shape[1]:
        raise ContractViolation("two_step_bootstrap: covariate length mismatch")
    design = np.column_stack([np.ones_like(gv), gv])
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    pooled = np.empty((th.shape[0], n_boot))
    for s in range(th.shape[0]):
        y = np.log(th[s, :, topic] / th[s, :, anchor])
        slope, se = _ols_slope(design, y)
        pooled[s] = rng.normal(slope, se, size=n_boot)
    tail = (1.0 - level) / 2.0
    lo, hi = np.quantile(pooled.reshape(-1), [tail, 1.0 - tail])
    mean_theta = th.mean(axis=0)
    point, _ = _ols_slope(design, np.log(mean_theta[:, topic]
                                         / mean_theta[:, anchor]))
    return point, (float(lo), float(hi))


# ---------------------------------------------------------------------------
# per-run reports


@dataclass
class ReportRow:
    name: str
    index: int
    mean: float
    sd: float
    q025: float
    q50: float
    q975: float
    ess: float
    rhat: float
    error: float | None = None
    flags: str = ""


@dataclass
class DiagnosticsReport:
    rows: list = field(default_factory=list)

    def values(self, attr):
        return np.array([getattr(r, attr) for r in self.rows])

    def subset(self, names):
        keep = set(names)
        return DiagnosticsReport([r for r in self.rows if r.name in keep])


def summarize(samples, params=None):
    """Per-scalar posterior summaries, ESS and split R-hat for a SampleSet."""
    names = params if params is not None else list(samples.params)
    rows = []
    for name in names:
        if name not in samples.params:
            raise ContractViolation(f"summarize: unknown parameter {name!r}")
        arr = samples.params[name]
        flat = arr.reshape(arr.shape[0], arr.shape[1], -1)
        for idx in range(flat.shape[2]):
            draws = flat[:, :, idx]
            pooled = draws.reshape(-1)
            sd = float(pooled.std(ddof=1)) if pooled.size > 1 else 0.0
            degenerate = sd == 0.0
            q025, q50, q975 = np.quantile(pooled, [0.025, 0.5, 0.975])
            rows.append(ReportRow(
                name=name, index=idx, mean=float(pooled.mean()), sd=sd,
                q025=float(q025), q50=float(q50), q975=float(q975),
                ess=ess(draws), rhat=np.inf if degenerate else rhat(draws),
                flags="degenerate" if degenerate else ""))
    return DiagnosticsReport(rows)


@dataclass
class ErrorSummaryRow:
    metric: str
    mean: float
    q05: float
    q50: float
    q95: float
    frac_above_1_1: float | None = None


def error_summary(report, truth):
    """Error/ESS/R-hat quantile table against known ground truth.

    ``truth`` maps parameter names to arrays; it must cover every scalar in
    the report.  Errors are posterior mean minus truth.
    """
    errors = []
    for row in report.rows:
        if row.name not in truth:
            raise ContractViolation(f"error_summary: no truth for {row.name!r}")
        flat = np.asarray(truth[row.name], dtype=np.float64).reshape(-1)
        if row.index >= flat.shape[0]:
            raise ContractViolation(
                f"error_summary: truth for {row.name!r} lacks index {row.index}")
        errors.append(row.mean - flat[row.index])
    errors = np.array(errors)
    ess_vals = report.values("ess")
    rhat_vals = report.values("rhat")

    def stats(v):
        return float(v.mean()), *[float(q) for q in
                                  np.quantile(v, [0.05, 0.5, 0.95])]

    rows = [
        ErrorSummaryRow("error", *stats(errors)),
        ErrorSummaryRow("ess", *stats(ess_vals)),
        ErrorSummaryRow("rhat", *stats(rhat_vals),
                        frac_above_1_1=float(np.mean(rhat_vals > 1.1))),
    ]
    return rows
