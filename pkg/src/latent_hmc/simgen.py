"""Synthetic-data generators with recorded ground truth.

All randomness comes from the counter-based Philox generator keyed on
(seed, generator tag), so datasets regenerate bit-identically from
(spec, seed) across platforms.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import CovariateSet, DocumentTermMatrix, SurveyPanel
from .errors import ContractViolation
from .samplers import philox_rng

# Root of E_{eps~N(0,1)}[sigmoid(1 + 2 s + eps)] = 0.75, found by bisection
# on a 1e6-sample Monte-Carlo estimate and verified against an adaptive
# Gauss quadrature oracle (tests/test_simgen.py re-derives it).
SIGMA_G_EXPECTATION = 0.1574561195009616
# plug-in reading of the same calibration: sigmoid(1 + 2 s) = 0.75
SIGMA_G_PLUGIN = (np.log(3.0) - 1.0) / 2.0

STM_DOCS = 100
STM_DOC_LEN = 25
STM_VOCAB = 500
STM_GAMMA = (1.0, 1.0)         # intercept, slope
STM_ETA = 0.2

DSR_PERIODS = 50
DSR_RESPONDENTS = 10_000
DSR_CATEGORIES = (5, 5, 5, 5, 6, 6, 6, 6)
DSR_TYPES = 4
DSR_ETA = 0.1
DSR_SIGMA = 0.1

SLDA_DOCS = 200
SLDA_VOCAB = 100
SLDA_TYPES = 2
SLDA_ETA = 1.0
SLDA_DOC_LEN = 50
SLDA_SIGMA_Y = 0.5


@dataclass
class SimTruth:
    """Generating parameters, seed, and comparison hints for one dataset."""

    generator: str
    seed: int
    params: dict
    compare: list = field(default_factory=list)   # names meaningful vs fits
    match_param: str | None = None                # posterior block for matching
    info: dict = field(default_factory=dict)


def _categorical_rows(rng, probs):
    """One categorical draw per row of ``probs`` via inverse CDF."""
    u = rng.random(probs.shape[0])
    return (u[:, None] > np.cumsum(probs, axis=1)).sum(axis=1)


def simulate_stm(seed, calibration="expectation"):
    """Covariate-driven two-topic corpus: 100 documents of 25 tokens.

    The free topic's logit is 1 + g_d + eps_d with eps ~ N(0,1) and
    g ~ N(0, sigma_g^2); sigma_g is calibrated so the mean share of the
    free topic at g = 2 sigma_g is 0.75 (``calibration`` picks the
    expectation-over-noise reading or the plug-in-at-zero-noise reading).
    Terms that never occur are dropped and ids remapped, so the realized
    vocabulary may be smaller than the 500 potential terms.
    """
    if calibration == "expectation":
        sigma_g = SIGMA_G_EXPECTATION
    elif calibration == "plugin":
        sigma_g = SIGMA_G_PLUGIN
    else:
        raise ContractViolation(f"unknown calibration {calibration!r}")
    rng = philox_rng(seed, "stm")
    beta = rng.dirichlet(np.full(STM_VOCAB, STM_ETA), size=2)
    g = rng.normal(0.0, sigma_g, size=STM_DOCS)
    eps = rng.normal(0.0, 1.0, size=STM_DOCS)
    logit = STM_GAMMA[0] + STM_GAMMA[1] * g + eps
    theta = np.column_stack([1.0 / (1.0 + np.exp(-logit)),
                             1.0 / (1.0 + np.exp(logit))])
    word_probs = theta @ beta
    x = np.vstack([rng.multinomial(STM_DOC_LEN, word_probs[d])
                   for d in range(STM_DOCS)])
    realized = np.flatnonzero(x.sum(axis=0) > 0)
    corpus = DocumentTermMatrix.from_dense(x[:, realized])
    covariates = CovariateSet(STM_DOCS,
                              topic=np.column_stack([np.ones(STM_DOCS), g]),
                              topic_names=["const", "g"])
    beta_realized = beta[:, realized]
    beta_realized = beta_realized / beta_realized.sum(axis=1, keepdims=True)
    truth = SimTruth(
        generator="stm", seed=seed,
        params={
            "gamma": np.array([[STM_GAMMA[0]], [STM_GAMMA[1]]]),
            "eps": eps[:, None],
            "theta": theta,
            "beta": beta_realized,
        },
        compare=["gamma", "theta", "beta"],
        match_param="beta",
        info={"sigma_g": sigma_g, "calibration": calibration,
              "beta_full": beta, "realized_terms": realized,
              "anchor": 1})
    return corpus, covariates, truth


def simulate_dsr(seed, scale=1.0):
    """Dynamic survey panel: 50 periods, 10,000 respondents per period.

    ``scale`` shrinks the per-period respondent count (never the number of
    periods; the time-series structure is the object under test).  Type
    logits start at N(0, 1) and follow a random walk with step sd 0.1; all
    K logits are free in simulation (anchoring is an estimation device).
    """
    if not 0.0 < scale <= 1.0:
        raise ContractViolation("scale must lie in (0, 1]")
    n_t = max(int(round(DSR_RESPONDENTS * scale)), 1)
    rng = philox_rng(seed, "dsr")
    n_cat = np.array(DSR_CATEGORIES)
    beta = [rng.dirichlet(np.full(l, DSR_ETA), size=DSR_TYPES) for l in n_cat]
    ttil = np.empty((DSR_PERIODS, DSR_TYPES))
    ttil[0] = rng.normal(0.0, 1.0, size=DSR_TYPES)
    steps = rng.normal(0.0, DSR_SIGMA, size=(DSR_PERIODS - 1, DSR_TYPES))
    ttil[1:] = ttil[0] + np.cumsum(steps, axis=0)
    e = np.exp(ttil - ttil.max(axis=1, keepdims=True))
    theta = e / e.sum(axis=1, keepdims=True)
    periods = np.repeat(np.arange(DSR_PERIODS), n_t)
    z = np.concatenate([_categorical_rows(rng, np.tile(theta[t], (n_t, 1)))
                        for t in range(DSR_PERIODS)])
    responses = np.column_stack([_categorical_rows(rng, beta[j][z])
                                 for j in range(len(n_cat))])
    panel = SurveyPanel(DSR_PERIODS, n_cat, periods, responses)
    truth = SimTruth(
        generator="dsr", seed=seed,
        params={"theta": theta,
                **{f"beta_q{j}": beta[j] for j in range(len(n_cat))}},
        compare=["theta"],
        match_param="beta",
        info={"sigma": DSR_SIGMA, "scale": scale, "n_t": n_t,
              "theta_tilde_free": ttil,
              "type_counts": np.vstack([np.bincount(z[periods == t],
                                                    minlength=DSR_TYPES)
                                        for t in range(DSR_PERIODS)])})
    return panel, truth


def simulate_slda(seed):
    """Synthetic supervised-LDA data: corpus, outcome covariates, outcomes.

    Follows the slda generative process at desk scale (D=200, V=100, K=2,
    eta=1, chi and zeta drawn N(0,1), sigma_y=0.5, 50 tokens per document,
    intercept prior sd 2, share scale sd 2, anchor on the last topic).
    """
    rng = philox_rng(seed, "slda")
    beta = rng.dirichlet(np.full(SLDA_VOCAB, SLDA_ETA), size=SLDA_TYPES)
    gamma0 = rng.normal(0.0, 2.0, size=SLDA_TYPES - 1)
    ttil = rng.normal(gamma0, 2.0, size=(SLDA_DOCS, SLDA_TYPES - 1))
    logits = np.concatenate([ttil, np.zeros((SLDA_DOCS, 1))], axis=1)
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    theta = e / e.sum(axis=1, keepdims=True)
    word_probs = theta @ beta
    x = np.vstack([rng.multinomial(SLDA_DOC_LEN, word_probs[d])
                   for d in range(SLDA_DOCS)])
    realized = np.flatnonzero(x.sum(axis=0) > 0)
    corpus = DocumentTermMatrix.from_dense(x[:, realized])
    chi = rng.normal(0.0, 1.0, size=SLDA_TYPES)
    q = rng.normal(0.0, 1.0, size=(SLDA_DOCS, 2))
    zeta = rng.normal(0.0, 1.0, size=2)
    y = theta @ chi + q @ zeta + rng.normal(0.0, SLDA_SIGMA_Y, size=SLDA_DOCS)
    covariates = CovariateSet(SLDA_DOCS, outcome=q, outcomes=y,
                              outcome_names=["q0", "q1"])
    beta_realized = beta[:, realized]
    beta_realized = beta_realized / beta_realized.sum(axis=1, keepdims=True)
    truth = SimTruth(
        generator="slda", seed=seed,
        params={"gamma0": gamma0, "theta": theta, "beta": beta_realized,
                "chi": chi, "zeta": zeta,
                "sigma_y": np.array(SLDA_SIGMA_Y)},
        compare=["theta", "beta", "chi", "zeta"],
        match_param="beta",
        info={"realized_terms": realized, "anchor": SLDA_TYPES - 1})
    return corpus, covariates, truth
