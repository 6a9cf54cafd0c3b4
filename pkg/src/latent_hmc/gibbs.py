"""Collapsed Gibbs sampler for plain LDA.

The corpus is expanded to per-token lists (term order within a document is
exchangeable), and each sweep resamples every token's topic from its
collapsed conditional

    p(z = k | rest) ~ (n_dk + alpha) * (n_kv + eta) / (n_k + V * eta)

with the token removed from the count tables.  Sweeps visit documents in
index order and tokens in position order; all randomness comes from
pre-generated Philox uniforms so runs are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .data import DocumentTermMatrix
from .errors import ContractViolation
from .sampleset import SampleSet
from .samplers import philox_rng


@dataclass
class GibbsState:
    """Topic assignments plus the count tables they imply."""

    doc_of: np.ndarray    # document of each token occurrence
    term_of: np.ndarray   # term of each token occurrence
    z: np.ndarray         # current topic of each token occurrence
    n_dk: np.ndarray      # D x K document-topic counts
    n_kv: np.ndarray      # K x V topic-term counts
    n_k: np.ndarray       # K topic totals

    @property
    def n_topics(self):
        return self.n_dk.shape[1]

    def recount(self):
        """Tables recomputed from scratch; must equal the incremental ones."""
        d, k, v = self.n_dk.shape[0], self.n_dk.shape[1], self.n_kv.shape[1]
        n_dk = np.zeros((d, k), dtype=np.int64)
        n_kv = np.zeros((k, v), dtype=np.int64)
        np.add.at(n_dk, (self.doc_of, self.z), 1)
        np.add.at(n_kv, (self.z, self.term_of), 1)
        return n_dk, n_kv, n_kv.sum(axis=1)


def build_state(corpus: DocumentTermMatrix, n_topics, rng):
    """Expand the corpus into token lists with random initial assignments."""
    if corpus.counts.size == 0:
        raise ContractViolation("gibbs: empty corpus")
    doc_of = np.repeat(corpus.doc_ids, corpus.counts).astype(np.int64)
    term_of = np.repeat(corpus.term_ids, corpus.counts).astype(np.int64)
    z = rng.integers(0, n_topics, size=doc_of.shape[0]).astype(np.int64)
    state = GibbsState(doc_of, term_of, z, *((None,) * 3))
    state.n_dk = np.zeros((corpus.n_docs, n_topics), dtype=np.int64)
    state.n_kv = np.zeros((n_topics, corpus.n_terms), dtype=np.int64)
    np.add.at(state.n_dk, (doc_of, z), 1)
    np.add.at(state.n_kv, (z, term_of), 1)
    state.n_k = state.n_kv.sum(axis=1)
    return state


@njit(cache=True)
def _sweep_kernel(z, doc_of, term_of, n_dk, n_kv, n_k, alpha, eta, uniforms):
    n_topics = n_dk.shape[1]
    v_eta = n_kv.shape[1] * eta
    for i in range(z.shape[0]):
        d = doc_of[i]
        v = term_of[i]
        k_old = z[i]
        n_dk[d, k_old] -= 1
        n_kv[k_old, v] -= 1
        n_k[k_old] -= 1
        total = 0.0
        for k in range(n_topics):
            total += (n_dk[d, k] + alpha) * (n_kv[k, v] + eta) / (n_k[k] + v_eta)
        target = uniforms[i] * total
        acc = 0.0
        k_new = n_topics - 1
        for k in range(n_topics):
            acc += (n_dk[d, k] + alpha) * (n_kv[k, v] + eta) / (n_k[k] + v_eta)
            if target < acc:
                k_new = k
                break
        z[i] = k_new
        n_dk[d, k_new] += 1
        n_kv[k_new, v] += 1
        n_k[k_new] += 1


def collapsed_conditional(state, token, alpha, eta):
    """Conditional topic probabilities for one token, tables held fixed."""
    d, v, k_old = state.doc_of[token], state.term_of[token], state.z[token]
    n_dk = state.n_dk[d].astype(np.float64).copy()
    n_kv = state.n_kv[:, v].astype(np.float64).copy()
    n_k = state.n_k.astype(np.float64).copy()
    n_dk[k_old] -= 1
    n_kv[k_old] -= 1
    n_k[k_old] -= 1
    p = (n_dk + alpha) * (n_kv + eta) / (n_k + state.n_kv.shape[1] * eta)
    return p / p.sum()


def gibbs_sweep(state, alpha, eta, rng):
    """Resample every token's topic once, updating the tables in place."""
    uniforms = rng.random(state.z.shape[0])
    _sweep_kernel(state.z, state.doc_of, state.term_of, state.n_dk,
                  state.n_kv, state.n_k, float(alpha), float(eta), uniforms)


def smoothed_estimates(state, alpha, eta):
    """Per-draw point estimates implied by the count tables."""
    theta = (state.n_dk + alpha) / (state.n_dk.sum(axis=1, keepdims=True)
                                    + state.n_topics * alpha)
    beta = (state.n_kv + eta) / (state.n_k[:, None]
                                 + state.n_kv.shape[1] * eta)
    return theta, beta


def run_gibbs(corpus, n_topics, alpha, eta, draws, thin=1, burn=None, seed=0):
    """Collapsed Gibbs run recording smoothed (theta, beta) estimates.

    Records one draw every ``thin`` sweeps after ``burn`` burn-in sweeps;
    the burn-in defaults to draws * thin (an equal split).
    """
    if draws < 1:
        raise ContractViolation("gibbs: draws must be >= 1")
    if thin < 1:
        raise ContractViolation("gibbs: thin must be >= 1")
    if burn is None:
        burn = draws * thin
    rng = philox_rng(seed, "gibbs")
    state = build_state(corpus, n_topics, rng)
    thetas, betas = [], []
    for sweep in range(burn + draws * thin):
        gibbs_sweep(state, alpha, eta, rng)
        if sweep >= burn and (sweep - burn + 1) % thin == 0:
            theta, beta = smoothed_estimates(state, alpha, eta)
            thetas.append(theta)
            betas.append(beta)
    params = {"theta": np.stack(thetas)[None], "beta": np.stack(betas)[None]}
    meta = {"sampler": "gibbs", "seed": seed, "chains": 1, "draws": draws,
            "thin": thin, "burn": burn, "alpha": alpha, "eta": eta,
            "family": "lda"}
    return SampleSet(params=params, meta=meta)
