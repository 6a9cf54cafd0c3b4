"""Differentiable unconstrained log-joints for the model zoo.

Families:
    lda    Dirichlet topics and shares, multinomial bag-of-words likelihood
           with the discrete assignments marginalized out
    stm    topic shares driven by covariates through a logistic-normal prior
           (non-centered noise, one anchor topic pinned at zero)
    dsr    dynamic survey responses: per-period type shares follow a
           random walk on anchored logits; the discrete type of each
           respondent is marginalized by log-sum-exp
    slda   supervised LDA: topic model plus a Gaussian outcome regression
    sslda  structural supervised LDA: slda with covariate-dependent
           topic-share means (slda is the constant-design special case)

Each model packs its named parameters into a flat unconstrained vector and
exposes ``log_density`` / ``value_and_grad`` / ``record`` for the samplers.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import special

from . import autodiff as ad
from . import distributions as dist
from .data import CovariateSet, DocumentTermMatrix, SurveyPanel
from .errors import ContractViolation

FAMILIES = ("lda", "stm", "dsr", "slda", "sslda")


@dataclass
class ModelSpec:
    """Model family plus every hyperparameter the zoo uses.

    ``sigma`` is the fixed logistic-normal noise scale of the stm family;
    ``sigma_theta`` plays the same role for slda/sslda where it is part of
    the prior rather than fixed to 1.
    """

    family: str
    K: int = 2
    alpha: float = 1.0          # lda: Dirichlet concentration over shares
    eta: float = 0.3            # Dirichlet concentration over topics
    anchor: int | None = None   # pinned-logit topic; family default if None
    sigma: float = 1.0          # stm logistic-normal noise scale (fixed)
    sigma_gamma: float = 5.0    # prior sd of covariate coefficients
    sigma_theta: float = 2.0    # slda/sslda logistic-normal scale
    sigma_chi: float = 2.0
    sigma_zeta: float = 2.0
    v0: float = 10.0            # dsr InverseGamma shape
    s0: float = 1.0             # dsr InverseGamma scale
    sigma_y_shape: float = 20.0  # Gamma prior on sigma_y
    sigma_y_rate: float = 0.5
    dsr_init_scale: float = 5.0
    dsr_noncentered: bool = False

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ContractViolation(f"unknown model family {self.family!r}")
        if self.K < 2:
            raise ContractViolation("K must be >= 2")
        for name in ("alpha", "eta", "sigma", "sigma_gamma", "sigma_theta",
                     "sigma_chi", "sigma_zeta", "v0", "s0", "sigma_y_shape",
                     "sigma_y_rate", "dsr_init_scale"):
            if getattr(self, name) <= 0:
                raise ContractViolation(f"{name} must be positive")
        if self.anchor is not None and not 0 <= self.anchor < self.K:
            raise ContractViolation("anchor must lie in [0, K)")

    @property
    def anchor_index(self):
        if self.anchor is not None:
            return self.anchor
        # the dynamic survey model pins the first type, everything else the last
        return 0 if self.family == "dsr" else self.K - 1


_FAMILY_DEFAULTS = {
    "lda": dict(alpha=1.0, eta=0.3),
    "stm": dict(eta=0.2, sigma_gamma=5.0, sigma=1.0),
    "dsr": dict(K=4, eta=0.1, v0=10.0, s0=1.0),
    "slda": dict(eta=1.0, sigma_gamma=2.0, sigma_theta=2.0, sigma_chi=2.0,
                 sigma_zeta=2.0, sigma_y_shape=20.0, sigma_y_rate=0.5),
}
_FAMILY_DEFAULTS["sslda"] = dict(_FAMILY_DEFAULTS["slda"])


def make_spec(family, **overrides):
    """ModelSpec with family defaults applied, then per-call overrides."""
    kw = dict(_FAMILY_DEFAULTS.get(family, {}))
    kw.update(overrides)
    return ModelSpec(family=family, **kw)


# ---------------------------------------------------------------------------
# parameter packing


@dataclass(frozen=True)
class LayoutEntry:
    name: str
    shape: tuple          # unconstrained shape
    kind: str             # "identity" | "stick" | "logpos"

    @property
    def size(self):
        return int(np.prod(self.shape, dtype=np.int64)) if self.shape else 1

    @property
    def constrained_shape(self):
        if self.kind == "stick":
            return self.shape[:-1] + (self.shape[-1] + 1,)
        return self.shape


class ParameterLayout:
    """Ordered packing of named parameters into the flat vector Phi."""

    def __init__(self, entries):
        self.entries = list(entries)
        self.slices = {}
        off = 0
        for e in self.entries:
            self.slices[e.name] = slice(off, off + e.size)
            off += e.size
        self.dim = off

    def names(self):
        return [e.name for e in self.entries]

    def split(self, phi):
        """Views of the unconstrained segments, reshaped per entry."""
        phi = np.asarray(phi, dtype=np.float64)
        if phi.shape != (self.dim,):
            raise ContractViolation(
                f"layout: expected vector of length {self.dim}, "
                f"got shape {phi.shape}")
        return {e.name: phi[self.slices[e.name]].reshape(e.shape)
                for e in self.entries}

    def unpack(self, phi):
        """Named constrained parameters from the flat unconstrained vector."""
        out = {}
        for e, seg in zip(self.entries, self.split(phi).values()):
            if e.kind == "identity":
                out[e.name] = seg.copy()
            elif e.kind == "logpos":
                out[e.name] = np.exp(seg)
            else:
                logx, _ = dist.stick_breaking_log(seg)
                out[e.name] = np.exp(logx)
        return out

    def pack(self, named):
        """Inverse of unpack; extra names in ``named`` are ignored."""
        phi = np.empty(self.dim)
        for e in self.entries:
            if e.name not in named:
                raise ContractViolation(f"pack: missing parameter {e.name!r}")
            val = np.asarray(named[e.name], dtype=np.float64)
            if val.shape != e.constrained_shape:
                raise ContractViolation(
                    f"pack: {e.name} has shape {val.shape}, "
                    f"expected {e.constrained_shape}")
            if e.kind == "identity":
                u = val
            elif e.kind == "logpos":
                u = np.log(val)
            else:
                u = dist.stick_breaking_inverse(val)
            phi[self.slices[e.name]] = u.reshape(-1)
        return phi


# ---------------------------------------------------------------------------
# shared pieces


def _dtm_constants(corpus):
    """Static likelihood data: flat nonzero gather + multinomial coefficient."""
    flat_idx = corpus.doc_ids * corpus.n_terms + corpus.term_ids
    counts = corpus.counts.astype(np.float64)
    coeff = float(special.gammaln(corpus.doc_totals + 1.0).sum()
                  - special.gammaln(counts + 1.0).sum())
    return flat_idx.astype(np.intp), counts, coeff


def dtm_log_likelihood_terms(log_theta, log_beta, flat_idx, counts, d, v):
    """Bag-of-words term sum(x * log(theta @ beta)) over nonzero cells."""
    probs = ad.matmul(ad.exp(log_theta), ad.exp(log_beta))
    p_nz = ad.take(ad.reshape(probs, (d * v,)), flat_idx)
    return ad.sum(counts * ad.log(p_nz))


def dtm_log_likelihood(theta, beta, corpus):
    """Numpy likelihood (coefficient included) straight from constrained values."""
    flat_idx, counts, coeff = _dtm_constants(corpus)
    p = (np.asarray(theta) @ np.asarray(beta)).reshape(-1)[flat_idx]
    with np.errstate(divide="ignore"):
        return float(np.sum(counts * np.log(p)) + coeff)


def _anchored_log_theta(ttil, selector):
    """Log simplex rows from free logits and the anchor selector matrix."""
    logits = ad.matmul(ttil, selector)
    return logits - ad.logsumexp(logits, axis=1, keepdims=True)


class _TapeModel:
    """Shared evaluation plumbing; subclasses provide _graph and layout."""

    layout: ParameterLayout
    spec: ModelSpec

    @property
    def dim(self):
        return self.layout.dim

    def _leaves(self, tape, phi):
        return {name: tape.leaf(seg)
                for name, seg in self.layout.split(phi).items()}

    def log_density(self, phi):
        with np.errstate(all="ignore"):
            tape = ad.Tape()
            root, _ = self._graph(tape, self._leaves(tape, phi))
            return float(root.value)

    def log_likelihood(self, phi):
        """Just the observation term (with multinomial coefficients)."""
        with np.errstate(all="ignore"):
            tape = ad.Tape()
            _, ll = self._graph(tape, self._leaves(tape, phi))
            return float(ll.value)

    def value_and_grad(self, phi):
        """Log density and its gradient; gradient is None off the support."""
        with np.errstate(all="ignore"):
            tape = ad.Tape()
            leaves = self._leaves(tape, phi)
            root, _ = self._graph(tape, leaves)
            lp = float(root.value)
            if not np.isfinite(lp):
                return lp, None
            grads = tape.gradient(root)
            flat = np.empty(self.dim)
            for e in self.layout.entries:
                flat[self.layout.slices[e.name]] = grads[leaves[e.name]].reshape(-1)
            return lp, flat

    def record(self, phi):
        """Constrained parameters plus derived quantities for one draw."""
        return self.layout.unpack(phi)


# ---------------------------------------------------------------------------
# plain LDA


class LdaModel(_TapeModel):
    """Marginalized LDA: Dirichlet priors, multinomial mixture likelihood."""

    def __init__(self, corpus: DocumentTermMatrix, spec: ModelSpec):
        if corpus.n_docs < 1 or corpus.counts.size == 0:
            raise ContractViolation("lda: empty corpus")
        self.spec = spec
        self.corpus = corpus
        k, d, v = spec.K, corpus.n_docs, corpus.n_terms
        self.layout = ParameterLayout([
            LayoutEntry("theta", (d, k - 1), "stick"),
            LayoutEntry("beta", (k, v - 1), "stick"),
        ])
        self._flat_idx, self._counts, self._coeff = _dtm_constants(corpus)

    def _graph(self, tape, leaves):
        sp, corpus = self.spec, self.corpus
        ltheta, jac_t = dist.stick_breaking_log(leaves["theta"])
        lbeta, jac_b = dist.stick_breaking_log(leaves["beta"])
        prior = (ad.sum(dist.dirichlet_log_prob_from_log(
                     ltheta, np.full(sp.K, sp.alpha))) + ad.sum(jac_t)
                 + ad.sum(dist.dirichlet_log_prob_from_log(
                     lbeta, np.full(corpus.n_terms, sp.eta))) + ad.sum(jac_b))
        ll = dtm_log_likelihood_terms(ltheta, lbeta, self._flat_idx,
                                      self._counts, corpus.n_docs,
                                      corpus.n_terms) + self._coeff
        return prior + ll, ll


# ---------------------------------------------------------------------------
# structural topic model


class StmModel(_TapeModel):
    """STM with non-centered logistic-normal shares and fixed noise scale.

    Sampled parameters: coefficient matrix gamma (per covariate column,
    per non-anchor topic), standard-normal noise eps, topic sticks.  The
    covariate matrix is used as given; include a constant column for an
    intercept.
    """

    def __init__(self, corpus: DocumentTermMatrix, covariates: CovariateSet,
                 spec: ModelSpec):
        if covariates.topic is None:
            raise ContractViolation("stm: topic covariates required")
        if covariates.topic.shape[0] != corpus.n_docs:
            raise ContractViolation("stm: covariate rows != number of documents")
        self.spec = spec
        self.corpus = corpus
        self.design = np.ascontiguousarray(covariates.topic)
        k, d, v = spec.K, corpus.n_docs, corpus.n_terms
        p = self.design.shape[1]
        self.layout = ParameterLayout([
            LayoutEntry("gamma", (p, k - 1), "identity"),
            LayoutEntry("eps", (d, k - 1), "identity"),
            LayoutEntry("beta", (k, v - 1), "stick"),
        ])
        self._selector = dist._anchor_selector(k, spec.anchor_index)
        self._flat_idx, self._counts, self._coeff = _dtm_constants(corpus)

    def _graph(self, tape, leaves):
        sp, corpus = self.spec, self.corpus
        gamma, eps = leaves["gamma"], leaves["eps"]
        lbeta, jac_b = dist.stick_breaking_log(leaves["beta"])
        prior = (ad.sum(dist.normal_log_prob(gamma, 0.0, sp.sigma_gamma))
                 + ad.sum(dist.normal_log_prob(eps, 0.0, 1.0))
                 + ad.sum(dist.dirichlet_log_prob_from_log(
                     lbeta, np.full(corpus.n_terms, sp.eta))) + ad.sum(jac_b))
        ttil = ad.matmul(self.design, gamma) + sp.sigma * eps
        ltheta = _anchored_log_theta(ttil, self._selector)
        ll = dtm_log_likelihood_terms(ltheta, lbeta, self._flat_idx,
                                      self._counts, corpus.n_docs,
                                      corpus.n_terms) + self._coeff
        return prior + ll, ll

    def record(self, phi):
        out = self.layout.unpack(phi)
        ttil = self.design @ out["gamma"] + self.spec.sigma * out["eps"]
        out["theta"] = dist.anchored_softmax(ttil, self.spec.anchor_index)
        return out


# ---------------------------------------------------------------------------
# dynamic survey responses


class DsrModel(_TapeModel):
    """Dynamic survey-response model with the respondent type marginalized.

    Per-period type shares are softmax of anchored logits whose free
    coordinates follow a Gaussian random walk; the walk scale for logit k is
    sqrt(sigma_k^2 + sigma_0^2) and each variance carries an InverseGamma
    prior.  The per-respondent likelihood is a K-term log-sum-exp, so the
    discrete type is never instantiated.
    """

    def __init__(self, panel: SurveyPanel, spec: ModelSpec):
        self.spec = spec
        self.panel = panel
        k, t = spec.K, panel.n_periods
        entries = [
            LayoutEntry("sigma_sq", (k,), "logpos"),
            LayoutEntry("theta_tilde0", (k - 1,), "identity"),
        ]
        if spec.dsr_noncentered:
            entries.append(LayoutEntry("rw_noise", (t, k - 1), "identity"))
        else:
            entries.append(LayoutEntry("theta_tilde", (t, k - 1), "identity"))
        for j, lj in enumerate(panel.n_categories):
            entries.append(LayoutEntry(f"beta_q{j}", (k, int(lj) - 1), "stick"))
        self.layout = ParameterLayout(entries)
        self._selector = dist._anchor_selector(k, spec.anchor_index)
        self._compress(panel)

    def _compress(self, panel):
        # respondents are exchangeable within a (period, response pattern)
        # cell; group them so the likelihood is one weighted log-sum-exp pass
        patterns, pat_of = np.unique(panel.responses, axis=0,
                                     return_inverse=True)
        n_pat = patterns.shape[0]
        key = panel.periods * n_pat + pat_of
        cells, weights = np.unique(key, return_counts=True)
        self._t_rows = (cells // n_pat).astype(np.intp)
        self._p_rows = (cells % n_pat).astype(np.intp)
        self._weights = weights.astype(np.float64)
        # one-hot over the concatenated answer blocks of all questions, so
        # the pattern score S[p, k] = sum_j log beta^j[k, x_pj] is one matmul
        offsets = np.concatenate([[0], np.cumsum(panel.n_categories)])
        onehot = np.zeros((n_pat, int(offsets[-1])))
        for j in range(panel.n_questions):
            onehot[np.arange(n_pat), offsets[j] + patterns[:, j]] = 1.0
        self._onehot = onehot

    def _log_theta(self, leaves):
        sp = self.spec
        # free-logit walk scale: sqrt(sigma_k^2 + sigma_0^2), k = 1..K-1
        u = leaves["sigma_sq"]          # unconstrained log variances
        sig2 = ad.exp(u)
        rest = ad.take(sig2, np.arange(1, sp.K, dtype=np.intp))
        first = ad.take(sig2, np.zeros(1, dtype=np.intp))
        scale = ad.exp(0.5 * ad.log(rest + first))
        w0 = leaves["theta_tilde0"]
        if sp.dsr_noncentered:
            steps = ad.reshape(scale, (1, sp.K - 1)) * leaves["rw_noise"]
            levels = ad.cumsum(steps, axis=0) + ad.reshape(w0, (1, sp.K - 1))
            rw_prior = ad.sum(dist.normal_log_prob(leaves["rw_noise"], 0.0, 1.0))
        else:
            levels = leaves["theta_tilde"]
            prev = ad.concat(
                [ad.reshape(w0, (1, sp.K - 1)),
                 ad.take(levels, np.arange(self.panel.n_periods - 1,
                                           dtype=np.intp), axis=0)], axis=0)
            rw_prior = ad.sum(dist.normal_log_prob(
                levels - prev, 0.0, ad.reshape(scale, (1, sp.K - 1))))
        prior = (ad.sum(dist.inverse_gamma_log_prob(sig2, sp.v0, sp.s0))
                 + ad.sum(u)  # log-positive Jacobian
                 + ad.sum(dist.normal_log_prob(
                     w0, 0.0, sp.dsr_init_scale * scale))
                 + rw_prior)
        return _anchored_log_theta(levels, self._selector), levels, prior

    def _graph(self, tape, leaves):
        sp = self.spec
        ltheta, _, prior = self._log_theta(leaves)
        blocks = []
        for j, lj in enumerate(self.panel.n_categories):
            lb, jac = dist.stick_breaking_log(leaves[f"beta_q{j}"])
            prior = prior + ad.sum(dist.dirichlet_log_prob_from_log(
                lb, np.full(int(lj), sp.eta))) + ad.sum(jac)
            blocks.append(lb)
        # (K, sum_j L_j) log profiles -> (P, K) pattern scores in one matmul
        lbeta_cat = ad.concat(blocks, axis=1)
        score = ad.matmul(self._onehot, ad.transpose(lbeta_cat))
        rows = ad.take(ltheta, self._t_rows, axis=0) \
            + ad.take(score, self._p_rows, axis=0)
        ll = ad.sum(self._weights * ad.logsumexp(rows, axis=1))
        return prior + ll, ll

    def record(self, phi):
        out = self.layout.unpack(phi)
        sp = self.spec
        if sp.dsr_noncentered:
            scale = np.sqrt(out["sigma_sq"][1:] + out["sigma_sq"][0])
            out["theta_tilde"] = (out["theta_tilde0"][None, :]
                                  + np.cumsum(scale[None, :] * out["rw_noise"],
                                              axis=0))
        out["theta"] = dist.anchored_softmax(out["theta_tilde"],
                                             sp.anchor_index)
        return out


# ---------------------------------------------------------------------------
# supervised and structural-supervised LDA


class SupervisedLdaModel(_TapeModel):
    """slda / sslda: topic model plus Gaussian outcome regression.

    sslda gives every non-anchor topic a coefficient vector over the topic
    covariates; slda is exactly the constant-design special case, so both
    share one graph and the nesting identity holds to machine precision.
    """

    def __init__(self, corpus: DocumentTermMatrix, covariates: CovariateSet,
                 spec: ModelSpec):
        if spec.family not in ("slda", "sslda"):
            raise ContractViolation("SupervisedLdaModel expects slda or sslda")
        if covariates.outcomes is None:
            raise ContractViolation(f"{spec.family}: outcomes missing")
        self.spec = spec
        self.corpus = corpus
        d, k, v = corpus.n_docs, spec.K, corpus.n_terms
        if spec.family == "sslda":
            if covariates.topic is None:
                raise ContractViolation("sslda: topic covariates required")
            self.design = np.ascontiguousarray(covariates.topic)
        else:
            self.design = np.ones((d, 1))
        self.q = covariates.outcome if covariates.outcome is not None \
            else np.zeros((d, 0))
        self.y = covariates.outcomes
        gamma_shape = (self.design.shape[1], k - 1) if spec.family == "sslda" \
            else (k - 1,)
        entries = [
            LayoutEntry("gamma" if spec.family == "sslda" else "gamma0",
                        gamma_shape, "identity"),
            LayoutEntry("theta_tilde", (d, k - 1), "identity"),
            LayoutEntry("beta", (k, v - 1), "stick"),
            LayoutEntry("chi", (k,), "identity"),
        ]
        if self.q.shape[1]:
            entries.append(LayoutEntry("zeta", (self.q.shape[1],), "identity"))
        entries.append(LayoutEntry("sigma_y", (1,), "logpos"))
        self.layout = ParameterLayout(entries)
        self._gamma_name = entries[0].name
        self._selector = dist._anchor_selector(k, spec.anchor_index)
        self._flat_idx, self._counts, self._coeff = _dtm_constants(corpus)

    def _graph(self, tape, leaves):
        sp, corpus = self.spec, self.corpus
        d, k = corpus.n_docs, sp.K
        gamma = leaves[self._gamma_name]
        if sp.family == "slda":
            gamma = ad.reshape(gamma, (1, k - 1))
        ttil = leaves["theta_tilde"]
        lbeta, jac_b = dist.stick_breaking_log(leaves["beta"])
        mean = ad.matmul(self.design, gamma)
        prior = (ad.sum(dist.normal_log_prob(gamma, 0.0, sp.sigma_gamma))
                 + ad.sum(dist.normal_log_prob(ttil, mean, sp.sigma_theta))
                 + ad.sum(dist.dirichlet_log_prob_from_log(
                     lbeta, np.full(corpus.n_terms, sp.eta))) + ad.sum(jac_b)
                 + ad.sum(dist.normal_log_prob(leaves["chi"], 0.0, sp.sigma_chi)))
        ltheta = _anchored_log_theta(ttil, self._selector)
        ll_x = dtm_log_likelihood_terms(ltheta, lbeta, self._flat_idx,
                                        self._counts, d, corpus.n_terms) \
            + self._coeff
        # outcome regression
        theta = ad.exp(ltheta)
        mu = ad.reshape(ad.matmul(theta, ad.reshape(leaves["chi"], (k, 1))),
                        (d,))
        if self.q.shape[1]:
            zeta = leaves["zeta"]
            prior = prior + ad.sum(dist.normal_log_prob(zeta, 0.0, sp.sigma_zeta))
            mu = mu + ad.reshape(
                ad.matmul(self.q, ad.reshape(zeta, (self.q.shape[1], 1))), (d,))
        u_sy = leaves["sigma_y"]
        sigma_y = ad.exp(u_sy)
        prior = prior + ad.sum(dist.gamma_log_prob(
            sigma_y, sp.sigma_y_shape, sp.sigma_y_rate)) + ad.sum(u_sy)
        ll_y = ad.sum(dist.normal_log_prob(self.y, mu, sigma_y))
        ll = ll_x + ll_y
        return prior + ll, ll

    def record(self, phi):
        out = self.layout.unpack(phi)
        out["theta"] = dist.anchored_softmax(out["theta_tilde"],
                                             self.spec.anchor_index)
        out["sigma_y"] = out["sigma_y"].reshape(())
        return out


# ---------------------------------------------------------------------------
# entry points


def build_model(spec, corpus=None, covariates=None, panel=None):
    """Construct the model object a SamplerConfig-driven run needs."""
    if spec.family == "lda":
        return LdaModel(corpus, spec)
    if spec.family == "stm":
        return StmModel(corpus, covariates, spec)
    if spec.family == "dsr":
        if panel is None:
            raise ContractViolation("dsr: survey panel required")
        return DsrModel(panel, spec)
    return SupervisedLdaModel(corpus, covariates, spec)


def lda_log_joint(phi, corpus, spec):
    return LdaModel(corpus, spec).log_density(phi)


def stm_log_joint(phi, corpus, covariates, spec):
    return StmModel(corpus, covariates, spec).log_density(phi)


def dsr_log_joint(phi, panel, spec):
    return DsrModel(panel, spec).log_density(phi)


def slda_log_joint(phi, corpus, covariates, spec):
    return SupervisedLdaModel(corpus, covariates, spec).log_density(phi)


def sslda_log_joint(phi, corpus, covariates, spec):
    return SupervisedLdaModel(corpus, covariates, spec).log_density(phi)
