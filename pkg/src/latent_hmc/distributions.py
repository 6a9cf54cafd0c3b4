"""Log-density kernels and constrained/unconstrained transforms.

Every kernel accepts plain numpy inputs (validated, with the boundary
conventions documented per function) or tape Nodes (assumed in-domain, so the
result stays differentiable).  Vector-valued kernels are batched over the
last axis; scalar kernels are elementwise.

This module only evaluates densities and transforms; sampling for data
generation lives in ``simgen``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from . import autodiff as ad
from .errors import ContractViolation

LOG_2PI = float(np.log(2.0 * np.pi))

SIMPLEX_ATOL = 1e-8


def _is_node(*xs):
    return any(isinstance(x, ad.Node) for x in xs)


def _check_simplex(x):
    if np.any(x < -1e-12) or np.any(np.abs(x.sum(axis=-1) - 1.0) > SIMPLEX_ATOL):
        raise ContractViolation("expected rows on the probability simplex")


# ---------------------------------------------------------------------------
# densities


def dirichlet_log_prob(x, concentration):
    """Log Dirichlet density of simplex rows ``x`` under ``concentration``.

    Boundary convention: returns -inf whenever some ``x_k`` is 0 unless the
    matching concentration equals 1 (the term then contributes nothing).
    """
    conc = np.asarray(concentration, dtype=np.float64)
    if np.any(conc <= 0):
        raise ContractViolation("dirichlet: concentrations must be positive")
    norm = float(special.gammaln(conc.sum()) - special.gammaln(conc).sum())
    if _is_node(x):
        if ad.value(x).shape[-1] != conc.shape[-1]:
            raise ContractViolation("dirichlet: dimension mismatch")
        return ad.sum((conc - 1.0) * ad.log(x), axis=-1) + norm
    xv = np.asarray(x, dtype=np.float64)
    if xv.shape[-1] != conc.shape[-1]:
        raise ContractViolation(
            f"dirichlet: x has dimension {xv.shape[-1]}, "
            f"concentration has {conc.shape[-1]}")
    _check_simplex(xv)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(conc == 1.0, 0.0, (conc - 1.0) * np.log(xv))
        out = terms.sum(axis=-1) + norm
    bad = np.any((xv <= 0.0) & (conc < 1.0), axis=-1)
    return np.where(bad, -np.inf, out)


def dirichlet_log_prob_from_log(logx, concentration):
    """Dirichlet log density evaluated from log-simplex rows (tape-friendly)."""
    conc = np.asarray(concentration, dtype=np.float64)
    norm = float(special.gammaln(conc.sum()) - special.gammaln(conc).sum())
    return ad.sum((conc - 1.0) * logx, axis=-1) + norm


def multinomial_log_prob(counts, probs, total):
    """Log multinomial pmf, multinomial coefficient included.

    ``counts`` must sum to ``total`` along the last axis.  Zero-probability
    cells with positive counts give -inf; with zero counts they contribute 0.
    """
    c = np.asarray(counts, dtype=np.float64)
    t = np.asarray(total, dtype=np.float64)
    if np.any(np.abs(c.sum(axis=-1) - t) > 1e-9) or np.any(c < 0):
        raise ContractViolation("multinomial: counts must be nonnegative and "
                                "sum to total")
    coeff = special.gammaln(t + 1.0) - special.gammaln(c + 1.0).sum(axis=-1)
    if _is_node(probs):
        if ad.value(probs).shape[-1] != c.shape[-1]:
            raise ContractViolation("multinomial: dimension mismatch")
        return ad.sum(c * ad.log(probs), axis=-1) + coeff
    p = np.asarray(probs, dtype=np.float64)
    if p.shape[-1] != c.shape[-1]:
        raise ContractViolation("multinomial: dimension mismatch")
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(c > 0, c * np.log(p), 0.0)
    return terms.sum(axis=-1) + coeff


def normal_log_prob(x, mean, sd):
    """Elementwise Gaussian log density."""
    if not _is_node(sd) and np.any(np.asarray(sd) <= 0):
        raise ContractViolation("normal: sd must be positive")
    z = (x - mean) / sd
    return -0.5 * LOG_2PI - ad.log(sd) - 0.5 * ad.square(z)


def gamma_log_prob(x, shape, rate):
    """Elementwise Gamma(shape, rate) log density."""
    if np.any(np.asarray(shape) <= 0) or np.any(np.asarray(rate) <= 0):
        raise ContractViolation("gamma: shape and rate must be positive")
    if not _is_node(x) and np.any(np.asarray(x) <= 0):
        raise ContractViolation("gamma: x must be positive")
    return (shape * np.log(rate) - special.gammaln(shape)
            + (shape - 1.0) * ad.log(x) - rate * x)


def inverse_gamma_log_prob(x, shape, scale):
    """Elementwise InverseGamma(shape, scale) log density."""
    if np.any(np.asarray(shape) <= 0) or np.any(np.asarray(scale) <= 0):
        raise ContractViolation("inverse-gamma: shape and scale must be positive")
    if not _is_node(x) and np.any(np.asarray(x) <= 0):
        raise ContractViolation("inverse-gamma: x must be positive")
    return (shape * np.log(scale) - special.gammaln(shape)
            - (shape + 1.0) * ad.log(x) - scale / x)


def categorical_log_prob(index, probs):
    """Log pmf of integer ``index`` (scalar or array) under ``probs``."""
    idx = np.asarray(index)
    if not np.issubdtype(idx.dtype, np.integer):
        raise ContractViolation("categorical: index must be integer")
    if not _is_node(probs):
        probs = np.asarray(probs, dtype=np.float64)
        _check_simplex(probs)
    k = ad.value(probs).shape[-1]
    if np.any(idx < 0) or np.any(idx >= k):
        raise ContractViolation(f"categorical: index out of range [0, {k})")
    with np.errstate(divide="ignore"):
        out = ad.take(ad.log(probs), idx.reshape(-1))
    if isinstance(out, np.ndarray):
        return float(out[0]) if idx.ndim == 0 else out.reshape(idx.shape)
    return out


# ---------------------------------------------------------------------------
# transforms


@dataclass(frozen=True)
class TransformSpec:
    """Declarative description of one constrained/unconstrained map.

    ``dimension`` is the constrained dimension (K for simplex kinds, 1 for
    log-positive); ``anchor`` only applies to anchored-softmax.
    """

    kind: str  # "stick-breaking-simplex" | "log-positive" | "anchored-softmax"
    dimension: int
    anchor: int | None = None

    def __post_init__(self):
        if self.kind not in ("stick-breaking-simplex", "log-positive",
                             "anchored-softmax"):
            raise ContractViolation(f"unknown transform kind {self.kind!r}")
        if self.kind == "anchored-softmax":
            if self.anchor is None or not 0 <= self.anchor < self.dimension:
                raise ContractViolation("anchored-softmax requires an anchor "
                                        "index inside the simplex dimension")

    @property
    def unconstrained_dim(self):
        return 1 if self.kind == "log-positive" else self.dimension - 1


def _stick_offsets(km1):
    # centers the map: the zero vector lands on the uniform simplex
    return -np.log(km1 - np.arange(km1, dtype=np.float64))


def stick_breaking_log(u):
    """Stick-breaking map in log space, batched over the last axis.

    Maps ``(n, K-1)`` unconstrained rows to ``(log x, log |J|)`` with
    ``x`` on the K-simplex; the offsets make 0 map to the uniform simplex.
    """
    shape = ad.value(u).shape
    km1 = shape[-1]
    flat = ad.reshape(u, (-1, km1))
    t = flat + _stick_offsets(km1)
    log_z = -ad.softplus(-t)        # log sigmoid(t)
    log_1mz = -ad.softplus(t)       # log (1 - sigmoid(t))
    cs = ad.cumsum(log_1mz, axis=-1)
    excl = cs - log_1mz             # log of the stick remaining before k
    head = log_z + excl
    last = ad.take(cs, np.array([km1 - 1]), axis=1)
    logx = ad.concat([head, last], axis=1)
    logjac = ad.sum(log_z + log_1mz + excl, axis=1)
    if len(shape) == 1:
        return ad.reshape(logx, (km1 + 1,)), ad.reshape(logjac, ())
    return ad.reshape(logx, shape[:-1] + (km1 + 1,)), \
        ad.reshape(logjac, shape[:-1])


def stick_breaking_forward(u):
    """Simplex value and log-Jacobian determinant of the stick-breaking map."""
    logx, logjac = stick_breaking_log(u)
    return ad.exp(logx), logjac


def stick_breaking_inverse(x):
    """Unconstrained coordinates of simplex rows ``x`` (numpy only)."""
    xv = np.asarray(x, dtype=np.float64)
    km1 = xv.shape[-1] - 1
    head = xv[..., :-1]
    remaining = 1.0 - (np.cumsum(head, axis=-1) - head)
    z = head / np.maximum(remaining, np.finfo(np.float64).tiny)
    z = np.clip(z, np.finfo(np.float64).tiny, 1.0 - 1e-16)
    return special.logit(z) - _stick_offsets(km1)


def anchored_softmax(u, anchor):
    """Simplex rows from K-1 logits with a zero pinned at ``anchor``.

    Deterministic reparameterization of the sampled reals, not a change of
    variables on the simplex, so no Jacobian is associated with it.
    """
    if _is_node(u):
        v = ad.value(u)
        if v.ndim != 2:
            raise ContractViolation("anchored-softmax on tape expects 2-d input")
        sel = _anchor_selector(v.shape[1] + 1, anchor)
        return ad.softmax(ad.matmul(u, sel), axis=-1)
    uv = np.asarray(u, dtype=np.float64)
    logits = np.insert(uv, anchor, 0.0, axis=-1)
    return ad.softmax(logits, axis=-1)


def _anchor_selector(k, anchor):
    """(K-1, K) matrix scattering free logits around a zero anchor column."""
    sel = np.zeros((k - 1, k))
    cols = [c for c in range(k) if c != anchor]
    sel[np.arange(k - 1), cols] = 1.0
    return sel


def log_positive_forward(u):
    return ad.exp(u), u


def log_positive_inverse(x):
    return ad.log(x)


def transform_forward(spec, u):
    """Constrained value and log-Jacobian for one unconstrained vector."""
    uv = np.asarray(ad.value(u), dtype=np.float64)
    if uv.reshape(-1).shape[0] != spec.unconstrained_dim:
        raise ContractViolation(
            f"{spec.kind}: expected {spec.unconstrained_dim} unconstrained "
            f"values, got {uv.reshape(-1).shape[0]}")
    if spec.kind == "stick-breaking-simplex":
        x, logjac = stick_breaking_forward(u)
        return x, logjac
    if spec.kind == "log-positive":
        x, logjac = log_positive_forward(u)
        return x, ad.sum(logjac)
    # anchored-softmax: reported log-Jacobian is 0 by convention
    return anchored_softmax(u, spec.anchor), 0.0


def transform_inverse(spec, x):
    """Unconstrained coordinates of one constrained value."""
    xv = np.asarray(ad.value(x), dtype=np.float64)
    if spec.kind == "stick-breaking-simplex":
        if xv.shape[-1] != spec.dimension:
            raise ContractViolation("stick-breaking: dimension mismatch")
        return stick_breaking_inverse(xv)
    if spec.kind == "log-positive":
        if np.any(xv <= 0):
            raise ContractViolation("log-positive: value must be positive")
        return np.log(xv)
    logits = np.log(np.maximum(xv, np.finfo(np.float64).tiny))
    logits = logits - logits[..., spec.anchor:spec.anchor + 1]
    return np.delete(logits, spec.anchor, axis=-1)
