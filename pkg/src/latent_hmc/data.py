"""Dataset containers: document-term matrices, covariates, survey panels.

All containers validate their invariants on construction and are treated as
immutable afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation


@dataclass
class DocumentTermMatrix:
    """Sparse D x V nonnegative integer counts, one entry per nonzero cell."""

    n_docs: int
    n_terms: int
    doc_ids: np.ndarray
    term_ids: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        self.doc_ids = np.asarray(self.doc_ids, dtype=np.int64)
        self.term_ids = np.asarray(self.term_ids, dtype=np.int64)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if not (self.doc_ids.shape == self.term_ids.shape == self.counts.shape):
            raise ContractViolation("dtm: entry arrays must align")
        if self.doc_ids.size:
            if self.doc_ids.min() < 0 or self.doc_ids.max() >= self.n_docs:
                raise ContractViolation("dtm: doc id out of range")
            if self.term_ids.min() < 0 or self.term_ids.max() >= self.n_terms:
                raise ContractViolation("dtm: term id out of range")
            if self.counts.min() < 1:
                raise ContractViolation("dtm: counts must be >= 1")
            cells = self.doc_ids * self.n_terms + self.term_ids
            if np.unique(cells).size != cells.size:
                raise ContractViolation("dtm: duplicate (doc, term) pair")

    @property
    def doc_totals(self):
        return np.bincount(self.doc_ids, weights=self.counts,
                           minlength=self.n_docs).astype(np.int64)

    @property
    def total_tokens(self):
        return int(self.counts.sum())

    def to_dense(self):
        x = np.zeros((self.n_docs, self.n_terms))
        x[self.doc_ids, self.term_ids] = self.counts
        return x

    @classmethod
    def from_dense(cls, x):
        x = np.asarray(x)
        d, t = np.nonzero(x)
        return cls(x.shape[0], x.shape[1], d, t, x[d, t])


@dataclass
class CovariateSet:
    """Per-document covariates and optional regression outcomes.

    ``topic`` enters topic-share regressions (used as given: include an
    explicit constant column for an intercept); ``outcome`` enters the
    outcome regression; ``outcomes`` holds y_d.
    """

    n_docs: int
    topic: np.ndarray | None = None
    outcome: np.ndarray | None = None
    outcomes: np.ndarray | None = None
    topic_names: list = field(default_factory=list)
    outcome_names: list = field(default_factory=list)

    def __post_init__(self):
        for label in ("topic", "outcome"):
            arr = getattr(self, label)
            if arr is None:
                continue
            arr = np.asarray(arr, dtype=np.float64)
            if arr.ndim == 1:
                arr = arr[:, None]
            if arr.shape[0] != self.n_docs:
                raise ContractViolation(
                    f"covariates: {label} rows {arr.shape[0]} != D {self.n_docs}")
            if not np.all(np.isfinite(arr)):
                raise ContractViolation(f"covariates: {label} has missing values")
            setattr(self, label, arr)
        if self.outcomes is not None:
            y = np.asarray(self.outcomes, dtype=np.float64).reshape(-1)
            if y.shape[0] != self.n_docs:
                raise ContractViolation("covariates: outcome length != D")
            if not np.all(np.isfinite(y)):
                raise ContractViolation("covariates: outcomes have missing values")
            self.outcomes = y


@dataclass
class SurveyPanel:
    """Ordinal survey responses grouped by period.

    ``responses[i, j]`` is respondent i's zero-based answer code to question
    j; ``periods[i]`` is the period the response belongs to.
    """

    n_periods: int
    n_categories: np.ndarray  # L_j per question
    periods: np.ndarray
    responses: np.ndarray

    def __post_init__(self):
        self.n_categories = np.asarray(self.n_categories, dtype=np.int64)
        self.periods = np.asarray(self.periods, dtype=np.int64)
        self.responses = np.asarray(self.responses, dtype=np.int64)
        if self.responses.ndim != 2:
            raise ContractViolation("survey: responses must be (N, J)")
        if self.periods.shape[0] != self.responses.shape[0]:
            raise ContractViolation("survey: periods and responses must align")
        if self.responses.shape[1] != self.n_categories.shape[0]:
            raise ContractViolation("survey: J mismatch with category counts")
        if self.periods.size == 0:
            raise ContractViolation("survey: empty panel")
        if self.periods.min() < 0 or self.periods.max() >= self.n_periods:
            raise ContractViolation("survey: period id out of range")
        present = np.bincount(self.periods, minlength=self.n_periods)
        if np.any(present == 0):
            raise ContractViolation("survey: every period must be nonempty")
        if np.any(self.responses < 0) or np.any(
                self.responses >= self.n_categories[None, :]):
            raise ContractViolation("survey: response code out of range")

    @property
    def n_questions(self):
        return int(self.n_categories.shape[0])

    @property
    def n_respondents(self):
        return int(self.responses.shape[0])
