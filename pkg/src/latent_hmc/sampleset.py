"""Posterior draws organized as chains x draws x named parameters."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation


@dataclass
class SampleSet:
    """Named constrained-space draws plus run metadata.

    Each parameter array has shape ``(chains, draws) + parameter_shape``.
    """

    params: dict
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        shapes = {name: np.asarray(a).shape[:2] for name, a in self.params.items()}
        if len(set(shapes.values())) > 1:
            raise ContractViolation(f"sample set is ragged: {shapes}")

    @property
    def n_chains(self):
        return next(iter(self.params.values())).shape[0]

    @property
    def n_draws(self):
        return next(iter(self.params.values())).shape[1]

    def param_shape(self, name):
        return self.params[name].shape[2:]

    def scalar_names(self):
        """(name, flat_index) pairs for every scalar component in order."""
        for name in self.params:
            size = int(np.prod(self.param_shape(name), dtype=np.int64))
            for idx in range(max(size, 1)):
                yield name, idx

    def scalar(self, name, idx):
        """Draws of one scalar component, shape (chains, draws)."""
        arr = self.params[name]
        flat = arr.reshape(arr.shape[0], arr.shape[1], -1)
        return flat[:, :, idx]

    def mean(self, name):
        """Posterior mean over all chains and draws."""
        return self.params[name].mean(axis=(0, 1))
