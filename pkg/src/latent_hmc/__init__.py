"""NUTS/HMC inference for latent-variable models of categorical data.

Subpackages:
    autodiff      reverse-mode AD tape over dense float64 arrays
    distributions log-density kernels and constrained/unconstrained transforms
    models        differentiable log-joints for lda / stm / dsr / slda / sslda
    samplers      NUTS with warmup adaptation, Langevin baseline, chain runner
    gibbs         collapsed Gibbs sampler for plain LDA
    diagnostics   ESS, split R-hat, credible intervals, topic matching, bootstrap
    simgen        synthetic-data generators with recorded ground truth
    dataio        CSV/JSON file formats for datasets, samples, reports, manifests
    cli           command-line pipelines (simulate / fit / diagnose / compare / study)
"""

__version__ = "0.1.0"
