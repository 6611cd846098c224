"""wflab: a numerical lab for travelling-wave stability of bistable
reaction-diffusion equations driven by rough additive noise.

Subpackages follow the pipeline: noise generation (:mod:`wflab.noise`),
path regularity and tail statistics (:mod:`wflab.holder`), periodic spectral
operators (:mod:`wflab.operators`), pathwise stochastic convolution
(:mod:`wflab.youngconv`), the bistable front and its spectral gap
(:mod:`wflab.wave`), the mild-solution solver with phase tracking
(:mod:`wflab.solver`), and the Monte Carlo study harness
(:mod:`wflab.harness`).
"""

__version__ = "0.1.0"

from .noise import (
    FieldPath,
    ScalarPath,
    StableSpec,
    sample_fbm,
    sample_field_noise,
    sample_lfsm,
    sample_stable_increments,
)

__all__ = [
    "FieldPath",
    "ScalarPath",
    "StableSpec",
    "sample_fbm",
    "sample_field_noise",
    "sample_lfsm",
    "sample_stable_increments",
    "__version__",
]
