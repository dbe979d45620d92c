"""Variational truncation of uniform matrix product states.

The package provides the tangent-space optimization loop for
approximating a uniform MPS (optionally with an MPO applied) at a smaller
bond dimension, the local Schmidt-truncation baselines, uniform-MPS gauge
and transfer-matrix machinery, and the model builders and oracles used by
the command-line experiments.
"""

from .baseline import MemoryGuardError, mpo_mps_local_truncate, schmidt_truncate
from .io import load_mpo, load_state, save_mpo, save_state
from .tensor import (
    EigResult,
    LinearMap,
    contract,
    leading_eig,
    polar_left,
    polar_right,
    qr_positive,
    svd,
)
from .truncation import (
    CenterPair,
    PowerStop,
    TruncationReport,
    VompsConfig,
    compute_centers,
    epsilon_measure,
    error_epsilon,
    extract_gauges,
    grow_bond,
    power_method,
    vomps_truncate,
)
from .umps import (
    MPO,
    MixedEnvironment,
    OrthogonalStatesError,
    UniformMPS,
    environments,
    expect_local,
    fidelity_per_site,
    identity_mpo,
    left_orthonormalize,
    mixed_canonical,
    mixed_transfer_map,
    mpo_eigenvalue_per_site,
    random_uniform_mps,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
