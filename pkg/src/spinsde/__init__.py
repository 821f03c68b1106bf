"""Weighted stochastic-trajectory simulation of N-qubit spin dynamics.

An N-qubit system with one-qubit fields B(t) and two-qubit couplings J(t)
is simulated as an ensemble of weighted classical trajectories in the
product of per-qubit R^3 phase spaces. Expectation values are recovered
with a ratio estimator over singular observable kernels. Exact dense
solvers (von Neumann and the equivalent Bloch-coefficient ODE) provide
the ground truth, and the verifier module proves, by direct computation,
that the stochastic generator matches the quantum one.
"""

from .algebra import Schedule, SystemSpec, PairCoupling
from .spinops import build_spin_ops, DimensionLimitError, DENSE_CAP
from .reference import (
    build_hamiltonian,
    density_from_bloch,
    bloch_from_density,
    check_density,
    product_state_bloch,
    singlet_bloch,
    evolve_von_neumann,
    quantum_generator,
    evolve_bloch,
    multi_indices,
)
from .phasespace import (
    PhaseDensity,
    density_from_bloch_poly,
    eval_density,
    eval_partials,
    kernel,
    Ensemble,
    sample_initial,
    estimate,
    EnsembleStats,
    NormalizationCollapseError,
    observable_name,
    parse_observable,
    default_observables,
)
from .engine import (
    RunConfig,
    RunResult,
    ResetEvent,
    drift,
    weight_rate,
    step,
    reset,
    run,
    estimate_bloch_tensor,
)
from .verify import (
    fp_apply,
    verify_generator,
    verify_divergence,
    verify_weak_step,
    GeneratorReport,
)

__version__ = "0.1.0"

__all__ = [
    "Schedule", "SystemSpec", "PairCoupling",
    "build_spin_ops", "DimensionLimitError", "DENSE_CAP",
    "build_hamiltonian", "density_from_bloch", "bloch_from_density",
    "check_density", "product_state_bloch", "singlet_bloch",
    "evolve_von_neumann", "quantum_generator", "evolve_bloch", "multi_indices",
    "PhaseDensity", "density_from_bloch_poly", "eval_density", "eval_partials",
    "kernel", "Ensemble", "sample_initial", "estimate", "EnsembleStats",
    "NormalizationCollapseError", "observable_name", "parse_observable",
    "default_observables",
    "RunConfig", "RunResult", "ResetEvent", "drift", "weight_rate",
    "step", "reset", "run", "estimate_bloch_tensor",
    "fp_apply", "verify_generator", "verify_divergence", "verify_weak_step",
    "GeneratorReport",
    "__version__",
]
