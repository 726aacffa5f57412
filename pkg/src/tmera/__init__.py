"""tmera — time evolution of periodic spin chains with a multi-scale
entanglement renormalization ansatz.

The package simulates real- and imaginary-time dynamics of 1-D spin models
on periodic chains of L = 2**(ell+1) sites.  Two-site Trotter gates are
absorbed into the variational state by maximizing fidelity inside each
gate's causal cone; imaginary-time sweeps drive the state to the ground
state, whose energy can be compared against exact references (dense
diagonalization at small L, the free-fermion solution of the transverse
field Ising chain at any L).
"""

__version__ = "0.1.0"

from .tensor import (  # noqa: F401
    Tensor,
    Matricization,
    TensorError,
    LegMismatchError,
    contract,
    matricize,
    tensorize,
    svd,
    polar_decompose,
    herm_eig,
)
from .model import (  # noqa: F401
    TwoSiteTerm,
    GateSchedule,
    ising_terms,
    two_site_gate,
    trotter_schedule,
)
from .exact import (  # noqa: F401
    ed_ground_energy,
    ed_ground_state,
    free_fermion_energy,
    dense_tfim_hamiltonian,
)
from .state import (  # noqa: F401
    MeraGeometry,
    MeraState,
    init_product,
    random_state,
    validate,
    expand_dense,
    ti_promote,
)
from .checkpoint import checkpoint_save, checkpoint_load  # noqa: F401
from .cones import (  # noqa: F401
    CausalCone,
    cone_of,
    descend_rho,
    environment,
    cone_fidelity,
    flops_estimate,
)
from .update import (  # noqa: F401
    GateUpdateReport,
    UpdateError,
    UpdatePolicy,
    apply_gate,
    evolve,
    polish,
    sweep,
    ti_representative_bonds,
)
from .observables import expect_two_site, energy, measure, lambda_entropy  # noqa: F401
