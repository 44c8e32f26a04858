"""ADMM for constrained block circulant QPs and block circulant MPC."""
from .admm import (BaselineAdmm, CirculantAdmm, SolveResult, SolverConfig, flop_model, lockstep,
                   prefactor_baseline, prefactor_modal, solve_baseline, solve_circulant)
from .circulant import (BlockCirculant, ModalBlocks, SegmentedVector, TransformPlan, augment,
                        forward_transform, fourier_matrix, inverse_transform, modal_blocks, to_dense,
                        truncate)
from .mpc import (MpcProblem, closed_loop_step, condense, decompose_mpc, ring_of_masses,
                  solve_dare_modal)
from .qp import (Cbcqp, KktResiduals, ModalQp, kkt_residuals, objective_value, random_cbcqp,
                 transform_qp, validate_cbcqp)

__version__ = "0.1.0"

__all__ = [
    "BaselineAdmm", "CirculantAdmm", "SolveResult", "SolverConfig", "flop_model", "lockstep",
    "prefactor_baseline", "prefactor_modal", "solve_baseline", "solve_circulant",
    "BlockCirculant", "ModalBlocks", "SegmentedVector", "TransformPlan", "augment",
    "forward_transform", "fourier_matrix", "inverse_transform", "modal_blocks", "to_dense",
    "truncate", "MpcProblem", "closed_loop_step", "condense", "decompose_mpc", "ring_of_masses",
    "solve_dare_modal", "Cbcqp", "KktResiduals", "ModalQp", "kkt_residuals", "objective_value",
    "random_cbcqp", "transform_qp", "validate_cbcqp",
]
