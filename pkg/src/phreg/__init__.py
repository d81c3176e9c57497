"""Structure-preserving regularization of port-Hamiltonian descriptor systems
by proportional and derivative output feedback."""

from .analysis import (
    AnalysisReport,
    SolvabilityVerdict,
    analyze_pencil,
    check_con1,
    check_con1_1,
    check_con2,
    check_r1,
    finite_eig_count,
    is_completely_observable,
    max_derivative_rank,
    pencil_index,
    pencil_regular,
)
from .condense import (
    form_summary,
    q_pattern_residuals,
    reduce_deriv_staircase,
    reduce_eabc0,
    reduce_lemma3,
    refine_lemma4,
    schur_stage,
)
from .errors import *  # noqa: F401,F403
from .matops import DEFAULT_TOL, RankTolerance
from .regularize import (
    FeedbackSynthesis,
    VerificationReport,
    precompress_outputs,
    regularize_combined,
    regularize_derivative,
    regularize_derivative_with_rank,
    regularize_proportional,
    verify_closed_loop,
)
from .sysmodel import (
    DescriptorSystem,
    PHRealization,
    closed_loop,
    hamiltonian_of,
    random_ph_system,
    validate_ph,
)

__version__ = "0.1.0"
