"""Greedy zero-forcing beamforming laboratory.

Analytic and Monte Carlo engines for a multiantenna downlink that
schedules at most two single-antenna users by greedy selection and
allocates power by water-filling under a long-term power budget.
"""

__version__ = "0.1.0"

from .analytic import (
    GainTriple,
    PdfParams,
    dominated_user_mass,
    expected_sum_rate,
    joint_pdf,
    pdf_normalization,
    scheduling_region_integral,
    solve_cutoff,
    unordered_pdf,
)
from .channel import (
    BeamformerSet,
    ChannelMatrix,
    LQFactors,
    build_beamformers,
    draw_channel_matrix,
    lq_decompose,
    projection_residual_sq,
)
from .errors import (
    BracketingError,
    ConfigError,
    DecompositionError,
    DimensionError,
    DomainError,
    NonConvergenceError,
    ZfbfLabError,
)
from .mathkit import (
    IntegrationSpec,
    RngStream,
    find_root,
    gamma_fn,
    integrate_1d,
    sample_complex_gaussian_vector,
    upper_incomplete_gamma,
)
from .scheduler import (
    CutoffValue,
    ScheduleOutcome,
    greedy_select,
    rate_one_user,
    rate_two_users,
    waterfill_power,
)

from .harness import (  # noqa: E402 (harness imports __version__ from here)
    HistogramGrid,
    MonteCarloStats,
    RunConfig,
    SweepResult,
    SweepRow,
    cutoff_sweep,
    empirical_cutoff,
    pdf_validate,
    run_monte_carlo,
    sum_rate_sweep,
)
from .zfdp import ZfdpOutcome, zfdp_empirical_cutoff, zfdp_select
