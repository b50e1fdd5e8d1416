"""Exact engine for finite deterministic bridge-interface POMDPs."""

from .core import (
    BridgePomdp,
    BudgetExceeded,
    LatentSpace,
    ModelError,
    Policy,
    PolicyUndefined,
    Quotient,
    Trajectory,
    UnrealizableHistory,
    enumerate_closed_loop,
    prefix_fiber,
    rollout,
    transcript_fiber,
    transcript_partition,
)
from .gap import (
    ObjectiveTable,
    absorption_report,
    authority_report,
    blackwell_refines,
    bridge_gap_report,
    di_budget_check,
    missing_sensing_bits,
    oscillation,
    quotient_from_targets,
    regret_transfer_check,
    sandwich_check,
)
from .info import (
    JointTable,
    channel_capacity,
    cond_entropy,
    directed_information,
    empowerment_det,
    entropy,
    information_gain,
    mutual_info,
    posterior_latent,
    reach_set,
)
from .planner import BgpWeights, Factor, Planner, bgp_potential, evaluate_policy, plan_exact, relevance_gate
from .specfile import dump_spec, load_spec, parse_spec
