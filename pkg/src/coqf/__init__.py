"""Connection-oriented quadratic funding: allocation rules and equilibrium simulation."""

from .allocation import (
    AllocationResult,
    Mechanism,
    ProjectAllocation,
    RoundConfig,
    allocate_round,
    coqf_subsidy,
    coqf_v1_subsidy,
    coqv_tally,
    hybrid_subsidy,
    qf_subsidy,
)
from .grouping import (
    GroupAssignment,
    groups_from_file,
    projects_as_groups,
    signature_groups,
    singleton_groups,
)
from .ledger import DonationLedger

__version__ = "0.1.0"

__all__ = [
    "AllocationResult", "DonationLedger", "GroupAssignment", "Mechanism", "ProjectAllocation",
    "RoundConfig", "allocate_round", "coqf_subsidy", "coqf_v1_subsidy", "coqv_tally",
    "groups_from_file", "hybrid_subsidy", "projects_as_groups", "qf_subsidy", "signature_groups", "singleton_groups",
]
