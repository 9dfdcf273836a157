"""Isotonic Mechanism: truthful elicitation of rankings via isotonic regression."""

from isomech.errors import (
    ConfigurationError,
    DimensionError,
    DomainError,
    IsomechError,
    OrderingError,
    ParameterError,
    SimulationError,
    StructureError,
)
from isomech.isotonic import (
    Ranking,
    apply_permutation,
    bregman_project,
    minmax_oracle,
    pava_descending,
    project_complement_isotonic,
    project_with_ranking,
)
from isomech.majorization import (
    TransportChain,
    is_upward_transport,
    majorizes,
    majorizes_natural_order,
    transport_decompose,
    weakly_majorizes,
)
from isomech.mechanisms import (
    CoarseRanking,
    OwnerGroups,
    OwnershipMatrix,
    build_coarse_permutation,
    coarse_isotonic_mechanism,
    isotonic_mechanism,
    line_mechanism,
    local_ranking_mechanism,
    owner_partition,
)
from isomech.utilities import UtilitySpec

__version__ = "0.1.0"

__all__ = [
    "CoarseRanking",
    "ConfigurationError",
    "DimensionError",
    "DomainError",
    "IsomechError",
    "OrderingError",
    "OwnerGroups",
    "OwnershipMatrix",
    "ParameterError",
    "Ranking",
    "SimulationError",
    "StructureError",
    "TransportChain",
    "UtilitySpec",
    "apply_permutation",
    "bregman_project",
    "build_coarse_permutation",
    "coarse_isotonic_mechanism",
    "is_upward_transport",
    "isotonic_mechanism",
    "line_mechanism",
    "local_ranking_mechanism",
    "majorizes",
    "majorizes_natural_order",
    "minmax_oracle",
    "owner_partition",
    "pava_descending",
    "project_complement_isotonic",
    "project_with_ranking",
    "transport_decompose",
    "weakly_majorizes",
]
