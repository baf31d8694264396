"""Adversarial edge-flip poisoning of random-walk and spectral node embeddings."""

from .exceptions import (
    CapacityError,
    GraphPoisonError,
    ParseError,
    ResourceError,
    SolverError,
    StateError,
    UsageError,
    ValidationError,
)
from .graph import (
    CandidateSet,
    EdgeFlip,
    Graph,
    apply_flips,
    load_edge_list,
    load_labels,
    removal_candidates,
    sample_add_candidates,
)

__version__ = "0.1.0"
