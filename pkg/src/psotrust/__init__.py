"""Particle-swarm trust aggregation for admitting unknown cloud clients,
with an open-world provider/client simulator around it."""

from .errors import ConfigError, DomainError, EmptyInputError, EmptySwarmError, FormatError, PsoTrustError
from .pso_engine import AggregationResult, Point2, PsoConfig, aggregate, impact_factor
from .trust_core import Provenance, TrustDatabase, TrustDecision, TrustRecord, Verdict, evaluate_client
from .weights import Recommendation, trust_weight

__version__ = "0.1.0"

__all__ = [
    "AggregationResult",
    "ConfigError",
    "DomainError",
    "EmptyInputError",
    "EmptySwarmError",
    "FormatError",
    "Point2",
    "Provenance",
    "PsoConfig",
    "PsoTrustError",
    "Recommendation",
    "TrustDatabase",
    "TrustDecision",
    "TrustRecord",
    "Verdict",
    "aggregate",
    "evaluate_client",
    "impact_factor",
    "trust_weight",
]
