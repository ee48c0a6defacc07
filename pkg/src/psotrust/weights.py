"""Trust weights and recommendation tuples.

A trust weight is a plain ``float`` in [-1, 1]: -1 untrustworthy, 0 neutral
or unknown, 1 fully trusted.  ``trust_weight`` is the single validating
constructor; everything that stores a weight goes through it.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import DomainError

NEUTRAL = 0.0


def trust_weight(value: float) -> float:
    """Validate ``value`` as a trust weight and return it as a float."""
    value = float(value)
    # NaN fails both comparisons
    if not -1.0 <= value <= 1.0:
        raise DomainError(f"trust weight {value!r} outside [-1, 1]")
    return value


def clamp_unit(value: float) -> float:
    """Clamp a finite real into [-1, 1]."""
    return min(1.0, max(-1.0, value))


def fmt_real(value: float) -> str:
    """Render a real with 9 significant digits, the precision used by every
    text format this package writes."""
    return f"{value:.9g}"


@dataclass(frozen=True, slots=True)
class Recommendation:
    """One acquaintance's answer about a client.

    ``recommender_trust`` is how much the asking agent trusts the
    recommender; ``reported_value`` is the recommender's own weight for the
    client.
    """

    recommender_id: str
    recommender_trust: float
    reported_value: float

    def __post_init__(self) -> None:
        if not self.recommender_id:
            raise DomainError("recommender_id must be non-empty")
        if not -1.0 <= self.recommender_trust <= 1.0:
            raise DomainError(f"recommender_trust {self.recommender_trust!r} outside [-1, 1]")
        if not -1.0 <= self.reported_value <= 1.0:
            raise DomainError(f"reported_value {self.reported_value!r} outside [-1, 1]")
