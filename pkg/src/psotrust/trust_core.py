"""Per-provider trust records and the client admission flow.

A service agent answers a request by, in order: using its own stored weight
for the client; failing that, aggregating whatever its acquaintances report;
failing that, falling back to the neutral weight 0.  The resulting weight is
compared against a threshold to admit or refuse the client.
"""

from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from . import pso_engine
from .errors import DomainError, FormatError
from .pso_engine import PsoConfig
from .weights import NEUTRAL, Recommendation, trust_weight

__all__ = [
    "Recommendation",
    "TrustRecord",
    "TrustDatabase",
    "Verdict",
    "Provenance",
    "TrustDecision",
    "DEFAULT_THRESHOLD",
    "OUTCOME_RATE",
    "lookup",
    "decide",
    "evaluate_client",
    "record_outcome",
    "save_database",
    "load_database",
    "DB_HEADER",
]

DEFAULT_THRESHOLD = 0.0
# EMA weight given to the newest observation.
OUTCOME_RATE = 0.3
DB_HEADER = ("client_id", "weight", "interaction_count", "last_updated_tick")


class Verdict(enum.Enum):
    TRUSTED = "Trusted"
    UNTRUSTED = "Untrusted"


class Provenance(enum.Enum):
    STORED_RECORD = "StoredRecord"
    NEUTRAL_DEFAULT = "NeutralDefault"
    SINGLE_RECOMMENDATION = "SingleRecommendation"
    PSO_AGGREGATION = "PsoAggregation"


@dataclass(frozen=True)
class TrustRecord:
    client_id: str
    weight: float
    interaction_count: int
    last_updated_tick: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "weight", trust_weight(self.weight))
        if self.interaction_count < 1:
            raise DomainError(f"interaction_count must be >= 1, got {self.interaction_count}")
        if self.last_updated_tick < 0:
            raise DomainError(f"last_updated_tick must be >= 0, got {self.last_updated_tick}")


@dataclass
class TrustDatabase:
    """Trust records owned by exactly one service agent."""

    owner_id: str
    records: dict[str, TrustRecord] = field(default_factory=dict)

    def __contains__(self, client_id: str) -> bool:
        return client_id in self.records

    def __len__(self) -> int:
        return len(self.records)

    def weight(self, client_id: str, default: float = NEUTRAL) -> float:
        rec = self.records.get(client_id)
        return default if rec is None else rec.weight


@dataclass(frozen=True)
class TrustDecision:
    verdict: Verdict
    weight: float
    provenance: Provenance


def lookup(db: TrustDatabase, client_id: str) -> TrustRecord | None:
    return db.records.get(client_id)


def _check_threshold(threshold: float) -> float:
    try:
        return trust_weight(threshold)
    except DomainError:
        raise DomainError(f"threshold {threshold!r} outside [-1, 1]") from None


def decide(weight: float, threshold: float = DEFAULT_THRESHOLD) -> Verdict:
    """Trusted iff ``weight >= threshold`` (inclusive, so the neutral weight
    passes the default threshold)."""
    threshold = _check_threshold(threshold)
    return Verdict.TRUSTED if trust_weight(weight) >= threshold else Verdict.UNTRUSTED


def evaluate_client(
    db: TrustDatabase,
    client_id: str,
    recommendations: Sequence[Recommendation] | Callable[[], Sequence[Recommendation]],
    threshold: float = DEFAULT_THRESHOLD,
    pso_config: PsoConfig = PsoConfig(),
) -> TrustDecision:
    """Decide whether ``db``'s owner should serve ``client_id``.

    ``recommendations`` may be a ready sequence or a zero-argument callable;
    the callable is only invoked when the database has no record, which lets
    callers skip querying acquaintances altogether for known clients.
    """
    threshold = _check_threshold(threshold)
    stored = lookup(db, client_id)
    if stored is not None:
        return TrustDecision(decide(stored.weight, threshold), stored.weight, Provenance.STORED_RECORD)

    recs = list(recommendations() if callable(recommendations) else recommendations)
    if not recs:
        return TrustDecision(decide(NEUTRAL, threshold), NEUTRAL, Provenance.NEUTRAL_DEFAULT)

    result = pso_engine.aggregate(recs, pso_config)
    provenance = Provenance.SINGLE_RECOMMENDATION if len(recs) == 1 else Provenance.PSO_AGGREGATION
    weight = trust_weight(result.trust_weight)
    return TrustDecision(decide(weight, threshold), weight, provenance)


def record_outcome(db: TrustDatabase, client_id: str, observed: float, tick: int) -> TrustDatabase:
    """Fold an observed outcome into the owner's record for ``client_id``.

    The first observation becomes the weight outright; later ones move it by
    an exponential moving average.  ``db`` is updated in place and returned.
    """
    observed = trust_weight(observed)
    if tick < 0:
        raise DomainError(f"tick must be >= 0, got {tick}")
    old = db.records.get(client_id)
    if old is None:
        db.records[client_id] = TrustRecord(client_id, observed, 1, tick)
    else:
        weight = (1.0 - OUTCOME_RATE) * old.weight + OUTCOME_RATE * observed
        db.records[client_id] = TrustRecord(client_id, weight, old.interaction_count + 1, tick)
    return db


def _dump(db: TrustDatabase) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(DB_HEADER)
    for cid in sorted(db.records):
        rec = db.records[cid]
        # 17 significant digits round-trip any double exactly.
        writer.writerow([cid, f"{rec.weight:.17g}", rec.interaction_count, rec.last_updated_tick])
    return buf.getvalue()


def save_database(db: TrustDatabase, destination: str | Path) -> None:
    Path(destination).write_text(_dump(db), encoding="utf-8", newline="")


def _parse(text: str, owner_id: str) -> TrustDatabase:
    rows = csv.reader(io.StringIO(text))
    header = next(rows, None)
    if header is None or tuple(header) != DB_HEADER:
        raise FormatError(f"expected header {','.join(DB_HEADER)}", line=1)
    db = TrustDatabase(owner_id)
    for lineno, row in enumerate(rows, start=2):
        if not row:
            continue
        if len(row) != 4:
            raise FormatError(f"expected 4 fields, got {len(row)}", line=lineno)
        cid, w, count, tick = row
        if not cid:
            raise FormatError("empty client_id", line=lineno)
        if cid in db.records:
            raise FormatError(f"duplicate client_id {cid!r}", line=lineno)
        try:
            weight = float(w)
            count_i = int(count)
            tick_i = int(tick)
        except ValueError as exc:
            raise FormatError(str(exc), line=lineno) from None
        if not math.isfinite(weight) or not -1.0 <= weight <= 1.0:
            raise FormatError(f"weight {w} outside [-1, 1]", line=lineno)
        try:
            db.records[cid] = TrustRecord(cid, weight, count_i, tick_i)
        except DomainError as exc:
            raise FormatError(str(exc), line=lineno) from None
    return db


def load_database(source: str | Path, owner_id: str | None = None) -> TrustDatabase:
    """Read a database written by :func:`save_database`.

    The file carries no owner; it defaults to the file stem.
    """
    path = Path(source)
    return _parse(path.read_text(encoding="utf-8"), owner_id if owner_id is not None else path.stem)
