"""Headless open-world cloud simulator.

Clients send service requests to providers; a provider that does not know
the client asks its acquaintances, runs the admission flow, and either
serves or refuses.  Served clients then behave well or badly and the
provider records what it saw.  Agents come and go at random, but the
population never exceeds ``max_population``.

Each tick runs five phases in a fixed order, all drawing from one seeded
``random.Random``:

1. departures: every live agent, in id order, leaves with
   ``departure_probability``;
2. arrivals: with ``arrival_probability`` one candidate shows up and is
   admitted only if there is room;
3. requests: every live client, in id order, picks a provider uniformly;
4. evaluations: providers, in id order, work through their inboxes;
   acquaintance queries are answered within the same tick;
5. outcomes: each granted request is resolved by the client's misbehaviour
   draw and folded into the provider's database, along with a score for
   every acquaintance whose recommendation it used.
"""

from __future__ import annotations

import csv
import enum
import io
import logging
import math
import random
from dataclasses import dataclass, field, replace
from typing import Iterable

from . import trust_core
from .errors import ConfigError, DomainError
from .pso_engine import PsoConfig
from .trust_core import Provenance, TrustDatabase, Verdict
from .weights import Recommendation, fmt_real

logger = logging.getLogger(__name__)

HONEST_MISBEHAVIOR = 0.05
MALICIOUS_MISBEHAVIOR = 0.9

EVENT_HEADER = ("tick", "event", "actor", "counterparty", "detail")
EVENT_KINDS = frozenset({"ARRIVE", "DEPART", "REQUEST", "QUERY", "RESPONSE", "GRANT", "DENY", "OUTCOME"})


class Behavior(enum.Enum):
    HONEST = "Honest"
    MALICIOUS = "Malicious"


@dataclass(frozen=True)
class ClientProfile:
    client_id: str
    behavior: Behavior
    misbehavior_probability: float

    def __post_init__(self) -> None:
        p = self.misbehavior_probability
        if not 0.0 <= p <= 1.0:
            raise DomainError(f"misbehavior_probability {p} outside [0, 1]")
        if (self.behavior is Behavior.HONEST) != (p < 0.5):
            raise DomainError(f"{self.behavior.value} client with misbehavior_probability {p}")

    @classmethod
    def of(cls, client_id: str, behavior: Behavior) -> ClientProfile:
        p = HONEST_MISBEHAVIOR if behavior is Behavior.HONEST else MALICIOUS_MISBEHAVIOR
        return cls(client_id, behavior, p)


@dataclass
class ServiceAgentState:
    agent_id: str
    trust_db: TrustDatabase
    acquaintances: set[str] = field(default_factory=set)

    def __post_init__(self) -> None:
        if self.agent_id in self.acquaintances:
            raise DomainError(f"{self.agent_id} cannot be its own acquaintance")


class MessageKind(enum.Enum):
    SERVICE_REQUEST = "ServiceRequest"
    TRUST_QUERY = "TrustQuery"
    TRUST_RESPONSE = "TrustResponse"
    SERVICE_GRANT = "ServiceGrant"
    SERVICE_DENY = "ServiceDeny"


@dataclass(frozen=True)
class Message:
    kind: MessageKind
    sender: str
    recipient: str
    payload: str | Recommendation | None = None

    def __post_init__(self) -> None:
        if self.kind is MessageKind.TRUST_QUERY and not isinstance(self.payload, str):
            raise DomainError("TrustQuery carries the client id")
        if self.kind is MessageKind.TRUST_RESPONSE:
            if not isinstance(self.payload, Recommendation) or self.payload.recommender_id != self.sender:
                raise DomainError("TrustResponse must carry the sender's own Recommendation")


@dataclass(frozen=True)
class SimConfig:
    max_population: int = 150
    initial_clients: int = 50
    initial_providers: int = 10
    arrival_probability: float = 0.5
    departure_probability: float = 0.005
    malicious_fraction: float = 0.3
    acquaintances_per_provider: int = 3
    ticks: int = 500
    seed: int = 0
    threshold: float = trust_core.DEFAULT_THRESHOLD
    pso: PsoConfig = field(default_factory=PsoConfig)

    def __post_init__(self) -> None:
        def _int(name: str, lo: int) -> None:
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int) or v < lo:
                raise ConfigError(f"{name} must be an integer >= {lo}, got {v!r}", key=name)

        def _prob(name: str) -> None:
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and 0.0 <= v <= 1.0):
                raise ConfigError(f"{name} must be a real in [0, 1], got {v!r}", key=name)

        _int("max_population", 1)
        _int("initial_clients", 0)
        _int("initial_providers", 0)
        _int("acquaintances_per_provider", 1)
        _int("ticks", 0)
        for name in ("arrival_probability", "departure_probability", "malicious_fraction"):
            _prob(name)
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must be a 64-bit unsigned integer, got {self.seed!r}", key="seed")
        if not (isinstance(self.threshold, (int, float)) and -1.0 <= self.threshold <= 1.0):
            raise ConfigError(f"threshold must be a real in [-1, 1], got {self.threshold!r}", key="threshold")
        if self.initial_clients + self.initial_providers > self.max_population:
            raise ConfigError(
                "initial_clients + initial_providers exceeds max_population", key="max_population"
            )


@dataclass(frozen=True)
class Event:
    tick: int
    event: str
    actor: str
    counterparty: str = ""
    detail: str = ""

    def row(self) -> list[str]:
        return [str(self.tick), self.event, self.actor, self.counterparty, self.detail]


@dataclass
class SimMetrics:
    grants: dict[Behavior, int] = field(default_factory=lambda: {b: 0 for b in Behavior})
    denials: dict[Behavior, int] = field(default_factory=lambda: {b: 0 for b in Behavior})
    # denials split by how the weight was obtained, per behaviour class
    denials_by_provenance: dict[tuple[Behavior, Provenance], int] = field(default_factory=dict)
    decisions_by_provenance: dict[Provenance, int] = field(default_factory=lambda: {p: 0 for p in Provenance})
    trust_queries_sent: int = 0
    population_timeline: list[int] = field(default_factory=list)

    def evaluated(self, behavior: Behavior) -> int:
        return self.grants[behavior] + self.denials[behavior]

    @property
    def true_positive_rate(self) -> float | None:
        n = self.evaluated(Behavior.MALICIOUS)
        return self.denials[Behavior.MALICIOUS] / n if n else None

    @property
    def false_positive_rate(self) -> float | None:
        n = self.evaluated(Behavior.HONEST)
        return self.denials[Behavior.HONEST] / n if n else None

    @property
    def evaluations(self) -> int:
        return sum(self.evaluated(b) for b in Behavior)

    def summary(self) -> dict[str, str]:
        """Flat key/value view used for the ``key=value`` metrics file."""

        def rate(v: float | None) -> str:
            return "absent" if v is None else fmt_real(v)

        out = {
            "evaluations": str(self.evaluations),
            "grants_honest": str(self.grants[Behavior.HONEST]),
            "grants_malicious": str(self.grants[Behavior.MALICIOUS]),
            "denials_honest": str(self.denials[Behavior.HONEST]),
            "denials_malicious": str(self.denials[Behavior.MALICIOUS]),
            "true_positive_rate": rate(self.true_positive_rate),
            "false_positive_rate": rate(self.false_positive_rate),
            "trust_queries_sent": str(self.trust_queries_sent),
        }
        for prov in Provenance:
            out[f"decisions_{prov.value}"] = str(self.decisions_by_provenance[prov])
        out["population_max"] = str(max(self.population_timeline, default=0))
        out["population_timeline"] = " ".join(map(str, self.population_timeline))
        return out


@dataclass
class WorldState:
    config: SimConfig
    rng: random.Random
    clients: dict[str, ClientProfile] = field(default_factory=dict)
    providers: dict[str, ServiceAgentState] = field(default_factory=dict)
    tick: int = 0
    log: list[Event] = field(default_factory=list)
    metrics: SimMetrics = field(default_factory=SimMetrics)
    next_client: int = 0
    next_provider: int = 0

    @property
    def population(self) -> int:
        return len(self.clients) + len(self.providers)

    def emit(self, event: str, actor: str, counterparty: str = "", detail: str = "") -> None:
        self.log.append(Event(self.tick, event, actor, counterparty, detail))


# Ids are zero-padded so that string order equals creation order.
def _client_id(n: int) -> str:
    return f"c{n:05d}"


def _provider_id(n: int) -> str:
    return f"p{n:05d}"


def _wire(world: WorldState, agent_id: str) -> set[str]:
    others = sorted(pid for pid in world.providers if pid != agent_id)
    k = min(world.config.acquaintances_per_provider, len(others))
    return set(world.rng.sample(others, k))


def _add_provider(world: WorldState) -> ServiceAgentState:
    pid = _provider_id(world.next_provider)
    world.next_provider += 1
    agent = ServiceAgentState(pid, TrustDatabase(pid))
    agent.acquaintances = _wire(world, pid)
    world.providers[pid] = agent
    return agent


def _add_client(world: WorldState, behavior: Behavior) -> ClientProfile:
    cid = _client_id(world.next_client)
    world.next_client += 1
    profile = ClientProfile.of(cid, behavior)
    world.clients[cid] = profile
    return profile


def init_world(config: SimConfig) -> WorldState:
    """Populate a fresh world.

    ``floor(initial_clients * malicious_fraction)`` clients are malicious,
    chosen by a seeded draw.  Providers are created first, then each is wired
    to ``acquaintances_per_provider`` distinct other providers (all of them
    when fewer exist).
    """
    if not isinstance(config, SimConfig):
        raise ConfigError("init_world expects a SimConfig")
    world = WorldState(config, random.Random(config.seed))
    n_bad = math.floor(config.initial_clients * config.malicious_fraction)
    bad = set(world.rng.sample(range(config.initial_clients), n_bad))
    for i in range(config.initial_clients):
        _add_client(world, Behavior.MALICIOUS if i in bad else Behavior.HONEST)
    for _ in range(config.initial_providers):
        pid = _provider_id(world.next_provider)
        world.next_provider += 1
        world.providers[pid] = ServiceAgentState(pid, TrustDatabase(pid))
    for pid in sorted(world.providers):
        world.providers[pid].acquaintances = _wire(world, pid)
    return world


def gather_recommendations(world: WorldState, provider_id: str, client_id: str) -> list[Recommendation]:
    """What ``provider_id``'s acquaintances can say about ``client_id``.

    Only acquaintances still in the world and holding a record for the
    client answer.  Each answer is weighted by the asker's own trust in the
    answering acquaintance (neutral when it has none).
    """
    asker = world.providers.get(provider_id)
    if asker is None:
        raise DomainError(f"unknown provider {provider_id!r}")
    recs = []
    for aid in sorted(asker.acquaintances):
        peer = world.providers.get(aid)
        if peer is None:
            continue
        rec = trust_core.lookup(peer.trust_db, client_id)
        if rec is None:
            continue
        recs.append(Recommendation(aid, asker.trust_db.weight(aid), rec.weight))
    return recs


@dataclass
class _Grant:
    provider_id: str
    client_id: str
    recommendations: list[Recommendation]


def _departures(world: WorldState) -> None:
    p = world.config.departure_probability
    agents = sorted([*world.clients, *world.providers])
    for aid in agents:
        if world.rng.random() < p:
            if aid in world.clients:
                del world.clients[aid]
                world.emit("DEPART", aid, detail="client")
            else:
                del world.providers[aid]
                world.emit("DEPART", aid, detail="provider")


def _arrivals(world: WorldState) -> None:
    cfg = world.config
    if world.rng.random() >= cfg.arrival_probability:
        return
    if world.population >= cfg.max_population:
        return
    initial = cfg.initial_clients + cfg.initial_providers
    provider_share = cfg.initial_providers / initial if initial else 0.0
    if world.rng.random() < provider_share:
        agent = _add_provider(world)
        world.emit("ARRIVE", agent.agent_id, detail="provider")
    else:
        malicious = world.rng.random() < cfg.malicious_fraction
        profile = _add_client(world, Behavior.MALICIOUS if malicious else Behavior.HONEST)
        world.emit("ARRIVE", profile.client_id, detail=f"client:{profile.behavior.value}")


def _requests(world: WorldState) -> dict[str, list[Message]]:
    inboxes: dict[str, list[Message]] = {pid: [] for pid in world.providers}
    targets = sorted(world.providers)
    if not targets:
        return inboxes
    for cid in sorted(world.clients):
        pid = world.rng.choice(targets)
        inboxes[pid].append(Message(MessageKind.SERVICE_REQUEST, cid, pid))
        world.emit("REQUEST", cid, pid)
    return inboxes


def _query_acquaintances(world: WorldState, provider_id: str, client_id: str) -> list[Recommendation]:
    asker = world.providers[provider_id]
    for aid in sorted(asker.acquaintances):
        world.metrics.trust_queries_sent += 1
        world.emit("QUERY", provider_id, aid, f"client={client_id}")
    replies = [
        Message(MessageKind.TRUST_RESPONSE, rec.recommender_id, provider_id, rec)
        for rec in gather_recommendations(world, provider_id, client_id)
    ]
    for msg in replies:
        rec = msg.payload
        world.emit(
            "RESPONSE",
            msg.sender,
            provider_id,
            f"client={client_id} value={fmt_real(rec.reported_value)} "
            f"recommender_trust={fmt_real(rec.recommender_trust)}",
        )
    return [msg.payload for msg in replies]


def _evaluations(world: WorldState, inboxes: dict[str, list[Message]]) -> list[_Grant]:
    cfg = world.config
    m = world.metrics
    grants: list[_Grant] = []
    for pid in sorted(inboxes):
        agent = world.providers[pid]
        for msg in inboxes[pid]:
            cid = msg.sender
            recs: list[Recommendation] = []
            pso_cfg = cfg.pso
            if trust_core.lookup(agent.trust_db, cid) is None:
                recs = _query_acquaintances(world, pid, cid)
                # drawn only when a swarm will run
                if len(recs) >= 2:
                    pso_cfg = replace(cfg.pso, seed=world.rng.getrandbits(64))
            decision = trust_core.evaluate_client(agent.trust_db, cid, recs, cfg.threshold, pso_cfg)

            behavior = world.clients[cid].behavior
            m.decisions_by_provenance[decision.provenance] += 1
            detail = f"weight={fmt_real(decision.weight)} provenance={decision.provenance.value}"
            if decision.verdict is Verdict.TRUSTED:
                m.grants[behavior] += 1
                world.emit("GRANT", pid, cid, detail)
                grants.append(_Grant(pid, cid, recs))
            else:
                m.denials[behavior] += 1
                key = (behavior, decision.provenance)
                m.denials_by_provenance[key] = m.denials_by_provenance.get(key, 0) + 1
                world.emit("DENY", pid, cid, detail)
    return grants


def _outcomes(world: WorldState, grants: Iterable[_Grant]) -> None:
    for g in grants:
        profile = world.clients[g.client_id]
        observed = -1.0 if world.rng.random() < profile.misbehavior_probability else 1.0
        db = world.providers[g.provider_id].trust_db
        trust_core.record_outcome(db, g.client_id, observed, world.tick)
        world.emit(
            "OUTCOME",
            g.provider_id,
            g.client_id,
            f"observed={fmt_real(observed)} weight={fmt_real(db.weight(g.client_id))}",
        )
        # Acquaintances are scored on whether their report pointed the right way.
        for rec in g.recommendations:
            score = 1.0 if rec.reported_value * observed > 0 else -1.0
            trust_core.record_outcome(db, rec.recommender_id, score, world.tick)


def tick(world: WorldState) -> WorldState:
    """Run one tick in place and return ``world``."""
    _departures(world)
    _arrivals(world)
    inboxes = _requests(world)
    grants = _evaluations(world, inboxes)
    _outcomes(world, grants)
    world.metrics.population_timeline.append(world.population)
    world.tick += 1
    return world


def run(config: SimConfig) -> tuple[SimMetrics, list[Event]]:
    world = init_world(config)
    for _ in range(config.ticks):
        tick(world)
    logger.debug("simulation finished after %d ticks, %d events", world.tick, len(world.log))
    return world.metrics, world.log


def write_events(events: Iterable[Event], stream) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(EVENT_HEADER)
    for ev in events:
        writer.writerow(ev.row())


def events_to_text(events: Iterable[Event]) -> str:
    buf = io.StringIO()
    write_events(events, buf)
    return buf.getvalue()


def read_events(stream) -> list[Event]:
    rows = csv.reader(stream)
    header = next(rows, None)
    if header is None or tuple(header) != EVENT_HEADER:
        raise DomainError("event log header mismatch")
    events = []
    for row in rows:
        tick_s, kind, actor, counterparty, detail = row
        if kind not in EVENT_KINDS:
            raise DomainError(f"unknown event kind {kind!r}")
        events.append(Event(int(tick_s), kind, actor, counterparty, detail))
    return events


def metrics_to_text(metrics: SimMetrics) -> str:
    return "".join(f"{k}={v}\n" for k, v in metrics.summary().items())


def parse_metrics(text: str) -> dict[str, str]:
    out = {}
    for line in text.splitlines():
        if line:
            key, _, value = line.partition("=")
            out[key] = value
    return out
