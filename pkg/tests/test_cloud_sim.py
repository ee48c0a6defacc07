import hashlib
import io
from collections import Counter, defaultdict

import pytest

from psotrust import trust_core
from psotrust.cloud_sim import (
    EVENT_HEADER,
    Behavior,
    ClientProfile,
    Message,
    MessageKind,
    ServiceAgentState,
    SimConfig,
    WorldState,
    events_to_text,
    gather_recommendations,
    init_world,
    metrics_to_text,
    parse_metrics,
    read_events,
    run,
    tick,
)
from psotrust.errors import ConfigError, DomainError
from psotrust.trust_core import Provenance, TrustDatabase, TrustRecord
from psotrust.weights import Recommendation


def quiet(**overrides):
    """A config with no churn unless asked for."""
    base = dict(arrival_probability=0.0, departure_probability=0.0, ticks=1)
    base.update(overrides)
    return SimConfig(**base)


def put(world, provider_id, client_id, weight):
    world.providers[provider_id].trust_db.records[client_id] = TrustRecord(client_id, weight, 1, 0)


# -- types -----------------------------------------------------------------


def test_client_profile_invariants():
    assert ClientProfile.of("c", Behavior.HONEST).misbehavior_probability == 0.05
    assert ClientProfile.of("c", Behavior.MALICIOUS).misbehavior_probability == 0.9
    with pytest.raises(DomainError):
        ClientProfile("c", Behavior.HONEST, 0.7)
    with pytest.raises(DomainError):
        ClientProfile("c", Behavior.MALICIOUS, 0.2)


def test_agent_cannot_know_itself():
    with pytest.raises(DomainError):
        ServiceAgentState("p1", TrustDatabase("p1"), {"p1"})


def test_response_payload_must_come_from_sender():
    with pytest.raises(DomainError):
        Message(MessageKind.TRUST_RESPONSE, "p2", "p1", Recommendation("p3", 0.0, 0.0))
    Message(MessageKind.TRUST_RESPONSE, "p2", "p1", Recommendation("p2", 0.0, 0.0))


@pytest.mark.parametrize(
    "kwargs, key",
    [
        (dict(max_population=5, initial_clients=5, initial_providers=1), "max_population"),
        (dict(arrival_probability=1.5), "arrival_probability"),
        (dict(ticks=-1), "ticks"),
        (dict(threshold=2.0), "threshold"),
        (dict(acquaintances_per_provider=0), "acquaintances_per_provider"),
        (dict(seed=-3), "seed"),
    ],
)
def test_config_errors_name_the_key(kwargs, key):
    with pytest.raises(ConfigError) as err:
        SimConfig(**kwargs)
    assert err.value.key == key


# -- init_world ------------------------------------------------------------


def test_init_single_provider_has_no_acquaintances():
    world = init_world(quiet(initial_clients=0, initial_providers=1))
    assert len(world.providers) == 1 and not world.clients
    (agent,) = world.providers.values()
    assert agent.acquaintances == set()


def test_init_malicious_count_is_floored():
    world = init_world(quiet(initial_clients=10, initial_providers=5, malicious_fraction=0.2))
    kinds = Counter(c.behavior for c in world.clients.values())
    assert kinds[Behavior.MALICIOUS] == 2 and kinds[Behavior.HONEST] == 8


def test_init_acquaintances_distinct_and_bounded():
    world = init_world(quiet(initial_clients=0, initial_providers=6, acquaintances_per_provider=3))
    for pid, agent in world.providers.items():
        assert len(agent.acquaintances) == 3
        assert pid not in agent.acquaintances
        assert agent.acquaintances <= set(world.providers)
    few = init_world(quiet(initial_clients=0, initial_providers=3, acquaintances_per_provider=5))
    for pid, agent in few.providers.items():
        assert agent.acquaintances == set(few.providers) - {pid}


def test_init_deterministic():
    cfg = quiet(initial_clients=30, initial_providers=8, seed=77)
    a, b = init_world(cfg), init_world(cfg)
    assert a.clients == b.clients
    assert {k: v.acquaintances for k, v in a.providers.items()} == {k: v.acquaintances for k, v in b.providers.items()}


# -- gather_recommendations ------------------------------------------------


@pytest.fixture
def trio():
    """p00000 knows p00001 and p00002 and p00003; hand-set databases."""
    world = init_world(quiet(initial_clients=1, initial_providers=4, acquaintances_per_provider=3))
    assert world.providers["p00000"].acquaintances == {"p00001", "p00002", "p00003"}
    return world


def test_gather_nobody_knows(trio):
    assert gather_recommendations(trio, "p00000", "c00000") == []


def test_gather_single_informed_peer(trio):
    put(trio, "p00002", "c00000", 0.8)
    put(trio, "p00000", "p00002", 0.6)
    assert gather_recommendations(trio, "p00000", "c00000") == [Recommendation("p00002", 0.6, 0.8)]


def test_gather_three_peers_in_id_order(trio):
    put(trio, "p00003", "c00000", -0.5)
    put(trio, "p00001", "c00000", 0.25)
    put(trio, "p00002", "c00000", 1.0)
    put(trio, "p00000", "p00003", -0.2)
    assert gather_recommendations(trio, "p00000", "c00000") == [
        Recommendation("p00001", 0.0, 0.25),
        Recommendation("p00002", 0.0, 1.0),
        Recommendation("p00003", -0.2, -0.5),
    ]


def test_gather_skips_departed(trio):
    put(trio, "p00001", "c00000", 0.25)
    put(trio, "p00002", "c00000", 1.0)
    del trio.providers["p00001"]
    assert [r.recommender_id for r in gather_recommendations(trio, "p00000", "c00000")] == ["p00002"]


def test_gather_unknown_provider(trio):
    with pytest.raises(DomainError):
        gather_recommendations(trio, "p99999", "c00000")


# -- tick ------------------------------------------------------------------


def test_no_arrival_when_full():
    cfg = SimConfig(max_population=6, initial_clients=4, initial_providers=2, arrival_probability=1.0,
                    departure_probability=0.0, ticks=1)
    world = init_world(cfg)
    tick(world)
    assert world.population == 6
    assert not [e for e in world.log if e.event == "ARRIVE"]


def test_arrival_when_room():
    cfg = SimConfig(max_population=10, initial_clients=4, initial_providers=2, arrival_probability=1.0,
                    departure_probability=0.0, ticks=1)
    world = init_world(cfg)
    tick(world)
    assert world.population == 7
    assert [e.event for e in world.log].count("ARRIVE") == 1


def test_known_client_triggers_no_queries():
    world = init_world(quiet(initial_clients=1, initial_providers=4, acquaintances_per_provider=3))
    for pid in world.providers:
        put(world, pid, "c00000", 0.9)
    tick(world)
    assert world.metrics.trust_queries_sent == 0
    assert not [e for e in world.log if e.event == "QUERY"]
    (grant,) = [e for e in world.log if e.event == "GRANT"]
    assert "provenance=StoredRecord" in grant.detail


def test_lonely_provider_grants_neutral_default():
    world = init_world(quiet(initial_clients=1, initial_providers=1))
    tick(world)
    events = [e.event for e in world.log]
    assert events[:2] == ["REQUEST", "GRANT"]
    grant = world.log[1]
    assert grant.detail == "weight=0 provenance=NeutralDefault"
    assert world.metrics.decisions_by_provenance[Provenance.NEUTRAL_DEFAULT] == 1


def test_outcome_updates_provider_and_acquaintance_trust():
    # find a seed whose single request lands on p00000, the only provider with no opinion
    for seed in range(100):
        world = init_world(quiet(seed=seed, initial_clients=1, initial_providers=4, acquaintances_per_provider=3))
        for pid in ("p00001", "p00002", "p00003"):
            put(world, pid, "c00000", 0.7)
        tick(world)
        (request,) = [e for e in world.log if e.event == "REQUEST"]
        if request.counterparty == "p00000":
            break
    else:
        pytest.fail("no seed routed the request to p00000")
    db = world.providers["p00000"].trust_db
    (outcome,) = [e for e in world.log if e.event == "OUTCOME"]
    observed = float(outcome.detail.split()[0].removeprefix("observed="))
    assert db.records["c00000"].weight == observed
    assert [e.event for e in world.log].count("RESPONSE") == 3
    for aid in ("p00001", "p00002", "p00003"):
        # each responder reported 0.7, so it is scored by the sign of the observation
        assert db.records[aid].weight == observed


def test_every_request_answered_once_same_tick():
    metrics, log = run(SimConfig(ticks=40, seed=4))
    requests = defaultdict(int)
    answers = defaultdict(int)
    for e in log:
        if e.event == "REQUEST":
            requests[(e.tick, e.actor, e.counterparty)] += 1
        elif e.event in ("GRANT", "DENY"):
            answers[(e.tick, e.counterparty, e.actor)] += 1
    assert requests == answers
    assert all(v == 1 for v in answers.values())


def test_stored_record_requests_emit_no_queries():
    _, log = run(SimConfig(ticks=60, seed=5))
    by_tick = defaultdict(list)
    for e in log:
        by_tick[e.tick].append(e)
    for events in by_tick.values():
        queried = {(e.actor, e.detail.removeprefix("client=")) for e in events if e.event == "QUERY"}
        for e in events:
            if e.event in ("GRANT", "DENY") and "StoredRecord" in e.detail:
                assert (e.actor, e.counterparty) not in queried


def test_no_acquaintances_means_neutral_defaults():
    cfg = SimConfig(ticks=50, seed=6, initial_providers=1, initial_clients=20, arrival_probability=0.0,
                    departure_probability=0.0)
    metrics, log = run(cfg)
    assert metrics.trust_queries_sent == 0
    assert metrics.decisions_by_provenance[Provenance.PSO_AGGREGATION] == 0
    assert metrics.decisions_by_provenance[Provenance.SINGLE_RECOMMENDATION] == 0
    assert metrics.decisions_by_provenance[Provenance.NEUTRAL_DEFAULT] > 0


def test_no_acquaintance_edges_force_neutral_default_for_unknown_clients():
    world = init_world(SimConfig(ticks=100, seed=7, initial_providers=5, arrival_probability=0.0))
    for agent in world.providers.values():
        agent.acquaintances = set()
    for _ in range(100):
        tick(world)
    assert world.metrics.trust_queries_sent == 0
    provenances = {e.detail.split("provenance=")[1] for e in world.log if e.event in ("GRANT", "DENY")}
    assert provenances == {"StoredRecord", "NeutralDefault"}


# -- run -------------------------------------------------------------------


def test_zero_ticks():
    metrics, log = run(SimConfig(ticks=0))
    assert log == []
    assert metrics.evaluations == 0 and metrics.trust_queries_sent == 0
    assert metrics.true_positive_rate is None and metrics.false_positive_rate is None


def test_run_deterministic():
    cfg = SimConfig(ticks=80, seed=12)
    a = events_to_text(run(cfg)[1])
    b = events_to_text(run(cfg)[1])
    assert a == b
    c = events_to_text(run(SimConfig(ticks=80, seed=13))[1])
    assert a != c


def test_population_never_exceeds_cap():
    cfg = SimConfig(max_population=40, initial_clients=30, initial_providers=5, arrival_probability=1.0,
                    departure_probability=0.02, ticks=200, seed=3)
    metrics, _ = run(cfg)
    assert max(metrics.population_timeline) == 40
    assert len(metrics.population_timeline) == 200


def test_event_log_round_trip():
    _, log = run(SimConfig(ticks=30, seed=2))
    text = events_to_text(log)
    assert text.splitlines()[0] == ",".join(EVENT_HEADER)
    assert read_events(io.StringIO(text)) == log
    assert {e.event for e in log} <= {"ARRIVE", "DEPART", "REQUEST", "QUERY", "RESPONSE", "GRANT", "DENY", "OUTCOME"}


def test_metrics_text_round_trip():
    metrics, _ = run(SimConfig(ticks=30, seed=2))
    parsed = parse_metrics(metrics_to_text(metrics))
    assert parsed == metrics.summary()
    assert int(parsed["evaluations"]) == metrics.evaluations


def test_rates():
    metrics, _ = run(SimConfig(ticks=100, seed=1))
    tpr, fpr = metrics.true_positive_rate, metrics.false_positive_rate
    assert tpr == metrics.denials[Behavior.MALICIOUS] / metrics.evaluated(Behavior.MALICIOUS)
    assert fpr == metrics.denials[Behavior.HONEST] / metrics.evaluated(Behavior.HONEST)


def test_details_carry_nine_digits():
    _, log = run(SimConfig(ticks=40, seed=9))
    weights = [e.detail.split()[0].split("=")[1] for e in log if e.event in ("GRANT", "DENY")]
    long = [w for w in weights if len(w.lstrip("-0.")) > 6]
    assert long, "expected some non-round weights"
    assert all(len(w.lstrip("-0.").replace("e", "")) <= 13 for w in long)


@pytest.fixture(scope="module")
def default_run():
    return run(SimConfig())


def test_default_scenario_golden(default_run):
    # frozen after auditing sample ticks of this log by hand
    metrics, log = default_run
    summary = metrics.summary()
    assert {k: summary[k] for k in (
        "evaluations", "grants_honest", "grants_malicious", "denials_honest", "denials_malicious",
        "true_positive_rate", "false_positive_rate", "trust_queries_sent",
    )} == {
        "evaluations": "38500",
        "grants_honest": "19194",
        "grants_malicious": "1521",
        "denials_honest": "7696",
        "denials_malicious": "10089",
        "true_positive_rate": "0.868992248",
        "false_positive_rate": "0.286203049",
        "trust_queries_sent": "35733",
    }
    digest = hashlib.sha256(events_to_text(log).encode()).hexdigest()
    assert digest == "e920e74c27acab32c9b648e9df75cfea66823211606e0a28cc7709c1d8cae5d5"


def test_default_scenario_discriminates(default_run):
    metrics, _ = default_run
    assert metrics.true_positive_rate > metrics.false_positive_rate


@pytest.mark.xfail(
    strict=True,
    reason=(
        "Rescaling the impact-weighted mean against the collapsed swarm's own spread "
        "puts it on the far side of the cluster when impacts < 1, so unanimous positive "
        "reports come out negative; about 20% of all evaluations are PSO denials of honest clients."
    ),
)
def test_no_attacker_pso_denials_below_ten_percent():
    metrics, _ = run(SimConfig(malicious_fraction=0.0, threshold=0.0, ticks=500, seed=0))
    pso_denials = metrics.denials_by_provenance.get((Behavior.HONEST, Provenance.PSO_AGGREGATION), 0)
    assert pso_denials < 0.10 * metrics.evaluations
