"""Particle-swarm aggregation of acquaintance recommendations.

Every recommendation becomes one particle in the plane spanned by the
recommender's trust (``t``) and the value it reported (``r``).  The swarm is
pulled toward an impact-weighted mean of its own positions; once it has
collapsed, that mean is rescaled against the particle spread and its ``r``
coordinate is the aggregated trust weight.

All randomness comes from a single PCG64 stream seeded with ``config.seed``,
consumed in a fixed order: particles by ascending index, coordinate ``t``
before ``r``, and ``r1`` before ``r2`` within a coordinate.  Identical inputs
and seed therefore give bit-identical results and traces.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, NamedTuple, Protocol, Sequence

import numpy as np

from .errors import DomainError, EmptyInputError, EmptySwarmError, FormatError
from .weights import Recommendation, clamp_unit, fmt_real, trust_weight

__all__ = [
    "Point2",
    "Particle",
    "PsoConfig",
    "SwarmState",
    "Snapshot",
    "AggregationResult",
    "impact_factor",
    "fitness",
    "weighted_global_best",
    "step",
    "normalize_global_best",
    "init_swarm",
    "make_rng",
    "aggregate",
    "TRACE_HEADER",
    "trace_rows",
    "write_trace",
]


class Point2(NamedTuple):
    t: float
    r: float


class UniformSource(Protocol):
    def random(self, size) -> np.ndarray: ...


@dataclass(frozen=True)
class Particle:
    """Read-only view of one row of a :class:`SwarmState`."""

    id: int
    position: Point2
    velocity: Point2
    personal_best_position: Point2
    personal_best_fitness: float
    impact: float


@dataclass(frozen=True)
class PsoConfig:
    """Swarm parameters.

    ``c1`` (nostalgia) pulls a particle toward its personal best, ``c2``
    (envy) toward the global best; envy is kept slightly larger so the swarm
    gathers quickly.

    ``inertia`` multiplies the previous velocity.  With ``inertia=1.0`` and
    ``rescore_personal_best=False`` the update is the undamped textbook form,
    which does not settle on a moving target; the defaults damp it.

    ``rescore_personal_best`` re-measures the stored personal best against the
    current global best before comparing, since the global best moves every
    iteration.
    """

    c1: float = 1.4
    c2: float = 1.6
    max_iterations: int = 100
    epsilon: float = 0.01
    seed: int = 0
    clamp_positions: bool = True
    inertia: float = 0.2
    rescore_personal_best: bool = True

    def __post_init__(self) -> None:
        for name in ("c1", "c2", "epsilon"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise DomainError(f"{name} must be a finite real > 0, got {value!r}")
        if not (math.isfinite(self.inertia) and self.inertia >= 0):
            raise DomainError(f"inertia must be a finite real >= 0, got {self.inertia!r}")
        if int(self.max_iterations) != self.max_iterations or self.max_iterations < 1:
            raise DomainError(f"max_iterations must be an integer >= 1, got {self.max_iterations!r}")
        if int(self.seed) != self.seed or not 0 <= self.seed < 2**64:
            raise DomainError(f"seed must be a 64-bit unsigned integer, got {self.seed!r}")


@dataclass
class SwarmState:
    """Swarm held as parallel arrays; row ``i`` is particle ``i``.

    ``positions``, ``velocities`` and ``pbest_positions`` have shape (n, 2)
    with column 0 the ``t`` axis and column 1 the ``r`` axis.
    """

    positions: np.ndarray
    velocities: np.ndarray
    pbest_positions: np.ndarray
    pbest_fitness: np.ndarray
    impacts: np.ndarray
    global_best_raw: Point2
    iteration: int = 0
    # distance of each position to global_best_raw; derived when omitted
    fitness: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.fitness is None:
            self.fitness = _distances(self.positions, self.global_best_raw)

    def __len__(self) -> int:
        return len(self.impacts)

    @property
    def particles(self) -> list[Particle]:
        return [
            Particle(
                i,
                Point2(*map(float, self.positions[i])),
                Point2(*map(float, self.velocities[i])),
                Point2(*map(float, self.pbest_positions[i])),
                float(self.pbest_fitness[i]),
                float(self.impacts[i]),
            )
            for i in range(len(self))
        ]

    @classmethod
    def from_particles(cls, particles: Sequence[Particle], iteration: int = 0) -> SwarmState:
        if not particles:
            raise EmptySwarmError("empty swarm")
        pos, imp = _arrays(particles)
        return cls(
            positions=pos,
            velocities=np.array([p.velocity for p in particles], dtype=float),
            pbest_positions=np.array([p.personal_best_position for p in particles], dtype=float),
            pbest_fitness=np.array([p.personal_best_fitness for p in particles], dtype=float),
            impacts=imp,
            global_best_raw=_weighted_mean(pos, imp),
            iteration=iteration,
        )


class Snapshot(NamedTuple):
    iteration: int
    positions: np.ndarray
    velocities: np.ndarray
    fitnesses: np.ndarray
    global_best: Point2

    @property
    def max_fitness(self) -> float:
        return float(self.fitnesses.max())


@dataclass
class AggregationResult:
    trust_weight: float
    global_best_raw: Point2
    global_best_normalized: Point2
    iterations_used: int
    converged: bool
    trace: list[Snapshot] = field(default_factory=list)


def impact_factor(recommender_trust: float) -> float:
    """Map a recommender's trust in [-1, 1] onto an impact in [0, 1].

    Fully distrusted recommenders get no say, neutral ones half.
    """
    t = trust_weight(recommender_trust)
    return (1.0 + t) / 2.0


def fitness(position: Point2, global_best: Point2) -> float:
    """Euclidean distance between a particle and the global best."""
    coords = (*position, *global_best)
    if not all(math.isfinite(c) for c in coords):
        raise DomainError(f"non-finite point in fitness({tuple(position)!r}, {tuple(global_best)!r})")
    return math.hypot(position[0] - global_best[0], position[1] - global_best[1])


def _distances(points: np.ndarray, target) -> np.ndarray:
    d = np.subtract(points, target)
    d *= d
    return np.sqrt(d[:, 0] + d[:, 1])


def _arrays(particles: Sequence[Particle]) -> tuple[np.ndarray, np.ndarray]:
    pos = np.array([p.position for p in particles], dtype=float).reshape(-1, 2)
    imp = np.array([p.impact for p in particles], dtype=float)
    return pos, imp


def _weighted_mean(positions: np.ndarray, impacts: np.ndarray) -> Point2:
    t, r = (impacts.dot(positions) / len(impacts)).tolist()
    return Point2(t, r)


def weighted_global_best(particles: Sequence[Particle]) -> Point2:
    """Impact-weighted positions summed and divided by the swarm size.

    The divisor is the particle count, not the total impact, so low-impact
    swarms pull the result toward the origin.
    """
    if not particles:
        raise EmptySwarmError("global best of an empty swarm")
    return _weighted_mean(*_arrays(particles))


def _normalize(global_best: Point2, positions: np.ndarray) -> Point2:
    out = []
    for axis in range(2):
        lo = float(positions[:, axis].min())
        hi = float(positions[:, axis].max())
        if hi == lo:
            out.append(clamp_unit(lo))
        else:
            out.append(2.0 * (global_best[axis] - lo) / (hi - lo) - 1.0)
    return Point2(*out)


def normalize_global_best(global_best: Point2, particles: Sequence[Particle]) -> Point2:
    """Rescale each coordinate of ``global_best`` to [-1, 1] using the
    min/max of the particle positions on that coordinate.

    A coordinate on which all particles coincide has no spread to rescale
    by; the common value (clamped) is returned for it instead.
    """
    if not particles:
        raise EmptySwarmError("normalization over an empty swarm")
    pos, _ = _arrays(particles)
    return _normalize(global_best, pos)


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def step(swarm: SwarmState, config: PsoConfig, rng: UniformSource) -> SwarmState:
    """Advance every particle by one velocity/position update.

    Draws one (n, 2, 2) block of uniforms: particle, then axis, then
    (r1, r2).  Returns a new state; ``swarm`` is left untouched.
    """
    n = len(swarm.impacts)
    pull = np.asarray(rng.random((n, 2, 2)), dtype=float) * np.array((config.c1, config.c2))
    x = swarm.positions

    vel = swarm.pbest_positions - x
    vel *= pull[:, :, 0]
    social = np.array(swarm.global_best_raw) - x
    social *= pull[:, :, 1]
    vel += social
    if config.inertia:
        vel += config.inertia * swarm.velocities
    pos = x + vel
    if config.clamp_positions:
        np.maximum(pos, -1.0, out=pos)
        np.minimum(pos, 1.0, out=pos)
    elif not np.isfinite(pos).all():
        raise DomainError("particle position left the finite reals")

    g = swarm.impacts.dot(pos)
    g /= n
    new_gbest = Point2(*g.tolist())
    if config.rescore_personal_best:
        # one pass over current positions and stored bests together
        both = _distances(np.concatenate((pos, swarm.pbest_positions)), g)
        fit, reference = both[:n], both[n:]
    else:
        fit = _distances(pos, g)
        reference = swarm.pbest_fitness
    better = fit < reference
    pbest_pos = np.where(better[:, None], pos, swarm.pbest_positions)
    pbest_fit = np.where(better, fit, reference)
    return SwarmState(pos, vel, pbest_pos, pbest_fit, swarm.impacts, new_gbest, swarm.iteration + 1, fit)


def init_swarm(
    recommendations: Sequence[Recommendation],
    impact: Callable[[float], float] = impact_factor,
) -> SwarmState:
    """One particle per recommendation, at rest on its own tuple."""
    if not recommendations:
        raise EmptySwarmError("cannot build a swarm without recommendations")
    pos = np.array([(rec.recommender_trust, rec.reported_value) for rec in recommendations], dtype=float)
    if not (np.abs(pos) <= 1.0).all():
        raise DomainError("recommendation trust values must lie in [-1, 1]")
    if impact is impact_factor:
        theta = (1.0 + pos[:, 0]) / 2.0
    else:
        theta = np.array([impact(t) for t in pos[:, 0]], dtype=float)
    if ((theta < 0.0) | (theta > 1.0)).any():
        raise DomainError("impact factor outside [0, 1]")
    gbest = _weighted_mean(pos, theta)
    fit = _distances(pos, gbest)
    return SwarmState(
        positions=pos,
        velocities=np.zeros_like(pos),
        pbest_positions=pos,
        pbest_fitness=fit,
        impacts=theta,
        global_best_raw=gbest,
        iteration=0,
        fitness=fit,
    )


def _snapshot(swarm: SwarmState) -> Snapshot:
    # step() always builds fresh arrays, so the snapshot can share them
    return Snapshot(swarm.iteration, swarm.positions, swarm.velocities, swarm.fitness, swarm.global_best_raw)


def aggregate(
    recommendations: Iterable[Recommendation],
    config: PsoConfig = PsoConfig(),
    impact: Callable[[float], float] = impact_factor,
) -> AggregationResult:
    """Fold a set of recommendations into one trust weight.

    A lone recommendation needs no search: its reported value damped by the
    recommender's impact is returned directly.  Otherwise the swarm iterates
    until every particle is within ``config.epsilon`` of the global best or
    the iteration budget runs out, and the ``r`` coordinate of the rescaled
    global best is the answer.

    Raises:
        EmptyInputError: no recommendations.  Callers fall back to the
            neutral weight themselves.
        DomainError: a trust value outside [-1, 1].
    """
    recs = list(recommendations)
    if not recs:
        raise EmptyInputError("aggregate() needs at least one recommendation")

    swarm = init_swarm(recs, impact)

    if len(recs) == 1:
        g = swarm.global_best_raw
        weight = clamp_unit(float(swarm.impacts[0] * swarm.positions[0, 1]))
        return AggregationResult(
            trust_weight=weight,
            global_best_raw=g,
            global_best_normalized=Point2(clamp_unit(g.t), weight),
            iterations_used=0,
            converged=True,
            trace=[_snapshot(swarm)],
        )

    rng = make_rng(config.seed)
    trace = [_snapshot(swarm)]
    converged = trace[-1].max_fitness < config.epsilon
    while not converged and swarm.iteration < config.max_iterations:
        swarm = step(swarm, config, rng)
        trace.append(_snapshot(swarm))
        converged = trace[-1].max_fitness < config.epsilon

    normalized = _normalize(swarm.global_best_raw, swarm.positions)
    return AggregationResult(
        trust_weight=clamp_unit(normalized.r),
        global_best_raw=swarm.global_best_raw,
        global_best_normalized=normalized,
        iterations_used=swarm.iteration,
        converged=converged,
        trace=trace,
    )


TRACE_HEADER = ("iteration", "particle_id", "pos_t", "pos_r", "vel_t", "vel_r", "fitness", "gbest_t", "gbest_r")


def trace_rows(trace: Iterable[Snapshot]):
    """Yield one row of strings per particle per iteration."""
    for snap in trace:
        g = snap.global_best
        for pid, (pos, vel, fit) in enumerate(zip(snap.positions, snap.velocities, snap.fitnesses)):
            yield [
                str(snap.iteration),
                str(pid),
                fmt_real(pos[0]),
                fmt_real(pos[1]),
                fmt_real(vel[0]),
                fmt_real(vel[1]),
                fmt_real(fit),
                fmt_real(g.t),
                fmt_real(g.r),
            ]


def write_trace(trace: Iterable[Snapshot], stream) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(TRACE_HEADER)
    writer.writerows(trace_rows(trace))


def read_trace(stream) -> list[dict[str, float]]:
    """Parse a trace written by ``write_trace`` into one dict per row."""
    reader = csv.reader(stream)
    header = next(reader, None)
    if header is None or tuple(header) != TRACE_HEADER:
        raise FormatError(f"expected header {','.join(TRACE_HEADER)}", line=1)
    rows = []
    for lineno, row in enumerate(reader, start=2):
        if len(row) != len(TRACE_HEADER):
            raise FormatError(f"expected {len(TRACE_HEADER)} fields, got {len(row)}", line=lineno)
        try:
            values = [int(row[0]), int(row[1])] + [float(v) for v in row[2:]]
        except ValueError as exc:
            raise FormatError(str(exc), line=lineno) from None
        rows.append(dict(zip(TRACE_HEADER, values)))
    return rows
