"""Simulated multi-agent communication fabric with exact accounting.

Exactly two primitives move data between subsystem agents:

* :meth:`Network.neighbor_exchange` -- vector payloads between coupled
  subsystems, delivered atomically at a synchronous round boundary;
* :meth:`Network.global_scalar_reduce` -- one scalar per subsystem combined
  by sum/min/max and broadcast back.

Nothing else crosses agent boundaries; sending to a non-neighbor raises.
Every operation is charged to the currently active phase so that the
per-phase communication budget of each solver stage can be asserted:
``dip_outer`` carries exactly the three stepsize/barrier reductions per outer
iteration, ``dcg_iterate`` exactly the two scalar sums per inner iteration.
Termination/diagnostic traffic is booked under the ``*_check`` phases so that
both counting conventions stay recoverable.

Self-messages (the i in N_i term of neighbor sums) are delivered but cost
nothing: a subsystem reading its own state is local work.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

__all__ = [
    "TopologyViolation",
    "ReduceDeadlock",
    "PhaseCounters",
    "CommStats",
    "Network",
]


class TopologyViolation(Exception):
    """A payload was addressed to a subsystem outside the sender's N_i."""


class ReduceDeadlock(Exception):
    """A global reduction round closed with missing contributions."""


@dataclass
class PhaseCounters:
    neighbor_msgs: int = 0
    neighbor_scalars: int = 0
    reductions: int = 0
    reduction_scalars: int = 0

    def add(self, other: "PhaseCounters") -> None:
        self.neighbor_msgs += other.neighbor_msgs
        self.neighbor_scalars += other.neighbor_scalars
        self.reductions += other.reductions
        self.reduction_scalars += other.reduction_scalars

    def copy(self) -> "PhaseCounters":
        return PhaseCounters(
            self.neighbor_msgs, self.neighbor_scalars, self.reductions, self.reduction_scalars
        )


@dataclass
class CommStats:
    """Monotone per-subsystem, per-phase communication counters."""

    n_agents: int
    per_agent: dict[int, dict[str, PhaseCounters]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for i in range(self.n_agents):
            self.per_agent.setdefault(i, {})

    def _bucket(self, agent: int, phase: str) -> PhaseCounters:
        return self.per_agent[agent].setdefault(phase, PhaseCounters())

    def phases(self) -> list[str]:
        seen: set[str] = set()
        for buckets in self.per_agent.values():
            seen.update(buckets)
        return sorted(seen)

    def agent_total(self, agent: int, phases: Iterable[str] | None = None) -> PhaseCounters:
        total = PhaseCounters()
        for phase, counters in self.per_agent[agent].items():
            if phases is None or phase in phases:
                total.add(counters)
        return total

    def phase_total(self, phase: str) -> PhaseCounters:
        total = PhaseCounters()
        for i in range(self.n_agents):
            counters = self.per_agent[i].get(phase)
            if counters is not None:
                total.add(counters)
        return total

    def aggregate(self) -> PhaseCounters:
        total = PhaseCounters()
        for i in range(self.n_agents):
            total.add(self.agent_total(i))
        return total

    @property
    def global_scalars(self) -> int:
        return self.aggregate().reduction_scalars

    @property
    def neighbor_scalars(self) -> int:
        return self.aggregate().neighbor_scalars

    def summary(self) -> str:
        """Fixed-order text table (phases sorted, agents ascending)."""
        lines = ["phase subsystem neighbor_msgs neighbor_scalars reductions reduction_scalars"]
        for phase in self.phases():
            for i in range(self.n_agents):
                c = self.per_agent[i].get(phase, PhaseCounters())
                lines.append(
                    f"{phase} {i} {c.neighbor_msgs} {c.neighbor_scalars} "
                    f"{c.reductions} {c.reduction_scalars}"
                )
            t = self.phase_total(phase)
            lines.append(
                f"{phase} total {t.neighbor_msgs} {t.neighbor_scalars} "
                f"{t.reductions} {t.reduction_scalars}"
            )
        a = self.aggregate()
        lines.append(
            f"all total {a.neighbor_msgs} {a.neighbor_scalars} {a.reductions} {a.reduction_scalars}"
        )
        return "\n".join(lines) + "\n"


_REDUCE_OPS = ("sum", "min", "max")


class Network:
    """Synchronous round-based fabric over a fixed neighbor topology.

    Agents are the integers ``0..n_agents-1``; ``neighbor_sets[i]`` is N_i
    from the coupling topology (self-loops permitted).  The fabric is
    loss-free, delay-free and order-deterministic: delivery order is fixed by
    ascending (receiver, sender) ids, and sum-reductions accumulate in
    ascending agent order, so replaying a run reproduces identical results
    and identical counters.
    """

    def __init__(self, neighbor_sets: list[np.ndarray] | list[list[int]]):
        self.n_agents = len(neighbor_sets)
        self.neighbors = [frozenset(int(j) for j in ns) for ns in neighbor_sets]
        for i, ns in enumerate(self.neighbors):
            for j in ns:
                if not 0 <= j < self.n_agents:
                    raise ValueError(f"neighbor set of {i} references unknown agent {j}")
                if i not in self.neighbors[j]:
                    raise ValueError(f"asymmetric adjacency between {i} and {j}")
        self.stats = CommStats(self.n_agents)
        self._phase = "setup"

    @classmethod
    def from_topology(cls, topology) -> "Network":
        return cls(topology.neighbor_sets)

    def set_phase(self, phase: str) -> None:
        self._phase = phase

    @property
    def phase(self) -> str:
        return self._phase

    def neighbor_exchange(
        self, payloads: Mapping[int, Mapping[int, np.ndarray]]
    ) -> dict[int, dict[int, np.ndarray]]:
        """Deliver per-sender payload maps {target -> vector}.

        Returns {receiver -> {sender -> vector}}.  Payloads are copied at the
        round boundary, so later mutation by the sender cannot leak into the
        receiver.  Addressing a non-neighbor raises TopologyViolation: this
        is the decentralization enforcement point.
        """
        delivered: dict[int, dict[int, np.ndarray]] = {i: {} for i in range(self.n_agents)}
        for sender in sorted(payloads):
            if not 0 <= sender < self.n_agents:
                raise TopologyViolation(f"unknown sender {sender}")
            for target in sorted(payloads[sender]):
                if target not in self.neighbors[sender]:
                    raise TopologyViolation(
                        f"subsystem {sender} attempted to message non-neighbor {target}"
                    )
                vec = np.array(payloads[sender][target], dtype=float, copy=True).reshape(-1)
                delivered[target][sender] = vec
                if target != sender:  # self-communication is local, costs nothing
                    c = self.stats._bucket(sender, self._phase)
                    c.neighbor_msgs += 1
                    c.neighbor_scalars += vec.size
        return delivered

    def global_scalar_reduce(self, contributions: Mapping[int, float], op: str = "sum") -> float:
        """Combine one scalar per subsystem and broadcast the result.

        Costs one scalar of global communication per subsystem.  A round with
        missing or unknown contributors deadlocks (raises) at the barrier.
        """
        if op not in _REDUCE_OPS:
            raise ValueError(f"unknown reduction op {op!r}")
        missing = [i for i in range(self.n_agents) if i not in contributions]
        unknown = [i for i in contributions if not 0 <= int(i) < self.n_agents]
        if missing or unknown:
            raise ReduceDeadlock(
                f"reduction barrier broken: missing contributions {missing}, unknown {unknown}"
            )
        values = [float(contributions[i]) for i in range(self.n_agents)]
        if op == "sum":
            result = 0.0
            for v in values:  # fixed order for bit-stable accumulation
                result += v
        elif op == "min":
            result = min(values)
        else:
            result = max(values)
        for i in range(self.n_agents):
            c = self.stats._bucket(i, self._phase)
            c.reductions += 1
            c.reduction_scalars += 1
        return result
