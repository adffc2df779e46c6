#!/usr/bin/env python3
# License: BSD-3-Clause

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from pydantic import BaseModel, Field

from relaxplan.graphs import maximal_end_components as _mec_fixpoint
from relaxplan.utils import PROB_TOLERANCE, format_label

logger = logging.getLogger(__name__)


class ValidationReport(BaseModel):
    """
    Result of checking a labeled MDP against its well-formedness rules
    """

    problems: list[str] = Field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.problems

    def summary(self) -> str:
        if self.ok:
            return "MDP is well-formed"
        return "MDP is malformed:\n" + "\n".join(f"  - {p}" for p in self.problems)


@dataclass(frozen=True)
class SubMdp:
    """
    Sub-MDP given by a state subset and a nonempty action subset per state
    """

    states: frozenset[int]
    actions: Mapping[int, frozenset[int]] = field(hash=False)


class LabeledMdp:
    """
    Labeled finite MDP with probabilistic labels.

    States and actions are dense integer ids; `state_names` and
    `action_names` are side tables. Labels are bitmasks over the ordered
    proposition list `atomic_props` (bit i set iff proposition i holds).

    :param state_names: one name per state
    :param action_names: one name per action id
    :param transitions: (state, action) -> {successor: probability}
    :param atomic_props: ordered proposition names
    :param label_dist: per state, {label bitmask: probability}
    :param initial_state: id of the initial state
    :param initial_label: label observed at the initial state; defaults to the
        most likely label there
    """

    def __init__(
        self,
        state_names: Sequence[str],
        action_names: Sequence[str],
        transitions: Mapping[tuple[int, int], Mapping[int, float]],
        atomic_props: Sequence[str],
        label_dist: Sequence[Mapping[int, float]],
        initial_state: int = 0,
        initial_label: int | None = None,
    ):
        self.state_names = tuple(state_names)
        self.action_names = tuple(action_names)
        self.atomic_props = tuple(atomic_props)
        self.initial_state = initial_state

        self._transitions = {
            key: self._normalized(row, f"p_S({key[0]},{key[1]},.)")
            for key, row in transitions.items()
        }
        self._labels = tuple(
            self._normalized(row, f"p_L({s},.)") for s, row in enumerate(label_dist)
        )

        actions_of: dict[int, list[int]] = {s: [] for s in range(self.n_states)}
        for s, a in sorted(self._transitions):
            actions_of.setdefault(s, []).append(a)
        self._actions = {s: tuple(acts) for s, acts in actions_of.items()}

        if initial_label is None and 0 <= initial_state < len(self._labels):
            row = self._labels[initial_state]
            initial_label = max(sorted(row), key=lambda l: row[l]) if row else 0
        self.initial_label = initial_label if initial_label is not None else 0

        self._samplers = {
            key: (np.array(sorted(row)), np.array([row[t] for t in sorted(row)]))
            for key, row in self._transitions.items()
        }
        self._label_samplers = tuple(
            (np.array(sorted(row)), np.array([row[l] for l in sorted(row)]))
            for row in self._labels
        )

    @staticmethod
    def _normalized(row: Mapping[int, float], name: str) -> dict[int, float]:
        """
        Drop zero entries and rescale away rounding noise. A row that is not a
        distribution within tolerance is rejected.
        """
        row = {k: float(p) for k, p in row.items() if p > 0.0}
        total = sum(row.values())
        if abs(total - 1.0) > PROB_TOLERANCE:
            raise DomainError(f"{name} sums to {total:.6g}")
        return {k: p / total for k, p in row.items()}

    @property
    def n_states(self) -> int:
        return len(self.state_names)

    @property
    def n_props(self) -> int:
        return len(self.atomic_props)

    def state_id(self, name: str) -> int:
        try:
            return self.state_names.index(name)
        except ValueError:
            raise DomainError(f"Unknown state {name!r}")

    def action_id(self, name: str) -> int:
        try:
            return self.action_names.index(name)
        except ValueError:
            raise DomainError(f"Unknown action {name!r}")

    def actions(self, s: int) -> tuple[int, ...]:
        if s not in self._actions:
            raise DomainError(f"Unknown state {s}")
        return self._actions[s]

    def transition(self, s: int, a: int) -> dict[int, float]:
        try:
            return self._transitions[(s, a)]
        except KeyError:
            raise DomainError(f"Action {a} is not enabled at state {s}")

    def post(self, s: int, a: int) -> frozenset[int]:
        """
        Successor states of (s, a) with positive probability
        """
        return frozenset(self.transition(s, a))

    def labels(self, s: int) -> dict[int, float]:
        if not 0 <= s < self.n_states:
            raise DomainError(f"Unknown state {s}")
        return self._labels[s]

    def successors(self, s: int) -> frozenset[int]:
        """
        Union of Post(s, a) over all actions
        """
        out: set[int] = set()
        for a in self.actions(s):
            out.update(self._transitions[(s, a)])
        return frozenset(out)

    def sample_step(self, s: int, a: int, rng: np.random.Generator) -> tuple[int, int]:
        """
        Draw s' from p_S(s, a, .) and then l' from p_L(s', .)
        """
        try:
            support, p = self._samplers[(s, a)]
        except KeyError:
            raise DomainError(f"Action {a} is not enabled at state {s}")
        s_next = int(rng.choice(support, p=p))
        return s_next, self.sample_label(s_next, rng)

    def sample_label(self, s: int, rng: np.random.Generator) -> int:
        labels, p = self._label_samplers[s]
        return int(rng.choice(labels, p=p))

    def validate(self) -> ValidationReport:
        """
        Check the support and initial-state invariants
        """
        problems = []
        for s in range(self.n_states):
            if not self._actions.get(s):
                problems.append(f"state {self.state_names[s]} has no enabled action")
        for (s, a), row in sorted(self._transitions.items()):
            if not 0 <= s < self.n_states:
                problems.append(f"transition row ({s},{a}) refers to unknown state {s}")
                continue
            for t in row:
                if not 0 <= t < self.n_states:
                    problems.append(
                        f"p_S({self.state_names[s]},{self._action_name(a)},.) targets unknown state {t}"
                    )
        if len(self._labels) != self.n_states:
            problems.append(
                f"{len(self._labels)} label distributions for {self.n_states} states"
            )
        for s, row in enumerate(self._labels):
            for l in row:
                if l >> self.n_props:
                    problems.append(f"label {l} at state {s} uses unknown propositions")
        if not 0 <= self.initial_state < self.n_states:
            problems.append(f"initial state {self.initial_state} is unknown")
        elif (
            self.initial_state >= len(self._labels)
            or self._labels[self.initial_state].get(self.initial_label, 0.0) <= 0.0
        ):
            problems.append(
                f"initial label {format_label(self.initial_label, self.atomic_props)} "
                f"has probability 0 at {self.state_names[self.initial_state]}"
            )
        return ValidationReport(problems=problems)

    def _action_name(self, a: int) -> str:
        return self.action_names[a] if 0 <= a < len(self.action_names) else str(a)

    def maximal_end_components(self, sub: SubMdp | None = None) -> list[SubMdp]:
        """
        MEC decomposition of the whole MDP or of a sub-MDP
        """
        if sub is None:
            enabled = {
                s: {a: self.post(s, a) for a in self.actions(s)}
                for s in range(self.n_states)
            }
        else:
            enabled = {
                s: {a: self.post(s, a) for a in sub.actions[s]} for s in sub.states
            }
        mecs = [SubMdp(states, actions) for states, actions in _mec_fixpoint(enabled)]
        logger.debug(f"Found {len(mecs)} maximal end components")
        return mecs

    def __repr__(self) -> str:
        return (
            f"LabeledMdp(states={self.n_states}, actions={len(self.action_names)}, "
            f"props={list(self.atomic_props)})"
        )


class DomainError(ValueError):
    """Unknown state or action"""

    pass
