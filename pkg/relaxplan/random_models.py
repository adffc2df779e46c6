#!/usr/bin/env python3
# License: BSD-3-Clause

"""
Random labeled MDPs, automata, guards, lasso words and policies for
property checks
"""

import logging
from typing import Sequence

import numpy as np

from relaxplan.automata import (
    And,
    Atom,
    Edge,
    Gba,
    Guard,
    Ldgba,
    Not,
    Or,
    TrueGuard,
    guard_letters,
    parse_hoa,
    infer_limit_deterministic,
)
from relaxplan.labeled_mdp import LabeledMdp
from relaxplan.product import ExplicitProduct
from relaxplan.verification import DEAD_END

logger = logging.getLogger(__name__)

DEFAULT_PROPS = ("a", "b", "c")


def _distribution(rng: np.random.Generator, support: Sequence[int]) -> dict[int, float]:
    weights = rng.random(len(support)) + 0.05
    weights /= weights.sum()
    row = {int(k): float(w) for k, w in zip(support, weights)}
    # pin the sum to exactly 1
    last = int(support[-1])
    row[last] = 1.0 - sum(p for k, p in row.items() if k != last)
    return row


def random_mdp(
    rng: np.random.Generator,
    n_states: int = 6,
    n_actions: int = 2,
    props: Sequence[str] = DEFAULT_PROPS[:2],
    max_support: int = 3,
    max_labels: int = 2,
) -> LabeledMdp:
    """
    Every state enables a random nonempty subset of the actions, each with a
    random successor distribution; labels are random distributions over a
    few label sets
    """
    n_letters = 1 << len(props)
    transitions = {}
    for s in range(n_states):
        k = int(rng.integers(1, n_actions + 1))
        for a in sorted(rng.choice(n_actions, size=k, replace=False)):
            size = int(rng.integers(1, min(max_support, n_states) + 1))
            support = sorted(rng.choice(n_states, size=size, replace=False))
            transitions[(s, int(a))] = _distribution(rng, support)
    labels = []
    for _ in range(n_states):
        size = int(rng.integers(1, min(max_labels, n_letters) + 1))
        support = sorted(rng.choice(n_letters, size=size, replace=False))
        labels.append(_distribution(rng, support))
    return LabeledMdp(
        state_names=[f"s{s}" for s in range(n_states)],
        action_names=[f"a{a}" for a in range(n_actions)],
        transitions=transitions,
        atomic_props=props,
        label_dist=labels,
    )


def random_guard(rng: np.random.Generator, n_props: int, depth: int = 2) -> Guard:
    if depth == 0 or rng.random() < 0.3:
        if rng.random() < 0.1:
            return TrueGuard()
        return Atom(int(rng.integers(n_props)))
    kind = rng.integers(3)
    if kind == 0:
        return Not(random_guard(rng, n_props, depth - 1))
    if kind == 1:
        return And(random_guard(rng, n_props, depth - 1), random_guard(rng, n_props, depth - 1))
    return Or(random_guard(rng, n_props, depth - 1), random_guard(rng, n_props, depth - 1))


def _satisfiable_guard(rng: np.random.Generator, n_props: int) -> Guard:
    while True:
        guard = random_guard(rng, n_props)
        if guard_letters(guard, n_props):
            return guard


def random_ldgba(
    rng: np.random.Generator,
    props: Sequence[str] = DEFAULT_PROPS[:2],
    max_states: int = 4,
) -> Ldgba:
    """
    Deterministic backbone cycle d_0 -> ... -> d_{k-1} -> d_0 with
    F_i = {d_i}, an optional deterministic non-accepting state and an
    optional nondeterministic initial state with an ε-edge into d_0
    """
    n_props = len(props)
    with_initial = bool(rng.random() < 0.5)
    with_extra = bool(rng.random() < 0.5)
    budget = max_states - int(with_initial) - int(with_extra)
    k = int(rng.integers(1, max(budget, 1) + 1))

    deterministic = list(range(k + int(with_extra)))
    edges: list[list[Edge]] = []
    for i in deterministic:
        guard = _satisfiable_guard(rng, n_props)
        forward = (i + 1) % k if i < k else 0
        other = int(rng.choice(deterministic))
        edges.append([Edge(guard, forward), Edge(Not(guard), other)])

    epsilon = {}
    initial = 0
    if with_initial:
        n0 = len(edges)
        edges.append([Edge(TrueGuard(), n0)])
        epsilon[n0] = [0]
        initial = n0

    gba = Gba(props, edges, initial, [{i} for i in range(k)], epsilon=epsilon)
    return Ldgba(gba, deterministic)


def random_recurrence_automaton(
    rng: np.random.Generator,
    props: Sequence[str] = DEFAULT_PROPS[:2],
    n_sets: int = 2,
    with_sink: bool | None = None,
    with_initial: bool | None = None,
) -> Ldgba:
    """
    One live state whose outgoing edges carry random acceptance marks, an
    optional rejecting sink and an optional nondeterministic initial state
    with a true self-loop and an ε-edge to the live state. Built as
    edge-marked HOA so that it goes through mark splitting.
    """
    n_props = len(props)
    with_sink = bool(rng.random() < 0.5) if with_sink is None else with_sink
    with_initial = bool(rng.random() < 0.5) if with_initial is None else with_initial

    live = 1 if with_initial else 0
    sink = live + 1 if with_sink else None

    destination: dict[int, tuple[int, frozenset[int]]] = {}
    for letter in range(1 << n_props):
        if sink is not None and rng.random() < 0.25:
            destination[letter] = (sink, frozenset())
        else:
            marks = frozenset(int(i) for i in range(n_sets) if rng.random() < 0.4)
            destination[letter] = (live, marks)
    for i in range(n_sets):
        if not any(i in marks for _, marks in destination.values()):
            letter = int(rng.integers(1 << n_props))
            target, marks = destination[letter]
            destination[letter] = (live, (marks if target == live else frozenset()) | {i})

    groups: dict[tuple[int, frozenset[int]], list[int]] = {}
    for letter, dest in sorted(destination.items()):
        groups.setdefault(dest, []).append(letter)

    def minterm(letter):
        return "&".join(str(i) if letter >> i & 1 else f"!{i}" for i in range(n_props))

    n_states = 1 + int(with_initial) + int(with_sink)
    acceptance = "&".join(f"Inf({i})" for i in range(n_sets))
    lines = [
        "HOA: v1",
        f"States: {n_states}",
        "Start: 0",
        f"AP: {n_props} " + " ".join(f'"{p}"' for p in props),
        f"Acceptance: {n_sets} {acceptance}",
        "--BODY--",
    ]
    if with_initial:
        lines += ["State: 0", "[t] 0"]
    lines.append(f"State: {live}")
    for (target, marks), letters in sorted(groups.items(), key=lambda g: g[1][0]):
        guard = " | ".join(f"({minterm(l)})" for l in letters)
        mark_text = " {" + " ".join(str(i) for i in sorted(marks)) + "}" if marks else ""
        lines.append(f"[{guard}] {target}{mark_text}")
    if sink is not None:
        lines += [f"State: {sink}", "[t] " + str(sink)]
    lines.append("--END--")

    epsilon = [(0, live)] if with_initial else []
    gba = parse_hoa("\n".join(lines), epsilon=epsilon, name="recurrence")
    return infer_limit_deterministic(gba)


def random_lasso(
    rng: np.random.Generator, n_props: int, max_length: int = 8
) -> tuple[list[int], list[int]]:
    total = int(rng.integers(1, max_length + 1))
    cycle_length = int(rng.integers(1, total + 1))
    letters = [int(l) for l in rng.integers(1 << n_props, size=total)]
    return letters[: total - cycle_length], letters[total - cycle_length :]


def random_policy(rng: np.random.Generator, explicit: ExplicitProduct) -> list[int]:
    """
    A uniformly random memoryless choice per explicit state
    """
    return [
        int(rng.integers(len(acts))) if acts else DEAD_END for acts in explicit.actions
    ]
