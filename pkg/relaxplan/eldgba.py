#!/usr/bin/env python3
# License: BSD-3-Clause

"""
Embedded LDGBA: the automaton run together with a tracking frontier T of the
accepting sets not yet visited in the current round
"""

import logging
from typing import Callable, Iterable, NamedTuple, Sequence

import networkx as nx  # type: ignore

from relaxplan.automata import Ldgba

logger = logging.getLogger(__name__)


class ELdgbaState(NamedTuple):
    q: int
    T: int


class Run(NamedTuple):
    states: list[ELdgbaState]
    rounds: int
    blocked: bool


def update_frontier(ldgba: Ldgba, q: int, T: int) -> int:
    """
    Remove every accepting set containing q from T. An exhausted frontier
    starts a new round: F minus the sets containing q.
    """
    m = ldgba.membership[q]
    if not m:
        return T
    if T == 0:
        return ldgba.full_frontier & ~m
    if T & m:
        return T & ~m
    return T


def admissible(ldgba: Ldgba, q: int, T: int) -> bool:
    """
    Entering q is allowed if q is not accepting or belongs to a set still in T
    """
    m = ldgba.membership[q]
    return m == 0 or T == 0 or bool(m & T)


def initial_state(ldgba: Ldgba) -> ELdgbaState:
    return ELdgbaState(ldgba.initial, ldgba.full_frontier)


def completes_round(ldgba: Ldgba, q: int, T_after: int) -> bool:
    return T_after == 0 and ldgba.membership[q] != 0


def e_step(
    ldgba: Ldgba, es: ELdgbaState, label: int, successor: int | None = None
) -> ELdgbaState | None:
    """
    One letter transition; None when the move is blocked or there is no
    successor. For nondeterministic states the caller may pick `successor`,
    otherwise the lowest-numbered one is taken.
    """
    q, T = es
    if q in ldgba.q_d:
        target = ldgba.step(q, label)
        if successor is not None and successor != target:
            raise ValueError(f"State {successor} is not the successor of {q} on {label}")
    else:
        candidates = ldgba.successors(q, label)
        if successor is not None:
            if successor not in candidates:
                raise ValueError(f"State {successor} is not a successor of {q} on {label}")
            target = successor
        elif candidates:
            target = candidates[0]
        else:
            return None
    if not admissible(ldgba, target, T):
        return None
    return ELdgbaState(target, update_frontier(ldgba, target, T))


def epsilon_step(ldgba: Ldgba, es: ELdgbaState, target: int) -> ELdgbaState | None:
    if target not in ldgba.epsilon[es.q]:
        raise ValueError(f"No ε-transition {es.q} -> {target}")
    if not admissible(ldgba, target, es.T):
        return None
    return ELdgbaState(target, update_frontier(ldgba, target, es.T))


def generate_run(
    ldgba: Ldgba,
    letters: Iterable[int],
    length: int,
    resolver: Callable[[ELdgbaState, int, Sequence[int]], int] | None = None,
) -> Run:
    """
    Feed up to `length` letters through the E-LDGBA starting at (q0, F),
    stopping at the first blocked move.

    :param resolver: picks the successor of a nondeterministic state from
        (state, letter, candidates)
    """
    if length < 0:
        raise ValueError("Run length must be nonnegative")
    es = initial_state(ldgba)
    states = [es]
    rounds = 0
    blocked = False
    for label, _ in zip(letters, range(length)):
        successor = None
        if resolver is not None and es.q in ldgba.q_n:
            candidates = ldgba.successors(es.q, label)
            if candidates:
                successor = resolver(es, label, candidates)
        nxt = e_step(ldgba, es, label, successor)
        if nxt is None:
            logger.debug(f"No successor found from {es} on letter {label}")
            blocked = True
            break
        if completes_round(ldgba, nxt.q, nxt.T):
            rounds += 1
        es = nxt
        states.append(es)
    return Run(states, rounds, blocked)


def lasso_accepted(ldgba: Ldgba, prefix: Sequence[int], cycle: Sequence[int]) -> bool:
    """
    Whether some frontier-respecting run on prefix·cycle^ω visits every
    accepting set infinitely often. A letter whose successors are all
    blocked leaves (q, T) in place.
    """
    if not cycle:
        raise ValueError("The cycle of a lasso word must be nonempty")
    word = list(prefix) + list(cycle)
    loop_start = len(prefix)

    def after(i):
        return i + 1 if i + 1 < len(word) else loop_start

    graph = nx.DiGraph()
    start = (*initial_state(ldgba), 0)
    graph.add_node(start)
    stack = [start]
    while stack:
        node = stack.pop()
        q, T, i = node
        successors = []
        candidates = ldgba.successors(q, word[i])
        for t in candidates:
            if admissible(ldgba, t, T):
                successors.append((t, update_frontier(ldgba, t, T), after(i)))
        if candidates and not successors:
            successors.append((q, T, after(i)))
        for t in ldgba.epsilon[q]:
            if admissible(ldgba, t, T):
                successors.append((t, update_frontier(ldgba, t, T), i))
        for succ in successors:
            if succ not in graph:
                stack.append(succ)
            graph.add_edge(node, succ)

    for component in nx.strongly_connected_components(graph):
        if len(component) == 1:
            (v,) = component
            if not graph.has_edge(v, v):
                continue
        covered = 0
        for q, _, _ in component:
            covered |= ldgba.membership[q]
        if covered == ldgba.full_frontier:
            return True
    return False
