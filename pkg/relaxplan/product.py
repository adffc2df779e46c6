#!/usr/bin/env python3
# License: BSD-3-Clause

"""
Relaxed product of a labeled MDP and an embedded LDGBA, the standard
(label-forced) product, violation costs and explicit exploration
"""

import logging
from collections import deque
from typing import Iterable, NamedTuple

import numpy as np

from relaxplan.automata import Ldgba, dist
from relaxplan.eldgba import admissible, update_frontier
from relaxplan.labeled_mdp import LabeledMdp
from relaxplan.utils import format_label, format_sets, popcount

logger = logging.getLogger(__name__)

EPSILON = -1
DEFAULT_BUDGET = 1_000_000


class ProductState(NamedTuple):
    s: int
    l: int
    q: int
    T: int


class ExtendedAction(NamedTuple):
    """
    Move(action, target) or, with action == EPSILON, an ε-move to target
    """

    action: int
    target: int

    @property
    def is_epsilon(self) -> bool:
        return self.action == EPSILON


def eval_vector(label: int, n_props: int) -> np.ndarray:
    """
    0/1 evaluation vector of a label, entry i for proposition i
    """
    return np.array([label >> i & 1 for i in range(n_props)], dtype=np.int8)


def rho(label: int, other: int) -> int:
    """
    L1 distance of the evaluation vectors
    """
    return popcount(label ^ other)


class RelaxedProductMdp:
    """
    Product MDP whose automaton component may follow any edge of the current
    automaton state, paying the Hamming distance between the observed label
    and the edge's letters. Transitions are materialized lazily.

    :param mdp: labeled MDP
    :param ldgba: task automaton; its propositions are re-indexed onto the
        MDP's proposition order
    :param track_frontier: without it T stays F and nothing is blocked
    :param reroute_blocked: opt-in. A move into an accepting state whose sets
        were all visited in this round enters the state's unmarked twin, when
        the automaton has one, instead of being disabled
    """

    def __init__(
        self,
        mdp: LabeledMdp,
        ldgba: Ldgba,
        track_frontier: bool = True,
        reroute_blocked: bool = False,
    ):
        if ldgba.props != mdp.atomic_props:
            ldgba = ldgba.with_props(mdp.atomic_props)
        self.mdp = mdp
        self.ldgba = ldgba
        self.track_frontier = track_frontier
        self.reroute_blocked = reroute_blocked

        self._actions: dict[tuple[int, int, int], tuple[ExtendedAction, ...]] = {}
        self._costs: dict[tuple[int, int, int], float] = {}

    @property
    def n_sets(self) -> int:
        return self.ldgba.n_sets

    def initial_state(self) -> ProductState:
        return ProductState(
            self.mdp.initial_state,
            self.mdp.initial_label,
            self.ldgba.initial,
            self.ldgba.full_frontier,
        )

    def membership(self, x: ProductState) -> int:
        return self.ldgba.membership[x.q]

    def is_accepting(self, x: ProductState) -> bool:
        return self.ldgba.membership[x.q] != 0

    def admissible(self, target: int, T: int) -> bool:
        if not self.track_frontier:
            return True
        return admissible(self.ldgba, target, T)

    def next_frontier(self, target: int, T: int) -> int:
        if not self.track_frontier:
            return T
        return update_frontier(self.ldgba, target, T)

    def resolve(self, target: int, T: int) -> tuple[int, int] | None:
        """
        Automaton state and frontier reached by a move to `target`, None if
        the move is blocked
        """
        if self.admissible(target, T):
            return target, self.next_frontier(target, T)
        twin = self.ldgba.unmarked_twin[target] if self.reroute_blocked else None
        if twin is None:
            return None
        return twin, T

    def enumerate_actions(self, x: ProductState) -> tuple[ExtendedAction, ...]:
        """
        ε-moves and (action, target) pairs for automaton targets that are not
        blocked, in canonical order
        """
        key = (x.s, x.q, x.T)
        if key not in self._actions:
            actions = [
                ExtendedAction(EPSILON, t)
                for t in self.ldgba.epsilon[x.q]
                if self.resolve(t, x.T) is not None
            ]
            targets = [
                t for t in self.ldgba.out_targets(x.q) if self.resolve(t, x.T) is not None
            ]
            for a in self.mdp.actions(x.s):
                actions.extend(ExtendedAction(a, t) for t in targets)
            self._actions[key] = tuple(sorted(actions))
        return self._actions[key]

    def _check_edge(self, x: ProductState, u: ExtendedAction):
        if u.is_epsilon:
            if u.target not in self.ldgba.epsilon[x.q]:
                raise InvalidAction(f"No ε-transition {x.q} -> {u.target}")
        elif u.action not in self.mdp.actions(x.s) or not self.ldgba.letters(x.q, u.target):
            raise InvalidAction(f"{u} is not available at {x}")

    def transition_dist(self, x: ProductState, u: ExtendedAction) -> dict[ProductState, float]:
        """
        p_L(s', l') * p_S(s, a, s') over all successors for a move, the Dirac
        distribution on the switched automaton state for an ε-move
        """
        if u not in self.enumerate_actions(x):
            raise InvalidAction(f"{u} is not enabled at {x}")
        q_next, T_next = self.resolve(u.target, x.T)  # type: ignore[misc]
        if u.is_epsilon:
            return {ProductState(x.s, x.l, q_next, T_next): 1.0}
        result: dict[ProductState, float] = {}
        for s_next, p in self.mdp.transition(x.s, u.action).items():
            for l_next, pl in self.mdp.labels(s_next).items():
                y = ProductState(s_next, l_next, q_next, T_next)
                result[y] = result.get(y, 0.0) + p * pl
        return result

    def violation_cost(self, x: ProductState, u: ExtendedAction) -> float:
        """
        0 for ε-moves, otherwise the distance between the observed label and
        the letters enabling q -> target
        """
        if u.is_epsilon:
            return 0.0
        key = (x.l, x.q, u.target)
        if key not in self._costs:
            self._costs[key] = float(dist(x.l, self.ldgba.letters(x.q, u.target)))
        return self._costs[key]

    def step(
        self, x: ProductState, u: ExtendedAction, rng: np.random.Generator
    ) -> tuple[ProductState, float]:
        """
        Execute one extended action: sample the MDP move, then advance the
        automaton. A blocked target leaves the automaton where it is.
        """
        self._check_edge(x, u)
        cost = self.violation_cost(x, u)
        if u.is_epsilon:
            s_next, l_next = x.s, x.l
        else:
            s_next, l_next = self.mdp.sample_step(x.s, u.action, rng)
        resolved = self.resolve(u.target, x.T)
        q_next, T_next = resolved if resolved is not None else (x.q, x.T)
        return ProductState(s_next, l_next, q_next, T_next), cost

    def describe(self, x: ProductState) -> str:
        return (
            f"({self.mdp.state_names[x.s]}, {format_label(x.l, self.mdp.atomic_props)}, "
            f"{self.ldgba.state_names[x.q]}, {format_sets(x.T)})"
        )

    def describe_action(self, u: ExtendedAction) -> str:
        target = self.ldgba.state_names[u.target]
        if u.is_epsilon:
            return f"eps->{target}"
        return f"{self.mdp.action_names[u.action]}->{target}"

    def explore(
        self, initial: Iterable[ProductState] | None = None, budget: int = DEFAULT_BUDGET
    ) -> "ExplicitProduct":
        initial = list(initial) if initial is not None else [self.initial_state()]
        return _explore(
            initial, self.enumerate_actions, self.transition_dist, self.violation_cost, self, budget
        )


class ExplicitProduct:
    """
    Explicitly enumerated product over the states reachable from `initial`.

    States are indexed in discovery order; for state i, `actions[i][k]` is an
    extended action with successor list `transitions[i][k]` of
    (state index, probability) and cost `costs[i][k]`.
    """

    def __init__(self, relaxed: RelaxedProductMdp):
        self.product = relaxed
        self.states: list[ProductState] = []
        self.index: dict[ProductState, int] = {}
        self.actions: list[tuple[ExtendedAction, ...]] = []
        self.transitions: list[list[list[tuple[int, float]]]] = []
        self.costs: list[list[float]] = []
        self.initial: list[int] = []

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_transitions(self) -> int:
        return sum(len(row) for rows in self.transitions for row in rows)

    def membership(self, i: int) -> int:
        return self.product.membership(self.states[i])

    def accepting_sets(self) -> list[frozenset[int]]:
        """
        F_i^R as sets of state indices
        """
        return [
            frozenset(i for i in range(self.n_states) if self.membership(i) >> j & 1)
            for j in range(self.product.n_sets)
        ]

    def enabled(self) -> dict[int, dict[int, frozenset[int]]]:
        """
        state -> action position -> support, the input of MEC decomposition
        """
        return {
            i: {k: frozenset(j for j, _ in row) for k, row in enumerate(rows)}
            for i, rows in enumerate(self.transitions)
        }

    def transition_set(self) -> set[tuple[ProductState, ExtendedAction, ProductState, float]]:
        out = set()
        for i, rows in enumerate(self.transitions):
            for k, row in enumerate(rows):
                for j, p in row:
                    out.add((self.states[i], self.actions[i][k], self.states[j], round(p, 12)))
        return out

    def origin_pairs(self) -> int:
        """
        Distinct (MDP state, HOA state) pairs among the explored states
        """
        origin = self.product.ldgba.origin
        return len({(x.s, origin[x.q]) for x in self.states})


def _explore(initial, actions_of, dist_of, cost_of, relaxed, budget) -> ExplicitProduct:
    explicit = ExplicitProduct(relaxed)
    queue: deque[int] = deque()
    n_transitions = 0

    def add(x):
        if x not in explicit.index:
            explicit.index[x] = len(explicit.states)
            explicit.states.append(x)
            queue.append(explicit.index[x])
        return explicit.index[x]

    explicit.initial = [add(x) for x in initial]
    while queue:
        i = queue.popleft()
        x = explicit.states[i]
        acts = actions_of(x)
        rows = []
        costs = []
        for u in acts:
            row = [(add(y), p) for y, p in dist_of(x, u).items()]
            n_transitions += len(row)
            rows.append(row)
            costs.append(cost_of(x, u))
        if n_transitions > budget:
            raise BudgetExceeded(f"Explicit product exceeds {budget} transitions")
        # states are processed in discovery order
        explicit.actions.append(tuple(acts))
        explicit.transitions.append(rows)
        explicit.costs.append(costs)

    logger.info(
        f"Explored product: {explicit.n_states} states, {n_transitions} transitions, "
        f"{explicit.origin_pairs()} (s, q) pairs"
    )
    return explicit


def build_relaxed_product(
    mdp: LabeledMdp,
    ldgba: Ldgba,
    track_frontier: bool = True,
    budget: int = DEFAULT_BUDGET,
    reroute_blocked: bool = False,
) -> ExplicitProduct:
    return RelaxedProductMdp(mdp, ldgba, track_frontier, reroute_blocked).explore(budget=budget)


def build_standard_product(
    mdp: LabeledMdp, ldgba: Ldgba, budget: int = DEFAULT_BUDGET
) -> ExplicitProduct:
    """
    Product in which the automaton reads the observed label: deterministic
    states follow δ(q, l), nondeterministic ones offer every successor plus
    their ε-moves. Frontier-blocked moves are disabled.
    """
    relaxed = RelaxedProductMdp(mdp, ldgba)
    ldgba = relaxed.ldgba

    def actions_of(x: ProductState) -> tuple[ExtendedAction, ...]:
        actions = [
            ExtendedAction(EPSILON, t) for t in ldgba.epsilon[x.q] if admissible(ldgba, t, x.T)
        ]
        if x.q in ldgba.q_d:
            targets: tuple[int, ...] = (ldgba.step(x.q, x.l),)
        else:
            targets = ldgba.successors(x.q, x.l)
        targets = tuple(t for t in targets if admissible(ldgba, t, x.T))
        for a in mdp.actions(x.s):
            actions.extend(ExtendedAction(a, t) for t in targets)
        return tuple(sorted(actions))

    return _explore(
        [relaxed.initial_state()],
        actions_of,
        relaxed.transition_dist,
        lambda x, u: 0.0,
        relaxed,
        budget,
    )


def product_size(mdp: LabeledMdp, ldgba: Ldgba) -> int:
    """
    Number of distinct (MDP state, HOA state) pairs reachable in the relaxed
    product, without enumerating labels and frontiers
    """
    start = (mdp.initial_state, ldgba.initial)
    seen = {start}
    queue = deque([start])
    while queue:
        s, q = queue.popleft()
        succ_s = mdp.successors(s)
        moves = [(s2, t) for s2 in succ_s for t in ldgba.out_targets(q)]
        moves += [(s, t) for t in ldgba.epsilon[q]]
        for y in moves:
            if y not in seen:
                seen.add(y)
                queue.append(y)
    origin = ldgba.origin
    pairs = len({(s, origin[q]) for s, q in seen})
    logger.debug(f"Projected product has {len(seen)} (s, q) states, {pairs} before splitting")
    return pairs


class InvalidAction(ValueError):
    """Extended action not available at a product state"""

    pass


class BudgetExceeded(Exception):
    """Explicit model too large"""

    pass
