#!/usr/bin/env python3
# License: BSD-3-Clause

"""
Explicit-state oracle: induced Markov chains, value iteration, policy
evaluation, expected violation and the structural checks on relaxed products
"""

import logging
from collections import deque
from typing import Any, Sequence

import numpy as np
from pydantic import BaseModel, Field

from relaxplan.automata import Ldgba
from relaxplan.graphs import bottom_components, maximal_end_components
from relaxplan.labeled_mdp import LabeledMdp
from relaxplan.models import RewardConfig
from relaxplan.product import (
    DEFAULT_BUDGET,
    ExplicitProduct,
    build_relaxed_product,
    build_standard_product,
)

logger = logging.getLogger(__name__)

TOLERANCE = 1e-8
MAX_ITERATIONS = 1_000_000
DEAD_END = -1


# -----------------------------------------------------------------
# Policies on explicit products


def policy_choices(
    explicit: ExplicitProduct, policy: Any, fallback: str = "error"
) -> list[int]:
    """
    Position of the chosen action for every explicit state, DEAD_END where
    no action exists.

    :param policy: object with `action_for(state, available)` or a mapping
        state -> extended action
    :param fallback: 'error' raises PolicyUndefined, 'first' takes the first
        canonical action
    """
    return [_choice_at(explicit, i, policy, fallback) for i in range(explicit.n_states)]


# -----------------------------------------------------------------
# Induced chains


class InducedChain:
    """
    Markov chain of a fixed policy, stored sparsely. `states` holds explicit
    state indices; classification follows from bottom SCCs.
    """

    def __init__(
        self,
        states: Sequence[int],
        rows: np.ndarray,
        cols: np.ndarray,
        probs: np.ndarray,
    ):
        self.states = list(states)
        self.rows = np.asarray(rows, dtype=np.int64)
        self.cols = np.asarray(cols, dtype=np.int64)
        self.probs = np.asarray(probs, dtype=float)

        edges = {(int(i), int(j)) for i, j, p in zip(self.rows, self.cols, self.probs) if p > 0}
        self.recurrent_classes = bottom_components(range(self.n), edges)
        recurrent = set().union(*self.recurrent_classes) if self.recurrent_classes else set()
        self.transient = frozenset(range(self.n)) - recurrent
        self.class_of = {i: j for j, c in enumerate(self.recurrent_classes) for i in c}

    @property
    def n(self) -> int:
        return len(self.states)

    def matrix(self) -> np.ndarray:
        P = np.zeros((self.n, self.n))
        np.add.at(P, (self.rows, self.cols), self.probs)
        return P

    def apply(self, vector: np.ndarray) -> np.ndarray:
        """
        P @ vector without densifying
        """
        return np.bincount(self.rows, weights=self.probs * vector[self.cols], minlength=self.n)


def induced_chain(explicit: ExplicitProduct, policy: Any, fallback: str = "error") -> InducedChain:
    """
    Chain over the states reachable from the initial states under `policy`.
    States without actions become absorbing.
    """
    choices = policy if isinstance(policy, list) else None
    local: dict[int, int] = {}
    order: list[int] = []
    queue: deque[int] = deque()
    for i in explicit.initial:
        if i not in local:
            local[i] = len(order)
            order.append(i)
            queue.append(i)

    rows, cols, probs = [], [], []
    while queue:
        i = queue.popleft()
        if choices is not None:
            k = choices[i]
        else:
            k = _choice_at(explicit, i, policy, fallback)
        if k == DEAD_END:
            successors = [(i, 1.0)]
        else:
            successors = explicit.transitions[i][k]
        for j, p in successors:
            if j not in local:
                local[j] = len(order)
                order.append(j)
                queue.append(j)
            rows.append(local[i])
            cols.append(local[j])
            probs.append(p)

    chain = InducedChain(order, np.array(rows), np.array(cols), np.array(probs))
    logger.debug(
        f"Induced chain: {chain.n} states, {len(chain.recurrent_classes)} recurrent classes"
    )
    return chain


def _choice_at(explicit: ExplicitProduct, i: int, policy: Any, fallback: str) -> int:
    available = explicit.actions[i]
    if not available:
        return DEAD_END
    x = explicit.states[i]
    u = policy.action_for(x, available) if hasattr(policy, "action_for") else policy.get(x)
    if u is None or u not in available:
        if fallback != "first":
            raise PolicyUndefined(f"Policy undefined at {explicit.product.describe(x)}", x)
        logger.warning(f"Policy undefined at {explicit.product.describe(x)}, using first action")
        return 0
    return available.index(u)


class LemmaReport(BaseModel):
    """
    Recurrent classes that meet all accepting sets, none, or only some
    """

    all_sets: list[int] = Field(default_factory=list)
    no_sets: list[int] = Field(default_factory=list)
    violations: list[list[str]] = Field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def summary(self) -> str:
        text = (
            f"{len(self.all_sets)} recurrent classes meet every accepting set, "
            f"{len(self.no_sets)} meet none"
        )
        for states in self.violations:
            text += "\n  partial class: " + ", ".join(states[:10])
        return text


def check_lemma_accepting_sets(
    chain: InducedChain, accepting: Sequence[frozenset[int]], explicit: ExplicitProduct | None = None
) -> LemmaReport:
    """
    Every recurrent class should intersect either all or none of the
    accepting sets (given as explicit state indices)
    """
    report = LemmaReport()
    for j, members in enumerate(chain.recurrent_classes):
        states = {chain.states[i] for i in members}
        hits = [bool(states & f) for f in accepting]
        if all(hits):
            report.all_sets.append(j)
        elif not any(hits):
            report.no_sets.append(j)
        else:
            names = sorted(
                explicit.product.describe(explicit.states[i]) if explicit else str(i)
                for i in states
            )
            report.violations.append(names)
    return report


def accepting_classes(chain: InducedChain, accepting: Sequence[frozenset[int]]) -> list[int]:
    out = []
    for j, members in enumerate(chain.recurrent_classes):
        states = {chain.states[i] for i in members}
        if all(states & f for f in accepting):
            out.append(j)
    return out


# Induced chains
# -----------------------------------------------------------------


# -----------------------------------------------------------------
# Expected return


class ExpectedReturnModel:
    """
    Explicit product flattened into choice arrays for vectorized Bellman
    backups. Choice c belongs to state `choice_state[c]`; the choices of a
    state are contiguous, starting at `offsets[state]`. The reward of a
    choice is Λ(x) - β·c_V(x, u). States without actions get one zero-reward
    self-loop.
    """

    def __init__(self, explicit: ExplicitProduct, reward: RewardConfig):
        self.explicit = explicit
        self.gamma = reward.gamma
        self.n = explicit.n_states

        offsets = []
        choice_state = []
        rewards = []
        t_choice, t_target, t_prob = [], [], []
        self.dead = []
        c = 0
        for i in range(self.n):
            offsets.append(c)
            accepting = reward.r_acc if explicit.membership(i) else 0.0
            rows = explicit.transitions[i]
            if not rows:
                self.dead.append(i)
                choice_state.append(i)
                rewards.append(0.0)
                t_choice.append(c)
                t_target.append(i)
                t_prob.append(1.0)
                c += 1
                continue
            for k, row in enumerate(rows):
                choice_state.append(i)
                rewards.append(accepting - reward.beta * explicit.costs[i][k])
                for j, p in row:
                    t_choice.append(c)
                    t_target.append(j)
                    t_prob.append(p)
                c += 1

        self.offsets = np.array(offsets, dtype=np.int64)
        self.choice_state = np.array(choice_state, dtype=np.int64)
        self.reward = np.array(rewards, dtype=float)
        self.t_choice = np.array(t_choice, dtype=np.int64)
        self.t_target = np.array(t_target, dtype=np.int64)
        self.t_prob = np.array(t_prob, dtype=float)

    @property
    def n_choices(self) -> int:
        return len(self.choice_state)

    def q_values(self, U: np.ndarray) -> np.ndarray:
        expected = np.bincount(
            self.t_choice, weights=self.t_prob * U[self.t_target], minlength=self.n_choices
        )
        return self.reward + self.gamma * expected

    def choice_index(self, choices: Sequence[int]) -> np.ndarray:
        """
        Flat choice index per state; dead ends map to their self-loop
        """
        return np.array(
            [self.offsets[i] + max(k, 0) for i, k in enumerate(choices)], dtype=np.int64
        )


def value_iteration(
    model: ExpectedReturnModel, tolerance: float = TOLERANCE, max_iterations: int = MAX_ITERATIONS
) -> tuple[np.ndarray, list[int]]:
    """
    Optimal utilities and a greedy policy (first maximizing action) by
    value iteration to the given sup-norm tolerance
    """
    U = np.zeros(model.n)
    for iteration in range(1, max_iterations + 1):
        Q = model.q_values(U)
        U_next = np.maximum.reduceat(Q, model.offsets)
        residual = float(np.max(np.abs(U_next - U))) if model.n else 0.0
        U = U_next
        if iteration % 1000 == 0:
            logger.debug(f"Value iteration {iteration}: residual {residual:.3e}")
        if residual < tolerance:
            break
    else:
        raise NoConvergence(f"Value iteration did not converge in {max_iterations} iterations")

    Q = model.q_values(U)
    best = U[model.choice_state]
    slack = 1e-9 * np.maximum(1.0, np.abs(best))
    candidate = np.where(Q >= best - slack, np.arange(model.n_choices), model.n_choices)
    first = np.minimum.reduceat(candidate, model.offsets)
    choices = [
        DEAD_END if i in model.dead else int(first[i] - model.offsets[i]) for i in range(model.n)
    ]
    logger.info(f"Value iteration converged after {iteration} iterations")
    return U, choices


def policy_return(
    model: ExpectedReturnModel,
    choices: Sequence[int],
    tolerance: float = TOLERANCE,
    max_iterations: int = MAX_ITERATIONS,
) -> np.ndarray:
    """
    Expected discounted return of a fixed policy from every state
    """
    picked = model.choice_index(choices)
    mask = np.isin(model.t_choice, picked)
    # choice -> state it is picked for
    owner = np.full(model.n_choices, -1, dtype=np.int64)
    owner[picked] = np.arange(model.n)
    rows = owner[model.t_choice[mask]]
    cols = model.t_target[mask]
    probs = model.t_prob[mask]
    reward = model.reward[picked]

    U = np.zeros(model.n)
    for _ in range(max_iterations):
        U_next = reward + model.gamma * np.bincount(
            rows, weights=probs * U[cols], minlength=model.n
        )
        residual = float(np.max(np.abs(U_next - U))) if model.n else 0.0
        U = U_next
        if residual < tolerance:
            return U
    raise NoConvergence(f"Policy evaluation did not converge in {max_iterations} iterations")


def _absorption(chain: InducedChain, start: int) -> np.ndarray:
    """
    Probability of ending up in each recurrent class from chain state `start`
    """
    n_classes = len(chain.recurrent_classes)
    if start in chain.class_of:
        out = np.zeros(n_classes)
        out[chain.class_of[start]] = 1.0
        return out
    transient = sorted(chain.transient)
    pos = {i: k for k, i in enumerate(transient)}
    A = np.eye(len(transient))
    B = np.zeros((len(transient), n_classes))
    for i, j, p in zip(chain.rows, chain.cols, chain.probs):
        if i in pos:
            if j in pos:
                A[pos[i], pos[j]] -= p
            else:
                B[pos[i], chain.class_of[int(j)]] += p
    return np.linalg.solve(A, B)[pos[start]]


def stationary_distribution(chain: InducedChain, members: frozenset[int]) -> dict[int, float]:
    """
    Stationary distribution of a closed irreducible class
    """
    states = sorted(members)
    pos = {i: k for k, i in enumerate(states)}
    P = np.zeros((len(states), len(states)))
    for i, j, p in zip(chain.rows, chain.cols, chain.probs):
        if i in pos:
            P[pos[i], pos[j]] += p
    A = np.vstack([P.T - np.eye(len(states)), np.ones(len(states))])
    b = np.zeros(len(states) + 1)
    b[-1] = 1.0
    pi = np.linalg.lstsq(A, b, rcond=None)[0]
    return {i: float(pi[pos[i]]) for i in states}


def expected_violation(explicit: ExplicitProduct, choices: Sequence[int]) -> float:
    """
    Long-run average violation cost per step from the initial state, i.e. the
    average cost of each recurrent class weighted by its absorption
    probability
    """
    chain = induced_chain(explicit, list(choices))
    absorb = _absorption(chain, 0)
    total = 0.0
    for j, members in enumerate(chain.recurrent_classes):
        if absorb[j] <= 0.0:
            continue
        pi = stationary_distribution(chain, members)
        cost = 0.0
        for i, weight in pi.items():
            state = chain.states[i]
            k = choices[state]
            cost += weight * (explicit.costs[state][k] if k != DEAD_END else 0.0)
        total += absorb[j] * cost
    return total


def oracle(
    explicit: ExplicitProduct, reward: RewardConfig, tolerance: float = TOLERANCE
) -> tuple[float, list[int], float]:
    """
    Optimal return at the initial state, the optimal choices and their
    expected violation
    """
    model = ExpectedReturnModel(explicit, reward)
    U, choices = value_iteration(model, tolerance)
    return float(U[explicit.initial[0]]), choices, expected_violation(explicit, choices)


# Expected return
# -----------------------------------------------------------------


# -----------------------------------------------------------------
# Structural checks


def amecs(explicit: ExplicitProduct) -> list[tuple[frozenset, dict]]:
    """
    Maximal end components meeting every accepting set
    """
    full = explicit.product.ldgba.full_frontier
    result = []
    for states, actions in maximal_end_components(explicit.enabled()):
        covered = 0
        for i in states:
            covered |= explicit.membership(i)
        if covered == full:
            result.append((states, actions))
    return result


class Theorem1Report(BaseModel):
    """
    Outcome of the three relaxed-product properties on one instance
    """

    relaxed_states: int = 0
    standard_states: int = 0
    relaxed_amecs: int = 0
    standard_amecs: int = 0
    has_relaxed_amec: bool = False
    transitions_preserved: bool = False
    amecs_contained: bool = False
    counterexamples: list[str] = Field(default_factory=list)

    @property
    def feasible(self) -> bool:
        return self.standard_amecs > 0

    @property
    def ok(self) -> bool:
        return self.has_relaxed_amec and self.transitions_preserved and self.amecs_contained

    def summary(self) -> str:
        lines = [
            f"relaxed product: {self.relaxed_states} states, {self.relaxed_amecs} AMECs",
            f"standard product: {self.standard_states} states, {self.standard_amecs} AMECs",
            f"  relaxed AMEC exists:          {'PASS' if self.has_relaxed_amec else 'FAIL'}",
            f"  standard transitions kept:    {'PASS' if self.transitions_preserved else 'FAIL'}",
            f"  standard AMECs contained:     {'PASS' if self.amecs_contained else 'FAIL'}",
        ]
        lines += [f"  counterexample: {c}" for c in self.counterexamples[:10]]
        return "\n".join(lines)


def check_theorem1(
    mdp: LabeledMdp,
    ldgba: Ldgba,
    budget: int = DEFAULT_BUDGET,
    reroute_blocked: bool = False,
) -> Theorem1Report:
    """
    Compare the relaxed product against the standard one: a relaxed AMEC
    exists, every standard transition is kept and every standard AMEC lies
    inside a relaxed one
    """
    relaxed = build_relaxed_product(mdp, ldgba, budget=budget, reroute_blocked=reroute_blocked)
    standard = build_standard_product(mdp, ldgba, budget=budget)
    report = Theorem1Report(relaxed_states=relaxed.n_states, standard_states=standard.n_states)

    relaxed_amecs = amecs(relaxed)
    standard_amecs = amecs(standard)
    report.relaxed_amecs = len(relaxed_amecs)
    report.standard_amecs = len(standard_amecs)
    report.has_relaxed_amec = bool(relaxed_amecs)

    relaxed_transitions = relaxed.transition_set()
    missing = standard.transition_set() - relaxed_transitions
    report.transitions_preserved = not missing
    describe = relaxed.product.describe
    for x, u, y, p in sorted(missing)[:10]:
        report.counterexamples.append(
            f"{describe(x)} --{relaxed.product.describe_action(u)}/{p:g}--> {describe(y)}"
        )

    relaxed_sets = [{relaxed.states[i] for i in states} for states, _ in relaxed_amecs]
    report.amecs_contained = True
    for states, _ in standard_amecs:
        members = {standard.states[i] for i in states}
        if not any(members <= r for r in relaxed_sets):
            report.amecs_contained = False
            report.counterexamples.append(
                "standard AMEC not contained: " + ", ".join(sorted(describe(x) for x in members)[:5])
            )

    logger.info(
        f"Relaxed product check: {'passed' if report.ok else 'FAILED'} "
        f"({report.relaxed_amecs} relaxed / {report.standard_amecs} standard AMECs)"
    )
    return report


# Structural checks
# -----------------------------------------------------------------


class PolicyUndefined(Exception):
    """Policy has no action at a reachable state"""

    def __init__(self, message: str, state=None):
        super().__init__(message)
        self.state = state


class NoConvergence(Exception):
    """Iteration cap reached"""

    pass
