#!/usr/bin/env python3
# License: BSD-3-Clause

"""
Q-learning over the relaxed product with accepting rewards and violation
penalties, policy extraction and hyperparameter checks
"""

import logging
from typing import NamedTuple, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field
from tqdm import tqdm

from relaxplan.models import PolicyEntry, PolicyFile, RewardConfig, TrainingConfig
from relaxplan.product import ExplicitProduct, ExtendedAction, ProductState, RelaxedProductMdp
from relaxplan.verification import (
    DEAD_END,
    accepting_classes,
    induced_chain,
)

logger = logging.getLogger(__name__)

NO_FRONTIER = -1


def accepting_reward(product: RelaxedProductMdp, x: ProductState, reward: RewardConfig) -> float:
    return reward.r_acc if product.is_accepting(x) else 0.0


def immediate_reward(
    product: RelaxedProductMdp, x: ProductState, u: ExtendedAction, reward: RewardConfig
) -> float:
    """
    Λ(x) - β·c_V(x, u)
    """
    return accepting_reward(product, x, reward) - reward.beta * product.violation_cost(x, u)


class QTable:
    """
    Sparse Q-values and visit counts; unvisited pairs read as 0.

    :param key_frontier: key on (s, l, q, T); otherwise T is dropped from the key
    """

    def __init__(self, key_frontier: bool = True):
        self.key_frontier = key_frontier
        self.values: dict[tuple[ProductState, ExtendedAction], float] = {}
        self.counts: dict[tuple[ProductState, ExtendedAction], int] = {}

    def key(self, x: ProductState) -> ProductState:
        return x if self.key_frontier else x._replace(T=NO_FRONTIER)

    def get(self, x: ProductState, u: ExtendedAction) -> float:
        return self.values.get((self.key(x), u), 0.0)

    def count(self, x: ProductState, u: ExtendedAction) -> int:
        return self.counts.get((self.key(x), u), 0)

    def max_value(self, x: ProductState, actions: Sequence[ExtendedAction]) -> float:
        if not actions:
            return 0.0
        return max(self.get(x, u) for u in actions)

    def greedy(self, x: ProductState, actions: Sequence[ExtendedAction]) -> ExtendedAction:
        """
        First action (canonical order) attaining the maximum
        """
        best = actions[0]
        best_value = self.get(x, best)
        for u in actions[1:]:
            value = self.get(x, u)
            if value > best_value:
                best, best_value = u, value
        return best

    def __len__(self) -> int:
        return len(self.values)

    def to_frame(self) -> pd.DataFrame:
        rows = [
            {
                "s": k.s,
                "l": k.l,
                "q": k.q,
                "T": k.T,
                "action": u.action,
                "target": u.target,
                "value": value,
                "count": self.counts.get((k, u), 0),
            }
            for (k, u), value in sorted(self.values.items())
        ]
        return pd.DataFrame(
            rows, columns=["s", "l", "q", "T", "action", "target", "value", "count"]
        )

    @classmethod
    def from_frame(cls, df: pd.DataFrame, key_frontier: bool = True) -> "QTable":
        qt = cls(key_frontier=key_frontier)
        for row in df.itertuples(index=False):
            k = ProductState(int(row.s), int(row.l), int(row.q), int(row.T))
            u = ExtendedAction(int(row.action), int(row.target))
            qt.values[(k, u)] = float(row.value)
            qt.counts[(k, u)] = int(row.count)
        return qt

    def save_csv(self, path: str):
        logger.info(f"Saving Q-table to {path}")
        self.to_frame().to_csv(path, index=False, float_format="%.17g")

    @classmethod
    def load_csv(cls, path: str, key_frontier: bool = True) -> "QTable":
        return cls.from_frame(pd.read_csv(path), key_frontier=key_frontier)


def q_update(
    qt: QTable,
    x: ProductState,
    u: ExtendedAction,
    r: float,
    x_next: ProductState,
    next_actions: Sequence[ExtendedAction],
    gamma: float,
) -> float:
    """
    Q(x,u) <- (1-α)Q(x,u) + α[r + γ max_u' Q(x',u')] with α = 1/Count(x,u)
    counted after this visit
    """
    key = (qt.key(x), u)
    count = qt.counts.get(key, 0) + 1
    qt.counts[key] = count
    alpha = 1.0 / count
    target = r + gamma * qt.max_value(x_next, next_actions)
    value = (1.0 - alpha) * qt.values.get(key, 0.0) + alpha * target
    qt.values[key] = value
    return value


class Policy:
    """
    Greedy actions and utilities per Q-table key
    """

    def __init__(
        self,
        actions: dict[ProductState, ExtendedAction],
        utility: dict[ProductState, float],
        key_frontier: bool = True,
    ):
        self.actions = actions
        self.utility = utility
        self.key_frontier = key_frontier

    def key(self, x: ProductState) -> ProductState:
        return x if self.key_frontier else x._replace(T=NO_FRONTIER)

    def action_for(
        self, x: ProductState, available: Sequence[ExtendedAction] | None = None
    ) -> ExtendedAction | None:
        u = self.actions.get(self.key(x))
        if u is None or (available is not None and u not in available):
            return None
        return u

    def get(self, x: ProductState) -> ExtendedAction | None:
        return self.action_for(x)

    def __len__(self) -> int:
        return len(self.actions)

    def to_file(self, mdp_state_names: Sequence[str], scenario: str, automaton: str | None = None) -> PolicyFile:
        entries = [
            PolicyEntry(
                s=mdp_state_names[k.s],
                l=k.l,
                q=k.q,
                T=k.T,
                action=u.action,
                target=u.target,
                utility=self.utility.get(k, 0.0),
            )
            for k, u in sorted(self.actions.items())
        ]
        return PolicyFile(
            scenario=scenario,
            automaton=automaton,
            key_frontier=self.key_frontier,
            entries=entries,
        )

    @classmethod
    def from_file(cls, policy_file: PolicyFile, mdp_state_names: Sequence[str]) -> "Policy":
        index = {name: i for i, name in enumerate(mdp_state_names)}
        actions = {}
        utility = {}
        for e in policy_file.entries:
            k = ProductState(index[e.s], e.l, e.q, e.T)
            actions[k] = ExtendedAction(e.action, e.target)
            utility[k] = e.utility
        return cls(actions, utility, key_frontier=policy_file.key_frontier)


def extract_policy(qt: QTable, product: RelaxedProductMdp | None = None) -> Policy:
    """
    Greedy policy and utility U(x) = max_u Q(x,u) over the states of the
    table. With a product, every enabled action competes (unvisited ones at
    0); otherwise only the recorded ones.
    """
    recorded: dict[ProductState, list[ExtendedAction]] = {}
    for k, u in qt.values:
        recorded.setdefault(k, []).append(u)

    actions = {}
    utility = {}
    for k, acts in recorded.items():
        if product is not None and qt.key_frontier:
            candidates = product.enumerate_actions(k)
        else:
            candidates = tuple(sorted(acts))
        if not candidates:
            continue
        u = qt.greedy(k, candidates)
        actions[k] = u
        utility[k] = qt.get(k, u)
    return Policy(actions, utility, key_frontier=qt.key_frontier)


def extract_utility(qt: QTable, product: RelaxedProductMdp | None = None) -> dict[ProductState, float]:
    return extract_policy(qt, product).utility


# -----------------------------------------------------------------
# Training


class TrainingResult(NamedTuple):
    qtable: QTable
    policy: Policy
    curve: pd.DataFrame
    episodes_run: int
    converged_episode: int | None


def convergence_episode(
    totals: Sequence[float], window: int = 500, tolerance: float = 0.01, patience: int = 5
) -> int | None:
    """
    Episode after which the mean episode reward over consecutive windows
    changed by less than `tolerance` (relative) `patience` times in a row
    """
    means = [
        float(np.mean(totals[k : k + window]))
        for k in range(0, len(totals) - window + 1, window)
    ]
    stable = 0
    for k in range(1, len(means)):
        prev, cur = means[k - 1], means[k]
        if abs(cur - prev) <= tolerance * max(abs(prev), 1e-12):
            stable += 1
            if stable >= patience:
                return (k + 1) * window
        else:
            stable = 0
    return None


def learning_curve(totals: Sequence[float], window: int = 500) -> pd.DataFrame:
    episodes = np.arange(1, len(totals) + 1)
    return pd.DataFrame(
        {
            "episode": episodes,
            "mean_reward": pd.Series(totals, dtype=float).rolling(window, min_periods=1).mean(),
            "epsilon": 1.0 / episodes,
        }
    )


def random_start(product: RelaxedProductMdp, rng: np.random.Generator) -> ProductState:
    """
    Uniform MDP state, label drawn from its distribution, automaton at q0 and
    a full frontier
    """
    s = int(rng.integers(product.mdp.n_states))
    l = product.mdp.sample_label(s, rng)
    return ProductState(s, l, product.ldgba.initial, product.ldgba.full_frontier)


def run_episode(
    product: RelaxedProductMdp,
    qt: QTable,
    x: ProductState,
    epsilon: float,
    reward: RewardConfig,
    tau: int,
    rng: np.random.Generator,
) -> float:
    """
    One ε-greedy episode of at most `tau` updates; returns the accumulated
    reward
    """
    total = 0.0
    for _ in range(tau):
        actions = product.enumerate_actions(x)
        if not actions:
            break
        if rng.random() < epsilon:
            u = actions[int(rng.integers(len(actions)))]
        else:
            u = qt.greedy(x, actions)
        x_next, cost = product.step(x, u, rng)
        r = accepting_reward(product, x, reward) - reward.beta * cost
        q_update(qt, x, u, r, x_next, product.enumerate_actions(x_next), reward.gamma)
        total += r
        x = x_next
    return total


def train(
    product: RelaxedProductMdp,
    reward: RewardConfig | None = None,
    config: TrainingConfig | None = None,
) -> TrainingResult:
    """
    Episodic Q-learning with exploration rate 1/episode
    """
    reward = reward or RewardConfig()
    config = config or TrainingConfig()
    rng = np.random.default_rng(config.seed)
    qt = QTable(key_frontier=config.key_frontier)

    logger.info(
        f"Training for {config.episodes} episodes (tau={config.tau}, beta={reward.beta}, "
        f"gamma={reward.gamma}, r_acc={reward.r_acc}, start={config.start})"
    )

    totals: list[float] = []
    converged = None
    for episode in tqdm(range(1, config.episodes + 1), disable=not config.progress):
        if config.start == "fixed":
            x = product.initial_state()
        else:
            x = random_start(product, rng)
        totals.append(run_episode(product, qt, x, 1.0 / episode, reward, config.tau, rng))

        if config.stop_on_convergence and episode % config.window == 0:
            converged = convergence_episode(
                totals, config.window, config.convergence_tolerance, config.patience
            )
            if converged is not None:
                logger.info(f"Converged after {converged} episodes")
                break

    if converged is None:
        converged = convergence_episode(
            totals, config.window, config.convergence_tolerance, config.patience
        )
        if converged is None:
            logger.warning(f"Learning curve did not converge within {len(totals)} episodes")

    policy = extract_policy(qt, product)
    logger.info(f"Q-table holds {len(qt)} entries, policy covers {len(policy)} states")
    return TrainingResult(qt, policy, learning_curve(totals, config.window), len(totals), converged)


# Training
# -----------------------------------------------------------------


# -----------------------------------------------------------------
# Hyperparameter conditions


class HyperparameterReport(BaseModel):
    """
    Sufficient conditions on r_acc and β for an induced chain
    """

    class_sizes: list[int] = Field(default_factory=list, description="N_j per recurrent class")
    n_recurrent: int = Field(0, description="Total number of recurrent states")
    v_low: float = Field(0.0, description="Minimum violation entry in recurrent classes")
    p_low: float = Field(0.0, description="Minimum probability of reaching acceptance in N_j steps")
    recurrent_ok: bool = True
    transient_ok: bool = True

    @property
    def satisfied(self) -> bool:
        return self.recurrent_ok and self.transient_ok

    def summary(self) -> str:
        verdict = "satisfied" if self.satisfied else "violated"
        return (
            f"Hyperparameter conditions {verdict}: N_j={self.class_sizes}, "
            f"N={self.n_recurrent}, V={self.v_low:g}, P={self.p_low:g} "
            f"(recurrent {'ok' if self.recurrent_ok else 'violated'}, "
            f"transient {'ok' if self.transient_ok else 'violated'})"
        )


def hyperparameter_conditions(
    r_acc: float,
    beta: float,
    class_sizes: Sequence[int],
    hit_probabilities: Sequence[float],
    v_low: float,
    class_v_low: Sequence[float] | None = None,
) -> HyperparameterReport:
    """
    P_j·r + β·N_j²·V_j ≥ 0 for every accepting class j and r + β·N·V > 0,
    where V is the worst V_j. Without `class_v_low` every class uses `v_low`.
    """
    if class_v_low is None:
        class_v_low = [v_low] * len(class_sizes)
    n_recurrent = int(sum(class_sizes))
    recurrent_ok = all(
        p * r_acc + beta * n * n * v >= 0.0
        for n, p, v in zip(class_sizes, hit_probabilities, class_v_low)
    )
    transient_ok = r_acc + beta * n_recurrent * v_low > 0.0
    return HyperparameterReport(
        class_sizes=list(class_sizes),
        n_recurrent=n_recurrent,
        v_low=v_low,
        p_low=min(hit_probabilities) if hit_probabilities else 0.0,
        recurrent_ok=recurrent_ok,
        transient_ok=transient_ok,
    )


def validate_hyperparameters(
    explicit: ExplicitProduct, choices: Sequence[int], reward: RewardConfig
) -> HyperparameterReport:
    """
    Evaluate the conditions on the chain induced by `choices` (positions
    into the explicit product's action lists). The recurrent condition of an
    accepting class uses that class's own minimum violation entry; the
    transient condition counts every recurrent state and the worst entry.
    """
    chain = induced_chain(explicit, list(choices))
    accepting = explicit.accepting_sets()
    accepting_states = set().union(*accepting) if accepting else set()

    class_v = []
    for members in chain.recurrent_classes:
        worst = 0.0
        for i in members:
            state = chain.states[i]
            k = choices[state]
            if k != DEAD_END:
                worst = max(worst, explicit.costs[state][k])
        class_v.append(-worst if worst > 0.0 else 0.0)
    v_low = min(class_v, default=0.0)

    is_accepting = np.array([s in accepting_states for s in chain.states], dtype=float)
    sizes = []
    hits = []
    own_v = []
    for j in accepting_classes(chain, accepting):
        members = chain.recurrent_classes[j]
        n_j = len(members)
        reach = is_accepting.copy()
        for _ in range(n_j):
            reach = np.maximum(is_accepting, chain.apply(reach))
        sizes.append(n_j)
        hits.append(float(min(reach[i] for i in members)))
        own_v.append(class_v[j])

    report = hyperparameter_conditions(reward.r_acc, reward.beta, sizes, hits, v_low, own_v)
    report.class_sizes = [len(c) for c in chain.recurrent_classes]
    report.n_recurrent = int(sum(report.class_sizes))
    report.transient_ok = reward.r_acc + reward.beta * report.n_recurrent * v_low > 0.0
    logger.info(report.summary())
    return report


# Hyperparameter conditions
# -----------------------------------------------------------------


def save_policy(policy: Policy, path: str, mdp_state_names: Sequence[str], scenario: str, automaton: str | None = None):
    logger.info(f"Saving policy to {path}")
    policy_file = policy.to_file(mdp_state_names, scenario, automaton)
    with open(path, "w") as f:
        f.write(policy_file.model_dump_json(indent=1))


def load_policy_file(path: str) -> PolicyFile:
    with open(path) as f:
        return PolicyFile.model_validate_json(f.read())
