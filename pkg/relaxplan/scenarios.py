#!/usr/bin/env python3
# License: BSD-3-Clause

"""
Scenario files, workspace builders (grid worlds, office world, explicit
MDPs), policy execution and trajectories
"""

import logging
import os
from typing import NamedTuple, Sequence

import numpy as np
import pandas as pd

from relaxplan.automata import Ldgba, load_automaton
from relaxplan.labeled_mdp import LabeledMdp
from relaxplan.models import (
    AutomatonRef,
    EpisodeConfig,
    ExplicitWorkspace,
    GridWorkspace,
    RegionWorkspace,
    RewardConfig,
    Scenario,
)
from relaxplan.product import (
    ExtendedAction,
    ProductState,
    RelaxedProductMdp,
    product_size,
)
from relaxplan.utils import format_label, format_sets, parse_label

logger = logging.getLogger(__name__)

DATA_DIR = os.path.join(os.path.dirname(__file__), "data")
SCENARIO_DIR = os.path.join(DATA_DIR, "scenarios")
AUTOMATA_DIR = os.path.join(DATA_DIR, "automata")

GRID_ACTIONS = ("FR", "BK", "TL", "TR", "ST")
STAY = "stay"

CASE1_PROPS = ["Base1", "Base2", "Base3", "Obs"]
CASE1_LABELS = {
    "r0c0": {"Base1": 1.0},
    "r0c4": {"Base2": 1.0},
    "r4c4": {"Base3": 1.0},
    "r2c1": {"Obs": 0.2},
    "r2c2": {"Obs": 0.1},
    "r2c3": {"Obs": 0.2},
}
TABLE1_SIZES = (15, 25, 40)

OFFICE_REGIONS = [f"S{i}" for i in (0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 12)]
OFFICE_ADJACENCY = [
    ("S1", "S4"),
    ("S4", "S8"),
    ("S8", "S12"),
    ("S12", "S1"),
    ("S7", "S4"),
    ("S7", "S8"),
    ("S7", "S6"),
    ("S0", "S1"),
    ("S2", "S1"),
    ("S3", "S4"),
    ("S5", "S4"),
    ("S9", "S8"),
    ("S10", "S12"),
]
OFFICE_CLOSED_DOORS = [("S5", "S4"), ("S10", "S12")]
OFFICE_PROPS = ["S0", "S2", "S3", "S5", "S9", "S10", "Obs"]

# relabeling one cell must not pay off against a round of accepting rewards
PATROL_REWARD = RewardConfig(r_acc=10.0, beta=25.0, gamma=0.999)
# the riskiest shortcut on the case-1 grid hits an obstacle with probability
# 0.005 and saves at most ~2.2 steps of r_acc, so beta must exceed 4400
CASE1_REWARD = RewardConfig(r_acc=10.0, beta=5000.0, gamma=0.999)


def cell_name(row: int, col: int) -> str:
    return f"r{row}c{col}"


def scenario_path(name: str) -> str:
    """
    Path of a bundled scenario, e.g. 'case1' or 'office_closed'
    """
    path = os.path.join(SCENARIO_DIR, f"{name}.json")
    if not os.path.isfile(path):
        raise ScenarioError(f"No bundled scenario named {name!r}")
    return path


def automaton_path(name: str) -> str:
    for ext in (".json", ".hoa"):
        path = os.path.join(AUTOMATA_DIR, f"{name}{ext}")
        if os.path.isfile(path):
            return path
    raise ScenarioError(f"No bundled automaton named {name!r}")


def load_scenario(path: str) -> Scenario:
    with open(path) as f:
        return Scenario.model_validate_json(f.read())


def save_scenario(scenario: Scenario, path: str):
    logger.info(f"Saving scenario to {path}")
    with open(path, "w") as f:
        f.write(scenario.model_dump_json(indent=1))


# -----------------------------------------------------------------
# Workspaces


def _label_rows(
    names: Sequence[str], table: dict[str, dict[str, float]], props: Sequence[str]
) -> list[dict[int, float]]:
    unknown = sorted(set(table) - set(names))
    if unknown:
        raise ScenarioError(f"Labels refer to unknown states {unknown}")
    rows = []
    for name in names:
        row: dict[int, float] = {}
        for label, p in table.get(name, {}).items():
            mask = parse_label(label, props)
            row[mask] = row.get(mask, 0.0) + p
        remainder = 1.0 - sum(row.values())
        if remainder > 1e-12:
            row[0] = row.get(0, 0.0) + remainder
        rows.append(row)
    return rows


def _initial_label(scenario: Scenario) -> int | None:
    if scenario.initial_label is None:
        return None
    return parse_label(scenario.initial_label, scenario.atomic_props)


def build_grid_mdp(scenario: Scenario) -> LabeledMdp:
    """
    One state per cell. FR/BK move a row up/down, succeeding with
    probability `success` and staying otherwise; TL/TR move a column
    left/right, succeeding with `success` and drifting onto each diagonal
    with `lateral`. Mass that would leave the grid stays in place. ST stays.
    """
    ws = scenario.workspace
    assert isinstance(ws, GridWorkspace)
    names = [cell_name(r, c) for r in range(ws.rows) for c in range(ws.cols)]

    def index(r, c):
        if 0 <= r < ws.rows and 0 <= c < ws.cols:
            return r * ws.cols + c
        return None

    transitions = {}
    for r in range(ws.rows):
        for c in range(ws.cols):
            s = index(r, c)
            moves = {
                "FR": [((r - 1, c), ws.success)],
                "BK": [((r + 1, c), ws.success)],
                "TL": [
                    ((r, c - 1), ws.success),
                    ((r - 1, c - 1), ws.lateral),
                    ((r + 1, c - 1), ws.lateral),
                ],
                "TR": [
                    ((r, c + 1), ws.success),
                    ((r - 1, c + 1), ws.lateral),
                    ((r + 1, c + 1), ws.lateral),
                ],
                "ST": [],
            }
            for a, action in enumerate(GRID_ACTIONS):
                row: dict[int, float] = {}
                for (rr, cc), p in moves[action]:
                    t = index(rr, cc)
                    t = s if t is None else t
                    row[t] = row.get(t, 0.0) + p
                remainder = 1.0 - sum(row.values())
                if remainder > 1e-12:
                    row[s] = row.get(s, 0.0) + remainder
                transitions[(s, a)] = row

    return LabeledMdp(
        state_names=names,
        action_names=GRID_ACTIONS,
        transitions=transitions,
        atomic_props=scenario.atomic_props,
        label_dist=_label_rows(names, ws.labels, scenario.atomic_props),
        initial_state=names.index(scenario.initial_state),
        initial_label=_initial_label(scenario),
    )


def build_region_mdp(scenario: Scenario) -> LabeledMdp:
    """
    One `go_<region>` action per neighbor and `stay`. Navigation succeeds
    with `success`; otherwise the robot ends up in one of the target's other
    neighbors uniformly, or stays if there is none.
    """
    ws = scenario.workspace
    assert isinstance(ws, RegionWorkspace)
    names = list(ws.regions)
    neighbors: dict[str, list[str]] = {r: [] for r in names}
    for a, b in ws.adjacency:
        neighbors[a].append(b)
        neighbors[b].append(a)
    actions = [STAY] + [f"go_{r}" for r in names]

    transitions = {}
    for s, region in enumerate(names):
        transitions[(s, 0)] = {s: 1.0}
        for target in sorted(neighbors[region], key=names.index):
            t = names.index(target)
            row = {t: ws.success}
            drift = [n for n in neighbors[target] if n != region]
            fail = 1.0 - ws.success
            if drift:
                for n in drift:
                    k = names.index(n)
                    row[k] = row.get(k, 0.0) + fail / len(drift)
            elif fail > 0:
                row[s] = row.get(s, 0.0) + fail
            transitions[(s, actions.index(f"go_{target}"))] = row

    return LabeledMdp(
        state_names=names,
        action_names=actions,
        transitions=transitions,
        atomic_props=scenario.atomic_props,
        label_dist=_label_rows(names, ws.labels, scenario.atomic_props),
        initial_state=names.index(scenario.initial_state),
        initial_label=_initial_label(scenario),
    )


def build_explicit_mdp(scenario: Scenario) -> LabeledMdp:
    ws = scenario.workspace
    assert isinstance(ws, ExplicitWorkspace)
    transitions = {}
    for row in ws.transitions:
        key = (ws.states.index(row.state), ws.actions.index(row.action))
        transitions[key] = {ws.states.index(t): p for t, p in row.successors.items()}
    return LabeledMdp(
        state_names=ws.states,
        action_names=ws.actions,
        transitions=transitions,
        atomic_props=scenario.atomic_props,
        label_dist=_label_rows(ws.states, ws.labels, scenario.atomic_props),
        initial_state=ws.states.index(scenario.initial_state),
        initial_label=_initial_label(scenario),
    )


def build_mdp(scenario: Scenario) -> LabeledMdp:
    try:
        match scenario.workspace.kind:
            case "grid":
                mdp = build_grid_mdp(scenario)
            case "regions":
                mdp = build_region_mdp(scenario)
            case "explicit":
                mdp = build_explicit_mdp(scenario)
            case _:
                raise ScenarioError(f"Unknown workspace kind {scenario.workspace.kind}")
    except (ValueError, KeyError) as e:
        raise ScenarioError(f"Invalid scenario {scenario.name}: {e}") from e

    report = mdp.validate()
    if not report.ok:
        raise ScenarioError(report.summary())
    return mdp


# Workspaces
# -----------------------------------------------------------------


class LoadedScenario(NamedTuple):
    scenario: Scenario
    mdp: LabeledMdp
    ldgba: Ldgba
    path: str | None

    def product(self, track_frontier: bool = True) -> RelaxedProductMdp:
        """
        Relaxed product with the scenario's blocking rule
        """
        return RelaxedProductMdp(
            self.mdp, self.ldgba, track_frontier, self.scenario.reroute_blocked
        )


def load(path: str, automaton: str | None = None) -> LoadedScenario:
    """
    Read a scenario file, build its MDP and load the task automaton aligned
    to the scenario's propositions. Automaton paths are relative to the
    scenario file.
    """
    scenario = load_scenario(path)
    mdp = build_mdp(scenario)
    if automaton is None:
        automaton = os.path.join(os.path.dirname(os.path.abspath(path)), scenario.automaton.path)
        if not os.path.exists(automaton):
            automaton = os.path.join(SCENARIO_DIR, scenario.automaton.path)
    ldgba = load_automaton(automaton)
    missing = set(ldgba.props) - set(scenario.atomic_props)
    if missing:
        raise ScenarioError(f"Automaton propositions {sorted(missing)} are not declared")
    logger.info(f"Loaded scenario {scenario.name}: {mdp!r}")
    return LoadedScenario(scenario, mdp, ldgba.with_props(scenario.atomic_props), path)


def build_grid_scenario(
    rows: int,
    cols: int,
    labels: dict[str, dict[str, float]],
    atomic_props: Sequence[str],
    initial_state: str,
    automaton: str,
    name: str = "grid",
    reward: RewardConfig | None = None,
    reroute_blocked: bool = False,
) -> tuple[Scenario, LabeledMdp]:
    scenario = Scenario(
        name=name,
        atomic_props=list(atomic_props),
        workspace=GridWorkspace(rows=rows, cols=cols, labels=labels),
        initial_state=initial_state,
        automaton=AutomatonRef(path=automaton),
        reward=reward or RewardConfig(),
        reroute_blocked=reroute_blocked,
    )
    return scenario, build_mdp(scenario)


def scaled_case1(scale: int) -> tuple[Scenario, LabeledMdp]:
    """
    The case-1 layout with every cell blown up into a scale×scale block
    """
    labels = {}
    for cell, table in CASE1_LABELS.items():
        r, c = (int(v) for v in cell[1:].split("c"))
        for dr in range(scale):
            for dc in range(scale):
                labels[cell_name(r * scale + dr, c * scale + dc)] = dict(table)
    size = 5 * scale
    return build_grid_scenario(
        size,
        size,
        labels,
        CASE1_PROPS,
        cell_name(4 * scale, 1 * scale),
        "../automata/case1.hoa",
        name=f"grid{size}",
        reward=CASE1_REWARD,
        reroute_blocked=True,
    )


def build_office_scenario(doors_closed: bool = False) -> tuple[Scenario, LabeledMdp]:
    adjacency = [
        pair for pair in OFFICE_ADJACENCY if not (doors_closed and pair in OFFICE_CLOSED_DOORS)
    ]
    labels = {room: {room: 1.0} for room in OFFICE_PROPS if room != "Obs"}
    labels["S6"] = {"Obs": 1.0}
    scenario = Scenario(
        name="office_closed" if doors_closed else "office_open",
        atomic_props=OFFICE_PROPS,
        workspace=RegionWorkspace(regions=OFFICE_REGIONS, adjacency=adjacency, labels=labels),
        initial_state="S1",
        automaton=AutomatonRef(path="../automata/office.hoa"),
        reward=PATROL_REWARD,
        episodes=EpisodeConfig(episodes=100_000, tau=100),
        reroute_blocked=True,
    )
    return scenario, build_mdp(scenario)


# -----------------------------------------------------------------
# Trajectories


class TrajectoryStep(NamedTuple):
    step: int
    state: ProductState
    action: ExtendedAction | None
    cost: float
    reward: float


TRAJECTORY_COLUMNS = ["step", "s", "l", "q", "T", "action", "cost", "reward"]


class Trajectory:
    """
    Rollout of a policy on the relaxed product. The last step carries no
    action.
    """

    def __init__(self, product: RelaxedProductMdp):
        self.product = product
        self.steps: list[TrajectoryStep] = []
        self.undefined: list[int] = []

    @property
    def states(self) -> list[ProductState]:
        return [step.state for step in self.steps]

    @property
    def total_reward(self) -> float:
        return sum(step.reward for step in self.steps)

    @property
    def total_violation(self) -> float:
        return sum(step.cost for step in self.steps)

    def visits(self) -> list[int]:
        """
        Number of accepting-state visits per accepting set
        """
        counts = [0] * self.product.n_sets
        for x in self.states[1:]:
            m = self.product.membership(x)
            for i in range(len(counts)):
                if m >> i & 1:
                    counts[i] += 1
        return counts

    def rounds(self) -> int:
        """
        Completed rounds, i.e. moves that exhausted the frontier
        """
        return sum(
            1 for x in self.states[1:] if x.T == 0 and self.product.membership(x)
        )

    def visited_mdp_states(self) -> list[str]:
        return [self.product.mdp.state_names[x.s] for x in self.states]

    def to_frame(self) -> pd.DataFrame:
        mdp = self.product.mdp
        ldgba = self.product.ldgba
        rows = []
        for step in self.steps:
            x = step.state
            rows.append(
                {
                    "step": step.step,
                    "s": mdp.state_names[x.s],
                    "l": format_label(x.l, mdp.atomic_props),
                    "q": ldgba.state_names[x.q],
                    "T": format_sets(x.T),
                    "action": self.product.describe_action(step.action) if step.action else "",
                    "cost": step.cost,
                    "reward": step.reward,
                }
            )
        return pd.DataFrame(rows, columns=TRAJECTORY_COLUMNS)

    def save_csv(self, path: str):
        logger.info(f"Saving trajectory to {path}")
        self.to_frame().to_csv(path, index=False)


def execute_policy(
    product: RelaxedProductMdp,
    policy,
    steps: int,
    seed: int = 0,
    reward: RewardConfig | None = None,
    start: ProductState | None = None,
) -> Trajectory:
    """
    Roll out `policy` for `steps` steps from the initial product state. At
    states where the policy is undefined the first canonical action is taken
    and the step is flagged.
    """
    reward = reward or RewardConfig()
    rng = np.random.default_rng(seed)
    trajectory = Trajectory(product)
    x = start or product.initial_state()
    for k in range(steps):
        available = product.enumerate_actions(x)
        if not available:
            logger.warning(f"No action available at {product.describe(x)}, stopping")
            break
        u = policy.action_for(x, available)
        if u is None:
            logger.warning(f"Policy undefined at {product.describe(x)}, using first action")
            trajectory.undefined.append(k)
            u = available[0]
        x_next, cost = product.step(x, u, rng)
        r = (reward.r_acc if product.is_accepting(x) else 0.0) - reward.beta * cost
        trajectory.steps.append(TrajectoryStep(k, x, u, cost, r))
        x = x_next
    trajectory.steps.append(TrajectoryStep(len(trajectory.steps), x, None, 0.0, 0.0))
    logger.info(
        f"Executed {len(trajectory.steps) - 1} steps: reward {trajectory.total_reward:g}, "
        f"violation {trajectory.total_violation:g}, rounds {trajectory.rounds()}"
    )
    return trajectory


def validate_trajectory(product: RelaxedProductMdp, trajectory: Trajectory) -> list[str]:
    """
    Problems found when replaying a trajectory against the transition
    kernel; empty when every step has positive probability and the logged
    cost matches
    """
    problems = []
    for step, following in zip(trajectory.steps, trajectory.steps[1:]):
        x, u = step.state, step.action
        if u is None or u not in product.enumerate_actions(x):
            problems.append(f"step {step.step}: action {u} not enabled")
            continue
        if product.transition_dist(x, u).get(following.state, 0.0) <= 0.0:
            problems.append(f"step {step.step}: successor has probability 0")
        if abs(product.violation_cost(x, u) - step.cost) > 1e-12:
            problems.append(f"step {step.step}: cost mismatch")
    return problems


def read_trajectory_csv(path: str) -> pd.DataFrame:
    return pd.read_csv(path, keep_default_na=False)


# Trajectories
# -----------------------------------------------------------------


def stats_table(sizes: Sequence[int] = TABLE1_SIZES) -> pd.DataFrame:
    """
    Workspace size, MDP states and (s, q) product states of the scaled
    case-1 grids
    """
    ldgba = load_automaton(automaton_path("case1"))
    rows = []
    for size in sizes:
        if size % 5:
            raise ScenarioError(f"Grid size {size} is not a multiple of 5")
        _, mdp = scaled_case1(size // 5)
        rows.append(
            {
                "workspace": f"{size}x{size}",
                "mdp_states": mdp.n_states,
                "product_states": product_size(mdp, ldgba.with_props(mdp.atomic_props)),
            }
        )
    return pd.DataFrame(rows, columns=["workspace", "mdp_states", "product_states"])


class ScenarioError(Exception):
    """Malformed or unknown scenario"""

    pass
