import logging
import os
import tempfile
import unittest

from relaxplan.learning import Policy, validate_hyperparameters
from relaxplan.models import RewardConfig
from relaxplan.product import RelaxedProductMdp
from relaxplan.scenarios import (
    CASE1_REWARD,
    OFFICE_REGIONS,
    TRAJECTORY_COLUMNS,
    ScenarioError,
    build_grid_scenario,
    build_office_scenario,
    execute_policy,
    load,
    load_scenario,
    read_trajectory_csv,
    save_scenario,
    scenario_path,
    stats_table,
    validate_trajectory,
)
from relaxplan.verification import (
    accepting_classes,
    check_lemma_accepting_sets,
    induced_chain,
    oracle,
)

logging.getLogger("relaxplan.scenarios").setLevel(logging.DEBUG)

SLOW = os.environ.get("RELAXPLAN_SLOW") == "1"
STRICT = RewardConfig(r_acc=10.0, beta=25.0, gamma=0.99)


def oracle_policy(explicit, choices) -> Policy:
    actions = {
        x: explicit.actions[i][k] for i, (x, k) in enumerate(zip(explicit.states, choices)) if k >= 0
    }
    return Policy(actions, {})


class TestWorkspaces(unittest.TestCase):
    def setUp(self):
        self.logger = logging.getLogger(__name__)
        self.logger.setLevel(logging.DEBUG)

    def test_case1_grid(self):
        self.logger.info("\n\n Testing the case-1 grid \n\n")

        loaded = load(scenario_path("case1"))
        mdp = loaded.mdp
        self.assertEqual(mdp.n_states, 25)
        self.assertEqual(mdp.state_names[mdp.initial_state], "r4c1")

        corner = mdp.state_id("r0c0")
        bump = mdp.transition(corner, mdp.action_id("FR"))
        self.assertEqual(set(bump), {corner})
        self.assertAlmostEqual(bump[corner], 1.0)
        turn = mdp.transition(corner, mdp.action_id("TR"))
        self.assertAlmostEqual(turn[mdp.state_id("r0c1")], 0.9)
        self.assertAlmostEqual(turn[mdp.state_id("r1c1")], 0.05)
        self.assertAlmostEqual(turn[corner], 0.05)

        obstacle = mdp.labels(mdp.state_id("r2c1"))
        self.assertAlmostEqual(obstacle[0b1000], 0.2)
        self.assertAlmostEqual(obstacle[0], 0.8)
        self.assertEqual(mdp.labels(corner), {0b0001: 1.0})

    def test_single_cell(self):
        self.logger.info("\n\n Testing a 1x1 grid \n\n")

        _, mdp = build_grid_scenario(1, 1, {}, ["a"], "r0c0", "../automata/accept_all.hoa")
        self.assertEqual(mdp.n_states, 1)
        for a in mdp.actions(0):
            self.assertEqual(set(mdp.transition(0, a)), {0})
        self.assertTrue(mdp.validate().ok)

    def test_office(self):
        self.logger.info("\n\n Testing the office world \n\n")

        _, mdp = build_office_scenario()
        self.assertEqual(list(mdp.state_names), OFFICE_REGIONS)
        s1 = mdp.state_id("S1")
        room = mdp.transition(s1, mdp.action_id("go_S0"))
        self.assertAlmostEqual(room[mdp.state_id("S0")], 0.9)
        self.assertAlmostEqual(room[s1], 0.1)

        corridor = mdp.transition(s1, mdp.action_id("go_S4"))
        self.assertAlmostEqual(corridor[mdp.state_id("S4")], 0.9)
        self.assertAlmostEqual(sum(corridor.values()), 1.0)
        self.assertNotIn(s1, corridor)

        _, closed = build_office_scenario(doors_closed=True)
        self.assertEqual(len(closed.actions(closed.state_id("S5"))), 1)
        self.assertNotIn(closed.state_id("S10"), closed.successors(closed.state_id("S12")))

    def test_save_and_load(self):
        self.logger.info("\n\n Testing scenario files \n\n")

        scenario, mdp = build_office_scenario(doors_closed=True)
        with tempfile.TemporaryDirectory() as tmpdir:
            path = os.path.join(tmpdir, "office.json")
            save_scenario(scenario, path)
            self.assertEqual(load_scenario(path), scenario)
            loaded = load(path)
        self.assertEqual(loaded.mdp.n_states, mdp.n_states)
        self.assertEqual(loaded.ldgba.n_sets, 6)
        self.assertTrue(scenario.reroute_blocked)
        self.assertTrue(loaded.product().reroute_blocked)

        # rerouting is opt-in
        self.assertFalse(load(scenario_path("fig1")).product().reroute_blocked)
        scenario, _ = build_grid_scenario(1, 1, {}, ["a"], "r0c0", "../automata/accept_all.hoa")
        self.assertFalse(scenario.reroute_blocked)

    def test_bad_scenarios(self):
        self.logger.info("\n\n Testing malformed scenarios \n\n")

        with self.assertRaises(ScenarioError):
            scenario_path("nowhere")
        with self.assertRaises(ScenarioError):
            build_grid_scenario(2, 2, {"r5c5": {"a": 1.0}}, ["a"], "r0c0", "../automata/accept_all.hoa")
        with self.assertRaises(ValueError):
            build_grid_scenario(2, 2, {"r0c0": {"b": 1.0}}, ["a"], "r0c0", "../automata/accept_all.hoa")

    def test_stats_table(self):
        self.logger.info("\n\n Testing the grid statistics table \n\n")

        table = stats_table([15, 25])
        self.assertEqual(list(table.mdp_states), [225, 625])
        self.assertEqual(list(table.product_states), [450, 1250])
        self.assertEqual(list(table.workspace), ["15x15", "25x25"])
        with self.assertRaises(ScenarioError):
            stats_table([12])


class TestTrajectories(unittest.TestCase):
    def setUp(self):
        self.logger = logging.getLogger(__name__)
        self.logger.setLevel(logging.DEBUG)
        loaded = load(scenario_path("fig1_feasible"))
        self.product = RelaxedProductMdp(loaded.mdp, loaded.ldgba)
        explicit = self.product.explore()
        _, choices, _ = oracle(explicit, STRICT)
        self.policy = oracle_policy(explicit, choices)

    def test_zero_steps(self):
        self.logger.info("\n\n Testing an empty rollout \n\n")

        trajectory = execute_policy(self.product, self.policy, 0)
        self.assertEqual(len(trajectory.steps), 1)
        self.assertIsNone(trajectory.steps[0].action)
        self.assertEqual(trajectory.total_violation, 0.0)
        self.assertEqual(trajectory.rounds(), 0)
        self.assertEqual(validate_trajectory(self.product, trajectory), [])

    def test_oracle_rollout(self):
        self.logger.info("\n\n Testing a rollout of the optimal policy \n\n")

        trajectory = execute_policy(self.product, self.policy, 30, seed=0, reward=STRICT)
        self.assertEqual(len(trajectory.steps), 31)
        self.assertEqual(trajectory.undefined, [])
        self.assertEqual(trajectory.total_violation, 0.0)
        self.assertGreaterEqual(trajectory.rounds(), 8)
        self.assertTrue(all(v > 0 for v in trajectory.visits()))
        self.assertEqual(validate_trajectory(self.product, trajectory), [])
        self.assertEqual(
            trajectory.visited_mdp_states()[:4], ["s0", "s1", "s2", "s0"]
        )

    def test_undefined_policy(self):
        self.logger.info("\n\n Testing a rollout with an empty policy \n\n")

        trajectory = execute_policy(self.product, Policy({}, {}), 5)
        self.assertEqual(trajectory.undefined, list(range(5)))
        self.assertEqual(validate_trajectory(self.product, trajectory), [])

    def test_tampered_trajectory(self):
        self.logger.info("\n\n Testing trajectory validation \n\n")

        trajectory = execute_policy(self.product, self.policy, 5)
        step = trajectory.steps[2]
        trajectory.steps[2] = step._replace(cost=step.cost + 1.0)
        problems = validate_trajectory(self.product, trajectory)
        self.assertEqual(len(problems), 1)
        self.assertIn("cost mismatch", problems[0])

    def test_csv(self):
        self.logger.info("\n\n Testing trajectory files \n\n")

        trajectory = execute_policy(self.product, self.policy, 6)
        with tempfile.TemporaryDirectory() as tmpdir:
            path = os.path.join(tmpdir, "trajectory.csv")
            trajectory.save_csv(path)
            df = read_trajectory_csv(path)
        self.assertEqual(list(df.columns), TRAJECTORY_COLUMNS)
        self.assertEqual(len(df), 7)
        self.assertEqual(df.s.iloc[0], "s0")
        self.assertEqual(df.action.iloc[-1], "")


class TestCase1Scenario(unittest.TestCase):
    """
    The bundled case-1 scenario solved exactly under its own reward settings
    """

    @classmethod
    def setUpClass(cls):
        cls.loaded = load(scenario_path("case1"))
        cls.product = cls.loaded.product()
        cls.explicit = cls.product.explore()
        cls.reward = cls.loaded.scenario.reward
        cls.value, cls.choices, cls.violation = oracle(cls.explicit, cls.reward, tolerance=1e-6)

    def setUp(self):
        self.logger = logging.getLogger(__name__)
        self.logger.setLevel(logging.DEBUG)

    def test_bundled_settings(self):
        self.logger.info("\n\n Testing zero violation under the bundled case-1 settings \n\n")

        self.assertTrue(self.loaded.scenario.reroute_blocked)
        self.assertTrue(self.product.reroute_blocked)
        self.assertEqual(self.reward, CASE1_REWARD)
        self.assertEqual(self.reward.gamma, 0.999)
        self.logger.info(
            f"{self.explicit.n_states} product states, value {self.value:.3f}, "
            f"violation {self.violation:.3g}"
        )
        self.assertGreater(self.value, 0.0)
        self.assertAlmostEqual(self.violation, 0.0, places=9)

        chain = induced_chain(self.explicit, self.choices)
        accepting = self.explicit.accepting_sets()
        self.assertEqual(len(accepting), 3)
        self.assertTrue(check_lemma_accepting_sets(chain, accepting, self.explicit).ok)
        self.assertTrue(accepting_classes(chain, accepting))

    def test_rollout(self):
        self.logger.info("\n\n Testing a 50-step case-1 rollout \n\n")

        policy = oracle_policy(self.explicit, self.choices)
        for seed in range(3):
            trajectory = execute_policy(self.product, policy, 50, seed=seed, reward=self.reward)
            self.assertEqual(trajectory.undefined, [])
            self.assertEqual(trajectory.total_violation, 0.0)
            self.assertTrue(all(v > 0 for v in trajectory.visits()), trajectory.visits())
            self.assertGreaterEqual(trajectory.rounds(), 1)
            self.assertEqual(validate_trajectory(self.product, trajectory), [])
            visited = set(trajectory.visited_mdp_states())
            self.assertTrue({"r0c0", "r0c4", "r4c4"} <= visited)
            self.assertFalse(visited & {"r2c1", "r2c2", "r2c3"})

    def test_hyperparameters(self):
        self.logger.info("\n\n Testing the hyperparameter conditions on case 1 \n\n")

        report = validate_hyperparameters(
            self.explicit, self.choices, RewardConfig(r_acc=10.0, beta=8.0, gamma=0.999)
        )
        self.assertEqual(report.v_low, 0.0)
        self.assertGreater(report.n_recurrent, 0)
        self.assertTrue(report.recurrent_ok, report.summary())
        self.assertTrue(report.transient_ok, report.summary())
        self.assertTrue(report.satisfied)

    def test_relabeling_pays_at_low_beta(self):
        self.logger.info("\n\n Testing case 1 with beta below the accepting reward \n\n")

        # relabeling an empty cell into the next base earns r_acc - beta = 2
        # per step, more than an honest round earns
        _, choices, violation = oracle(
            self.explicit, RewardConfig(r_acc=10.0, beta=8.0, gamma=0.99), tolerance=1e-6
        )
        self.logger.info(f"violation at beta 8: {violation:.3g}")
        self.assertGreater(violation, 0.0)

        report = validate_hyperparameters(
            self.explicit, choices, RewardConfig(r_acc=10.0, beta=8.0, gamma=0.999)
        )
        self.assertLess(report.v_low, 0.0)
        self.assertFalse(report.satisfied)

    def test_strict_blocking_forces_relabels(self):
        self.logger.info("\n\n Testing case 1 without rerouting \n\n")

        strict = RelaxedProductMdp(self.loaded.mdp, self.loaded.ldgba)
        self.assertFalse(strict.reroute_blocked)
        explicit = strict.explore()
        # a failed move off a base re-reads its label after the set was
        # visited, and only relabeling moves remain
        _, choices, violation = oracle(explicit, STRICT, tolerance=1e-6)
        self.logger.info(f"violation without rerouting: {violation:.3g}")
        self.assertGreater(violation, 0.0)
        chain = induced_chain(explicit, choices)
        self.assertTrue(accepting_classes(chain, explicit.accepting_sets()))


@unittest.skipUnless(SLOW, "set RELAXPLAN_SLOW=1")
class TestCaseStudies(unittest.TestCase):
    def setUp(self):
        self.logger = logging.getLogger(__name__)
        self.logger.setLevel(logging.DEBUG)

    def violation(self, name: str) -> float:
        loaded = load(scenario_path(name))
        explicit = loaded.product().explore(budget=20_000_000)
        reward = loaded.scenario.reward.model_copy(update={"gamma": 0.99})
        value, _, violation = oracle(explicit, reward, tolerance=1e-6)
        self.logger.info(f"{name}: {explicit.n_states} states, value {value:.3f}, violation {violation:.4f}")
        return violation

    def test_risk_levels(self):
        self.logger.info("\n\n Testing low and high obstacle risk \n\n")

        self.assertLess(self.violation("case3_low"), self.violation("case3_high"))

    def test_office_doors(self):
        self.logger.info("\n\n Testing the office with open and closed doors \n\n")

        self.assertAlmostEqual(self.violation("office_open"), 0.0, places=9)
        self.assertGreater(self.violation("office_closed"), 0.0)
