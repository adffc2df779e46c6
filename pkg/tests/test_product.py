import logging
import time
import unittest

import numpy as np
from relaxplan.automata import Atom, Edge, Gba, Ldgba, Not, TrueGuard, load_automaton
from relaxplan.labeled_mdp import LabeledMdp
from relaxplan.product import (
    EPSILON,
    BudgetExceeded,
    ExtendedAction,
    InvalidAction,
    ProductState,
    RelaxedProductMdp,
    build_relaxed_product,
    build_standard_product,
    eval_vector,
    product_size,
    rho,
)
from relaxplan.scenarios import automaton_path, load, scaled_case1, scenario_path

logging.getLogger("relaxplan.product").setLevel(logging.DEBUG)


def noisy_mdp() -> LabeledMdp:
    """
    s0 --go--> s1 (0.9) / s2 (0.1); s1 shows {a} w.p. 0.8 and {} w.p. 0.2
    """
    return LabeledMdp(
        state_names=["s0", "s1", "s2"],
        action_names=["go", "stay", "left", "right"],
        transitions={
            (0, 0): {1: 0.9, 2: 0.1},
            (0, 1): {0: 1.0},
            (0, 2): {0: 1.0},
            (0, 3): {0: 1.0},
            (1, 1): {1: 1.0},
            (2, 1): {2: 1.0},
        },
        atomic_props=["a"],
        label_dist=[{0: 1.0}, {1: 0.8, 0: 0.2}, {0: 1.0}],
    )


def recurrence_automaton() -> Ldgba:
    """
    Two deterministic states: q0 moves to the accepting q1 on a
    """
    gba = Gba(
        ["a"],
        [
            [Edge(Atom(0), 1), Edge(Not(Atom(0)), 0)],
            [Edge(Atom(0), 1), Edge(Not(Atom(0)), 0)],
        ],
        0,
        [{1}],
    )
    return Ldgba(gba, [0, 1])


class TestRelaxedProduct(unittest.TestCase):
    def setUp(self):
        self.logger = logging.getLogger(__name__)
        self.logger.setLevel(logging.DEBUG)
        self.product = RelaxedProductMdp(noisy_mdp(), recurrence_automaton())

    def test_eval_vector(self):
        self.logger.info("\n\n Testing evaluation vectors \n\n")

        np.testing.assert_array_equal(eval_vector(0b01, 2), [1, 0])
        np.testing.assert_array_equal(eval_vector(0, 2), [0, 0])
        np.testing.assert_array_equal(eval_vector(0b111, 3), [1, 1, 1])
        self.assertEqual(rho(0b01, 0b10), 2)
        self.assertEqual(rho(0b11, 0b11), 0)

    def test_enumerate_actions(self):
        self.logger.info("\n\n Testing extended actions \n\n")

        x = self.product.initial_state()
        actions = self.product.enumerate_actions(x)
        # 4 MDP actions times 2 automaton successors
        self.assertEqual(len(actions), 8)
        self.assertEqual(list(actions), sorted(actions))
        self.assertFalse(any(u.is_epsilon for u in actions))

        gba = Gba(["a"], [[], [Edge(TrueGuard(), 1)]], 0, [{1}], epsilon={0: [1]})
        product = RelaxedProductMdp(noisy_mdp(), Ldgba(gba, [1]))
        actions = product.enumerate_actions(product.initial_state())
        self.assertEqual(actions, (ExtendedAction(EPSILON, 1),))

    def test_transition_dist(self):
        self.logger.info("\n\n Testing transition distribution \n\n")

        x = self.product.initial_state()
        dist = self.product.transition_dist(x, ExtendedAction(0, 1))
        T = 0
        expected = {
            ProductState(1, 1, 1, T): 0.72,
            ProductState(1, 0, 1, T): 0.18,
            ProductState(2, 0, 1, T): 0.1,
        }
        self.assertEqual(set(dist), set(expected))
        for y, p in expected.items():
            self.assertAlmostEqual(dist[y], p)
        self.assertAlmostEqual(sum(dist.values()), 1.0)

        stay = self.product.transition_dist(x, ExtendedAction(1, 0))
        self.assertEqual(stay, {ProductState(0, 0, 0, 1): 1.0})

        with self.assertRaises(InvalidAction):
            self.product.transition_dist(x, ExtendedAction(EPSILON, 1))

    def test_epsilon_transition(self):
        self.logger.info("\n\n Testing ε-transition \n\n")

        ldgba = load_automaton(automaton_path("fg_a"))
        product = RelaxedProductMdp(noisy_mdp(), ldgba)
        x = product.initial_state()
        u = ExtendedAction(EPSILON, 1)
        self.assertIn(u, product.enumerate_actions(x))
        self.assertEqual(
            product.transition_dist(x, u), {ProductState(x.s, x.l, 1, 0): 1.0}
        )
        self.assertEqual(product.violation_cost(x, u), 0.0)

        y, cost = product.step(x, u, np.random.default_rng(0))
        self.assertEqual((y.s, y.l, y.q), (x.s, x.l, 1))
        self.assertEqual(cost, 0.0)

    def test_violation_cost(self):
        self.logger.info("\n\n Testing violation cost \n\n")

        x = self.product.initial_state()
        self.assertEqual(x.l, 0)
        # the label {} satisfies !a but not a
        self.assertEqual(self.product.violation_cost(x, ExtendedAction(0, 0)), 0.0)
        self.assertEqual(self.product.violation_cost(x, ExtendedAction(0, 1)), 1.0)

        y, cost = self.product.step(x, ExtendedAction(1, 1), np.random.default_rng(0))
        self.assertEqual(cost, 1.0)
        self.assertEqual(y.q, 1)
        self.assertEqual(y.T, 0)

    def test_step_is_seeded(self):
        self.logger.info("\n\n Testing seeded steps \n\n")

        def rollout(seed):
            rng = np.random.default_rng(seed)
            x = self.product.initial_state()
            out = []
            for _ in range(10):
                u = self.product.enumerate_actions(x)[0]
                x, _ = self.product.step(x, u, rng)
                out.append(x)
            return out

        self.assertEqual(rollout(3), rollout(3))

    def test_step_rejects_missing_edge(self):
        self.logger.info("\n\n Testing invalid actions \n\n")

        x = self.product.initial_state()
        with self.assertRaises(InvalidAction):
            self.product.step(x, ExtendedAction(EPSILON, 0), np.random.default_rng(0))


class TestProductSize(unittest.TestCase):
    def setUp(self):
        self.logger = logging.getLogger(__name__)
        self.logger.setLevel(logging.DEBUG)

    def test_case1(self):
        self.logger.info("\n\n Testing case-1 product size \n\n")

        loaded = load(scenario_path("case1"))
        self.assertEqual(loaded.mdp.n_states, 25)
        self.assertEqual(product_size(loaded.mdp, loaded.ldgba), 50)

        explicit = RelaxedProductMdp(loaded.mdp, loaded.ldgba).explore()
        self.assertEqual(explicit.origin_pairs(), 50)

    def test_scaled_grids(self):
        self.logger.info("\n\n Testing scaled grid product sizes \n\n")

        ldgba = load_automaton(automaton_path("case1"))
        for scale, mdp_states, product_states in [(3, 225, 450), (5, 625, 1250), (8, 1600, 3200)]:
            start = time.time()
            _, mdp = scaled_case1(scale)
            self.assertEqual(mdp.n_states, mdp_states)
            self.assertEqual(product_size(mdp, ldgba.with_props(mdp.atomic_props)), product_states)
            self.assertLess(time.time() - start, 1.0)

    def test_accept_all(self):
        self.logger.info("\n\n Testing product with the trivial automaton \n\n")

        mdp = noisy_mdp()
        ldgba = load_automaton(automaton_path("accept_all"))
        self.assertEqual(product_size(mdp, ldgba.with_props(mdp.atomic_props)), mdp.n_states)

        explicit = RelaxedProductMdp(mdp, ldgba).explore()
        self.assertEqual({x.s for x in explicit.states}, {0, 1, 2})
        for i, x in enumerate(explicit.states):
            self.assertEqual(len(explicit.actions[i]), len(mdp.actions(x.s)))
            self.assertTrue(all(c == 0.0 for c in explicit.costs[i]))

    def test_budget(self):
        self.logger.info("\n\n Testing exploration budget \n\n")

        loaded = load(scenario_path("case1"))
        with self.assertRaises(BudgetExceeded):
            RelaxedProductMdp(loaded.mdp, loaded.ldgba).explore(budget=100)


class TestStandardProduct(unittest.TestCase):
    def setUp(self):
        self.logger = logging.getLogger(__name__)
        self.logger.setLevel(logging.DEBUG)

    def test_label_forced(self):
        self.logger.info("\n\n Testing standard product \n\n")

        standard = build_standard_product(noisy_mdp(), recurrence_automaton())
        relaxed = RelaxedProductMdp(noisy_mdp(), recurrence_automaton())
        for i, x in enumerate(standard.states):
            for u in standard.actions[i]:
                self.assertEqual(relaxed.violation_cost(x, u), 0.0)
                self.assertEqual(u.target, 1 if x.l else 0)
        self.assertTrue(standard.transition_set() <= relaxed.explore().transition_set())


class TestBlockedMoves(unittest.TestCase):
    def setUp(self):
        self.logger = logging.getLogger(__name__)
        self.logger.setLevel(logging.DEBUG)
        self.loaded = load(scenario_path("case1"))

    def revisit(self, product):
        names = product.ldgba.state_names
        s = self.loaded.mdp.state_id("r0c0")
        # standing on Base1 again after its set was visited in this round
        x = ProductState(s, 0b0001, names.index("live{0}"), 0b110)
        return x, ExtendedAction(self.loaded.mdp.actions(s)[0], names.index("live{0}"))

    def test_reroute_to_unmarked_twin(self):
        self.logger.info("\n\n Testing rerouted repeat visits \n\n")

        product = RelaxedProductMdp(self.loaded.mdp, self.loaded.ldgba, reroute_blocked=True)
        names = product.ldgba.state_names
        self.assertEqual(product.ldgba.unmarked_twin[names.index("live{0}")], names.index("live"))
        self.assertIsNone(product.ldgba.unmarked_twin[names.index("live")])

        x, u = self.revisit(product)
        self.assertIn(u, product.enumerate_actions(x))
        self.assertEqual(product.violation_cost(x, u), 0.0)
        dist_ = product.transition_dist(x, u)
        self.assertAlmostEqual(sum(dist_.values()), 1.0)
        for y in dist_:
            self.assertEqual(y.q, names.index("live"))
            self.assertEqual(y.T, 0b110)
            self.assertFalse(product.is_accepting(y))

        # the bundled case-1 scenario opts in
        self.assertTrue(self.loaded.product().reroute_blocked)

    def test_strict_blocking(self):
        self.logger.info("\n\n Testing strictly blocked repeat visits \n\n")

        product = RelaxedProductMdp(self.loaded.mdp, self.loaded.ldgba)
        self.assertFalse(product.reroute_blocked)
        x, u = self.revisit(product)
        self.assertIsNone(product.resolve(u.target, x.T))
        self.assertNotIn(u, product.enumerate_actions(x))
        # every remaining move relabels the observation
        costs = [product.violation_cost(x, v) for v in product.enumerate_actions(x)]
        self.assertGreaterEqual(min(costs), 1.0)

        y, cost = product.step(x, u, np.random.default_rng(0))
        self.assertEqual((y.q, y.T), (x.q, x.T))
        self.assertEqual(cost, 0.0)

        # blocked moves are never offered anywhere in the explored product
        explicit = build_relaxed_product(self.loaded.mdp, self.loaded.ldgba)
        for y, actions in zip(explicit.states, explicit.actions):
            for v in actions:
                self.assertTrue(explicit.product.admissible(v.target, y.T))
