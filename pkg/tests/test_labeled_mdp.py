import itertools
import logging
import unittest

import numpy as np
from relaxplan.labeled_mdp import DomainError, LabeledMdp, SubMdp
from relaxplan.random_models import random_mdp
from relaxplan.utils import format_label, mask_from_props, parse_label

logging.getLogger("relaxplan.labeled_mdp").setLevel(logging.DEBUG)


def two_state_mdp(row=None, labels=None) -> LabeledMdp:
    return LabeledMdp(
        state_names=["s0", "s1"],
        action_names=["go", "stay"],
        transitions={
            (0, 0): row or {1: 1.0},
            (0, 1): {0: 1.0},
            (1, 0): {0: 0.5, 1: 0.5},
        },
        atomic_props=["a", "b"],
        label_dist=labels or [{1: 1.0}, {0: 0.25, 2: 0.75}],
    )


class TestLabeledMdp(unittest.TestCase):
    def setUp(self):
        self.logger = logging.getLogger(__name__)
        self.logger.setLevel(logging.DEBUG)

    def test_validate(self):
        self.logger.info("\n\n Testing MDP validation \n\n")

        report = two_state_mdp().validate()
        self.assertTrue(report.ok, report.summary())

        mdp = LabeledMdp(["s0"], ["stay"], {(0, 0): {0: 1.0, 3: 0.0}}, ["a"], [{0: 1.0, 4: 0.0}])
        self.assertTrue(mdp.validate().ok)

        mdp = LabeledMdp(["s0"], ["stay"], {(0, 0): {0: 0.5, 3: 0.5}}, ["a"], [{0: 1.0}])
        self.assertIn("targets unknown state 3", mdp.validate().summary())

    def test_rows_must_be_distributions(self):
        self.logger.info("\n\n Testing rejection of improper rows \n\n")

        with self.assertRaises(DomainError) as cm:
            two_state_mdp(row={1: 0.9})
        self.assertIn("p_S(0,0,.)", str(cm.exception))

        with self.assertRaises(DomainError) as cm:
            two_state_mdp(labels=[{1: 1.0}, {0: 0.35, 2: 0.75}])
        self.assertIn("p_L(1,.)", str(cm.exception))

        with self.assertRaises(DomainError):
            two_state_mdp(labels=[{1: 1.0}, {}])

        # rounding noise within tolerance is rescaled away
        mdp = two_state_mdp(row={0: 0.5, 1: 0.5 + 1e-12})
        self.assertAlmostEqual(sum(mdp.transition(0, 0).values()), 1.0, places=15)

    def test_state_without_actions(self):
        self.logger.info("\n\n Testing MDP with a dead state \n\n")

        mdp = LabeledMdp(["s0", "s1"], ["go"], {(0, 0): {1: 1.0}}, ["a"], [{0: 1.0}, {0: 1.0}])
        report = mdp.validate()
        self.assertFalse(report.ok)
        self.assertIn("s1 has no enabled action", report.summary())

    def test_initial_label(self):
        self.logger.info("\n\n Testing initial label \n\n")

        mdp = two_state_mdp()
        self.assertEqual(mdp.initial_label, 1)

        mdp = LabeledMdp(
            ["s0"], ["stay"], {(0, 0): {0: 1.0}}, ["a"], [{0: 1.0}], initial_label=1
        )
        self.assertFalse(mdp.validate().ok)

    def test_post(self):
        self.logger.info("\n\n Testing Post \n\n")

        mdp = two_state_mdp()
        self.assertEqual(mdp.post(0, 0), frozenset({1}))
        self.assertEqual(mdp.post(1, 0), frozenset({0, 1}))
        self.assertEqual(mdp.successors(0), frozenset({0, 1}))

        uniform = LabeledMdp(
            ["s0", "s1", "s2"],
            ["go"],
            {(s, 0): {0: 1 / 3, 1: 1 / 3, 2: 1 / 3} for s in range(3)},
            [],
            [{0: 1.0}] * 3,
        )
        self.assertEqual(len(uniform.post(0, 0)), 3)

        with self.assertRaises(DomainError):
            mdp.post(1, 1)
        with self.assertRaises(DomainError):
            mdp.state_id("s7")
        with self.assertRaises(DomainError):
            mdp.action_id("jump")

    def test_sample_step(self):
        self.logger.info("\n\n Testing sampling \n\n")

        mdp = two_state_mdp()
        rng = np.random.default_rng(1)
        self.assertEqual(mdp.sample_step(0, 0, rng)[0], 1)
        for _ in range(20):
            s_next, l_next = mdp.sample_step(0, 0, rng)
            self.assertIn(l_next, (0, 2))

        deterministic = LabeledMdp(["s0", "s1"], ["go"], {(0, 0): {1: 1.0}, (1, 0): {1: 1.0}}, ["a"], [{0: 1.0}, {1: 1.0}])
        self.assertEqual(deterministic.sample_step(0, 0, rng), (1, 1))

        first = [mdp.sample_step(1, 0, np.random.default_rng(7)) for _ in range(5)]
        second = [mdp.sample_step(1, 0, np.random.default_rng(7)) for _ in range(5)]
        self.assertEqual(first, second)

        counts = {0: 0, 1: 0}
        rng = np.random.default_rng(3)
        for _ in range(4000):
            counts[mdp.sample_step(1, 0, rng)[0]] += 1
        self.assertAlmostEqual(counts[0] / 4000, 0.5, delta=0.05)

    def test_maximal_end_components(self):
        self.logger.info("\n\n Testing MEC decomposition \n\n")

        absorbing = LabeledMdp(["s0"], ["stay"], {(0, 0): {0: 1.0}}, [], [{0: 1.0}])
        mecs = absorbing.maximal_end_components()
        self.assertEqual(len(mecs), 1)
        self.assertEqual(mecs[0].states, frozenset({0}))

        # two 2-cycles joined by a one-way bridge
        mdp = LabeledMdp(
            [f"s{i}" for i in range(4)],
            ["next", "bridge"],
            {
                (0, 0): {1: 1.0},
                (1, 0): {0: 1.0},
                (1, 1): {2: 1.0},
                (2, 0): {3: 1.0},
                (3, 0): {2: 1.0},
            },
            [],
            [{0: 1.0}] * 4,
        )
        mecs = mdp.maximal_end_components()
        self.assertEqual([m.states for m in mecs], [frozenset({0, 1}), frozenset({2, 3})])
        self.assertEqual(mecs[0].actions[1], frozenset({0}))

        # a probabilistic escape splits the component
        leaky = LabeledMdp(
            ["s0", "s1", "s2"],
            ["go"],
            {(0, 0): {1: 1.0}, (1, 0): {0: 0.5, 2: 0.5}, (2, 0): {2: 1.0}},
            [],
            [{0: 1.0}] * 3,
        )
        mecs = leaky.maximal_end_components()
        self.assertEqual([m.states for m in mecs], [frozenset({2})])

        sub = SubMdp(frozenset({0, 1}), {0: frozenset({0}), 1: frozenset({0})})
        self.assertEqual(len(mdp.maximal_end_components(sub)), 1)

    def test_labels(self):
        self.logger.info("\n\n Testing label helpers \n\n")

        props = ["Base1", "Base2", "Obs"]
        mask = mask_from_props(["Base1", "Obs"], props)
        self.assertEqual(mask, 0b101)
        self.assertEqual(format_label(mask, props), "Base1&Obs")
        self.assertEqual(parse_label("Base1&Obs", props), mask)
        self.assertEqual(format_label(0, props), "{}")
        self.assertEqual(parse_label("{}", props), 0)
        with self.assertRaises(KeyError):
            parse_label("Base4", props)


def _closed_actions(mdp: LabeledMdp, states: frozenset) -> dict[int, frozenset]:
    return {
        s: frozenset(a for a in mdp.actions(s) if mdp.post(s, a) <= states) for s in states
    }


def _is_end_component(mdp: LabeledMdp, states: frozenset) -> bool:
    """
    Every state keeps an action inside `states` and every state reaches every
    other one using only such actions
    """
    actions = _closed_actions(mdp, states)
    if not all(actions.values()):
        return False
    for start in states:
        reached = {start}
        frontier = [start]
        while frontier:
            s = frontier.pop()
            for a in actions[s]:
                for t in mdp.post(s, a) - reached:
                    reached.add(t)
                    frontier.append(t)
        if reached != states:
            return False
    return True


def brute_force_mecs(mdp: LabeledMdp) -> dict[frozenset, dict[int, frozenset]]:
    """
    All state sets that form an end component and have no strictly larger
    end component around them
    """
    components = [
        frozenset(subset)
        for k in range(1, mdp.n_states + 1)
        for subset in itertools.combinations(range(mdp.n_states), k)
        if _is_end_component(mdp, frozenset(subset))
    ]
    maximal = [c for c in components if not any(c < other for other in components)]
    return {c: _closed_actions(mdp, c) for c in maximal}


class TestMecOracle(unittest.TestCase):
    def setUp(self):
        self.logger = logging.getLogger(__name__)
        self.logger.setLevel(logging.DEBUG)

    def test_matches_brute_force(self):
        self.logger.info("\n\n Testing MEC decomposition against exhaustive search \n\n")

        rng = np.random.default_rng(11)
        for k in range(40):
            mdp = random_mdp(rng, n_states=8, n_actions=3, max_support=3)
            expected = brute_force_mecs(mdp)
            found = {m.states: dict(m.actions) for m in mdp.maximal_end_components()}
            self.assertEqual(set(found), set(expected), f"instance {k}")
            for states, actions in expected.items():
                self.assertEqual(found[states], actions, f"instance {k}")
