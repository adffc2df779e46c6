#!/usr/bin/env python3
import logging

from relaxplan.learning import train
from relaxplan.models import TrainingConfig
from relaxplan.plot import plot_learning_curve, plot_trajectory
from relaxplan.scenarios import execute_policy, load, scenario_path

logging.basicConfig()
logging.getLogger("relaxplan.learning").setLevel(logging.INFO)
logging.getLogger("relaxplan.scenarios").setLevel(logging.INFO)

name = "case1"  # Any bundled scenario, or a path to a scenario file
episodes = 20000
steps = 200

loaded = load(scenario_path(name))
product = loaded.product()

result = train(
    product, loaded.scenario.reward, TrainingConfig(episodes=episodes, tau=100, seed=0)
)
plot_learning_curve(result.curve, name, name)

trajectory = execute_policy(product, result.policy, steps, reward=loaded.scenario.reward)
plot_trajectory(loaded.scenario, trajectory, name)  # Only grid workspaces are drawn
print(f"Violation over {steps} steps: {trajectory.total_violation:g}")
print(f"Completed rounds: {trajectory.rounds()}")
