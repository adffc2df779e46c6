#!/usr/bin/env python3
import logging

from relaxplan.scenarios import load, scenario_path
from relaxplan.verification import oracle

logging.basicConfig()
logging.getLogger("relaxplan.verification").setLevel(logging.INFO)

# With the doors of S5 and S10 closed the patrol task is infeasible, and the
# optimal policy trades a small violation per step for completed rounds.
for name in ["office_open", "office_closed"]:
    loaded = load(scenario_path(name))
    explicit = loaded.product().explore()
    reward = loaded.scenario.reward.model_copy(update={"gamma": 0.99})
    value, _, violation = oracle(explicit, reward, tolerance=1e-6)
    print(f"{name}: {explicit.n_states} product states")
    print(f"  optimal return {value:.3f}, expected violation {violation:.4f} per step")
