import logging
import os

try:
    import typer
except (ImportError, ModuleNotFoundError):
    raise ImportError("Please install typer if you want to use the CLI")
import numpy as np
from tqdm import tqdm
from typing_extensions import Annotated

from relaxplan.automata import AutomatonError, load_automaton
from relaxplan.learning import (
    Policy,
    load_policy_file,
    save_policy,
    train as train_policy,
)
from relaxplan.models import RewardConfig, TrainingConfig
from relaxplan.product import BudgetExceeded, RelaxedProductMdp, product_size
from relaxplan.random_models import random_ldgba, random_mdp, random_policy
from relaxplan.scenarios import (
    ScenarioError,
    automaton_path,
    execute_policy,
    load,
    scaled_case1,
    scenario_path,
    stats_table,
    validate_trajectory,
)
from relaxplan.verification import (
    check_lemma_accepting_sets,
    check_theorem1,
    induced_chain,
    oracle as run_oracle,
)

logger = logging.getLogger(__name__)

ALL_CHECKS = ("theorem1", "lemma1", "product-size")


# -----------------------------------------------------------------
# Main app


app = typer.Typer()


@app.callback()
def callback(
    logging_level: Annotated[str, typer.Option("--logging-level", "-l")] = "INFO"
):
    logging.basicConfig(level=logging.getLevelName(logging_level))
    logging.getLogger("relaxplan").setLevel(logging.getLevelName(logging_level))


def _resolve(scenario: str) -> str:
    """
    A scenario file, or the name of a bundled one
    """
    if os.path.isfile(scenario):
        return scenario
    return scenario_path(scenario)


def _load(scenario: str, automaton: str | None = None):
    try:
        return load(_resolve(scenario), automaton)
    except (ScenarioError, AutomatonError, OSError) as e:
        typer.echo(f"Error: {e}", err=True)
        raise typer.Exit(code=1)


# Main app
# -----------------------------------------------------------------


# -----------------------------------------------------------------
# Learning commands


@app.command()
def train(
    scenario: Annotated[str, typer.Option(help="Scenario file or bundled scenario name")],
    automaton: Annotated[str, typer.Option(help="Override the scenario's automaton")] = None,
    episodes: Annotated[int, typer.Option(help="Defaults to the scenario's setting")] = None,
    tau: Annotated[int, typer.Option(help="Steps per episode")] = None,
    beta: float = None,
    gamma: float = None,
    r_acc: Annotated[float, typer.Option("--r-acc")] = None,
    seed: int = 0,
    start: Annotated[str, typer.Option(help="fixed or random")] = "random",
    out: Annotated[str, typer.Option(help="Output directory, defaults to the scenario name")] = None,
    plot: bool = False,
):
    """
    Learn a policy with Q-learning over the relaxed product
    """
    loaded = _load(scenario, automaton)
    sc = loaded.scenario
    try:
        reward = RewardConfig(
            r_acc=r_acc if r_acc is not None else sc.reward.r_acc,
            beta=beta if beta is not None else sc.reward.beta,
            gamma=gamma if gamma is not None else sc.reward.gamma,
        )
        config = TrainingConfig(
            episodes=episodes if episodes is not None else sc.episodes.episodes,
            tau=tau if tau is not None else sc.episodes.tau,
            seed=seed,
            start=start,
        )
    except ValueError as e:
        typer.echo(f"Error: {e}", err=True)
        raise typer.Exit(code=2)

    product = loaded.product()
    result = train_policy(product, reward, config)

    outdir = out or sc.name
    if not os.path.exists(outdir):
        os.makedirs(outdir)
    save_policy(
        result.policy,
        os.path.join(outdir, "policy.json"),
        loaded.mdp.state_names,
        os.path.abspath(loaded.path),
        os.path.abspath(automaton) if automaton else None,
    )
    result.qtable.save_csv(os.path.join(outdir, "qtable.csv"))
    result.curve.to_csv(os.path.join(outdir, "learning_curve.csv"), index=False)
    if plot:
        from relaxplan.plot import plot_learning_curve

        plot_learning_curve(result.curve, outdir, sc.name)

    typer.echo(f"Trained {result.episodes_run} episodes on {sc.name}")
    if result.converged_episode is not None:
        typer.echo(f"Learning curve converged after {result.converged_episode} episodes")
    typer.echo(f"Policy written to {os.path.join(outdir, 'policy.json')}")


@app.command()
def simulate(
    policy: Annotated[str, typer.Option(help="Policy file written by train")],
    steps: int = 50,
    seed: int = 0,
    csv: Annotated[str, typer.Option(help="Write the trajectory as CSV")] = None,
    plot: bool = False,
):
    """
    Roll out a trained policy and summarize the trajectory
    """
    policy_file = load_policy_file(policy)
    loaded = _load(policy_file.scenario, policy_file.automaton)
    product = loaded.product()
    greedy = Policy.from_file(policy_file, loaded.mdp.state_names)

    trajectory = execute_policy(product, greedy, steps, seed=seed, reward=loaded.scenario.reward)
    problems = validate_trajectory(product, trajectory)
    for problem in problems:
        logger.warning(problem)

    typer.echo(f"Steps:            {len(trajectory.steps) - 1}")
    typer.echo(f"Total reward:     {trajectory.total_reward:g}")
    typer.echo(f"Total violation:  {trajectory.total_violation:g}")
    typer.echo(f"Completed rounds: {trajectory.rounds()}")
    typer.echo(f"Accepting visits: {trajectory.visits()}")
    if trajectory.undefined:
        typer.echo(f"Policy undefined at {len(trajectory.undefined)} steps")

    if csv:
        trajectory.save_csv(csv)
    if plot:
        from relaxplan.plot import plot_trajectory

        try:
            plot_trajectory(
                loaded.scenario, trajectory, os.path.dirname(os.path.abspath(policy))
            )
        except ValueError as e:
            logger.warning(e)


# Learning commands
# -----------------------------------------------------------------


# -----------------------------------------------------------------
# Verification commands


@app.command()
def verify(
    scenario: Annotated[str, typer.Option(help="Scenario file or bundled scenario name")] = "fig1",
    checks: Annotated[str, typer.Option(help="Comma separated subset of theorem1,lemma1,product-size")] = ",".join(ALL_CHECKS),
    random_instances: Annotated[int, typer.Option(help="Random instances per check")] = 0,
    seed: int = 0,
):
    """
    Check the structural properties of the relaxed product
    """
    selected = [c.strip() for c in checks.split(",") if c.strip()]
    unknown = [c for c in selected if c not in ALL_CHECKS]
    if unknown:
        typer.echo(f"Unknown checks {unknown}; choose from {list(ALL_CHECKS)}", err=True)
        raise typer.Exit(code=2)

    loaded = _load(scenario)
    rng = np.random.default_rng(seed)
    failed = []

    if "theorem1" in selected:
        report = check_theorem1(
            loaded.mdp, loaded.ldgba, reroute_blocked=loaded.scenario.reroute_blocked
        )
        typer.echo(f"[theorem1] {loaded.scenario.name}\n{report.summary()}")
        if not report.ok:
            failed.append(f"theorem1 on {loaded.scenario.name}")
        for k in tqdm(range(random_instances), disable=random_instances == 0):
            mdp = random_mdp(rng, n_states=int(rng.integers(2, 9)))
            ldgba = random_ldgba(rng, mdp.atomic_props)
            report = check_theorem1(mdp, ldgba)
            if not report.ok:
                typer.echo(f"[theorem1] random instance {k}\n{report.summary()}")
                failed.append(f"theorem1 on random instance {k}")

    if "lemma1" in selected:
        try:
            explicit = loaded.product().explore()
        except BudgetExceeded as e:
            typer.echo(f"Error: {e}", err=True)
            raise typer.Exit(code=1)
        accepting = explicit.accepting_sets()
        n_policies = max(random_instances, 1)
        bad = 0
        for _ in range(n_policies):
            chain = induced_chain(explicit, random_policy(rng, explicit))
            report = check_lemma_accepting_sets(chain, accepting, explicit)
            if not report.ok:
                bad += 1
                typer.echo(f"[lemma1] {report.summary()}")
        typer.echo(f"[lemma1] {n_policies - bad}/{n_policies} random policies passed")
        if bad:
            failed.append("lemma1")

    if "product-size" in selected:
        size = product_size(loaded.mdp, loaded.ldgba)
        try:
            explored = loaded.product().explore().origin_pairs()
        except BudgetExceeded:
            explored = size
        typer.echo(
            f"[product-size] MDP states {loaded.mdp.n_states}, product states {size}"
        )
        if explored != size:
            typer.echo(f"[product-size] explicit exploration found {explored} pairs")
            failed.append("product-size")

    if failed:
        typer.echo(f"FAILED: {', '.join(failed)}")
        raise typer.Exit(code=1)
    typer.echo("All checks passed")


@app.command()
def oracle(
    scenario: Annotated[str, typer.Option(help="Scenario file or bundled scenario name")] = "case1",
    tolerance: float = 1e-8,
    gamma: Annotated[float, typer.Option(help="Defaults to the scenario's discount")] = None,
):
    """
    Solve the relaxed product exactly with value iteration
    """
    loaded = _load(scenario)
    reward = loaded.scenario.reward
    if gamma is not None:
        reward = reward.model_copy(update={"gamma": gamma})
    explicit = loaded.product().explore()
    value, _, violation = run_oracle(explicit, reward, tolerance)
    typer.echo(f"Product states:        {explicit.n_states}")
    typer.echo(f"Optimal return:        {value:.6g}")
    typer.echo(f"Expected violation:    {violation:.6g} per step")


@app.command()
def stats(
    sizes: Annotated[str, typer.Option(help="Comma separated grid sizes, multiples of 5")] = "15,25,40",
    train_episodes: Annotated[int, typer.Option(help="Also train each grid for this many episodes")] = 0,
    csv: Annotated[str, typer.Option(help="Write the table as CSV")] = None,
):
    """
    State counts of the scaled case-1 grids
    """
    try:
        grid_sizes = [int(s) for s in sizes.split(",")]
        table = stats_table(grid_sizes)
    except (ValueError, ScenarioError) as e:
        typer.echo(f"Error: {e}", err=True)
        raise typer.Exit(code=2)

    if train_episodes:
        ldgba = load_automaton(automaton_path("case1"))
        converged = []
        for size in grid_sizes:
            grid, mdp = scaled_case1(size // 5)
            config = TrainingConfig(
                episodes=train_episodes, stop_on_convergence=True, progress=False
            )
            product = RelaxedProductMdp(mdp, ldgba, reroute_blocked=grid.reroute_blocked)
            result = train_policy(product, grid.reward, config)
            converged.append(result.converged_episode)
        table["episodes_to_convergence"] = converged

    typer.echo(table.to_string(index=False))
    if csv:
        table.to_csv(csv, index=False)


# Verification commands
# -----------------------------------------------------------------


def main():
    app()


if __name__ == "__main__":
    app()
