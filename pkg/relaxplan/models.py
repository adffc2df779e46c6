#!/usr/bin/env python3
# License: BSD-3-Clause

"""
Models for relaxplan
"""

from typing import Annotated, Literal, Union

from pydantic import BaseModel, Field, ValidationInfo, field_validator

SCHEMA_VERSION = 1
LABEL_TOLERANCE = 1e-9


class RewardConfig(BaseModel):
    """
    Reward design: accepting reward, violation weight and discount
    """

    r_acc: float = Field(10.0, gt=0.0, description="Reward on accepting product states")
    beta: float = Field(8.0, gt=0.0, description="Weight of the violation cost")
    gamma: float = Field(0.999, description="Discount factor")

    @field_validator("gamma")
    def check_gamma(cls, field_value):
        """
        Ensure the discount is strictly between 0 and 1
        :param field_value: field value
        :return: field_value
        """
        assert 0.0 < field_value < 1.0
        return field_value


class TrainingConfig(BaseModel):
    """
    Episode management for Q-learning
    """

    episodes: int = Field(100_000, ge=1, description="Number of training episodes")
    tau: int = Field(100, ge=1, description="Maximum steps per episode")
    seed: int = Field(0, description="Seed of the random source")
    start: Literal["fixed", "random"] = Field(
        "random", description="Start episodes at the initial state or a uniform random one"
    )
    key_frontier: bool = Field(
        True, description="Key the Q-table on the frontier set as well"
    )
    window: int = Field(500, ge=1, description="Episodes per learning-curve window")
    convergence_tolerance: float = Field(
        0.01, gt=0.0, description="Relative change below which a window counts as stable"
    )
    patience: int = Field(
        5, ge=1, description="Consecutive stable windows needed to declare convergence"
    )
    stop_on_convergence: bool = Field(
        False, description="Stop training once convergence is declared"
    )
    progress: bool = Field(True, description="Show a progress bar")


class AutomatonManifest(BaseModel):
    """
    HOA file plus the ε-edges and (optionally) the deterministic part, all in
    HOA state numbers
    """

    hoa: str = Field(description="Path of the HOA file, relative to the manifest")
    epsilon: list[tuple[int, int]] = Field(
        default_factory=list, description="ε-edges as (source, target) pairs"
    )
    deterministic_states: list[int] | None = Field(
        None, description="Declared deterministic part; inferred when missing"
    )


def _check_label_table(table: dict[str, dict[str, float]]) -> dict[str, dict[str, float]]:
    for cell, labels in table.items():
        assert all(p >= 0.0 for p in labels.values()), f"negative probability at {cell}"
        assert sum(labels.values()) <= 1.0 + LABEL_TOLERANCE, f"labels at {cell} exceed 1"
    return table


class GridWorkspace(BaseModel):
    """
    Rectangular grid; cells are named r{row}c{col}, row 0 at the top
    """

    kind: Literal["grid"] = "grid"
    rows: int = Field(ge=1, description="Number of rows")
    cols: int = Field(ge=1, description="Number of columns")
    success: float = Field(0.9, gt=0.0, le=1.0, description="Success probability of a move")
    lateral: float = Field(
        0.05, ge=0.0, le=0.5, description="Diagonal drift of each turn-derived move"
    )
    labels: dict[str, dict[str, float]] = Field(
        default_factory=dict,
        description="cell -> {label: probability}; the remainder is the empty label",
    )

    @field_validator("labels")
    def check_labels(cls, field_value):
        """
        Ensure label probabilities per cell do not exceed 1
        :param field_value: field value
        :return: field_value
        """
        return _check_label_table(field_value)


class RegionWorkspace(BaseModel):
    """
    Named regions connected by doors; one navigation action per neighbor
    """

    kind: Literal["regions"] = "regions"
    regions: list[str] = Field(description="Region names")
    adjacency: list[tuple[str, str]] = Field(description="Undirected connections")
    success: float = Field(0.9, gt=0.0, le=1.0, description="Navigation success probability")
    labels: dict[str, dict[str, float]] = Field(default_factory=dict)

    @field_validator("adjacency")
    def check_adjacency(cls, v, info: ValidationInfo):
        """
        Ensure connections refer to known regions

        :param v: field value
        :param info: validation info
        :return: v
        """
        assert info.data is not None
        regions = set(info.data.get("regions", []))
        for a, b in v:
            assert a in regions and b in regions, f"unknown region in ({a}, {b})"
        return v

    @field_validator("labels")
    def check_labels(cls, field_value):
        """
        Ensure label probabilities per region do not exceed 1
        :param field_value: field value
        :return: field_value
        """
        return _check_label_table(field_value)


class TransitionRow(BaseModel):
    state: str
    action: str
    successors: dict[str, float]


class ExplicitWorkspace(BaseModel):
    """
    States, actions and transition rows listed one by one
    """

    kind: Literal["explicit"] = "explicit"
    states: list[str]
    actions: list[str]
    transitions: list[TransitionRow]
    labels: dict[str, dict[str, float]] = Field(default_factory=dict)

    @field_validator("labels")
    def check_labels(cls, field_value):
        """
        Ensure label probabilities per state do not exceed 1
        :param field_value: field value
        :return: field_value
        """
        return _check_label_table(field_value)


Workspace = Annotated[
    Union[GridWorkspace, RegionWorkspace, ExplicitWorkspace],
    Field(discriminator="kind"),
]


class AutomatonRef(BaseModel):
    path: str = Field(description="HOA file or manifest, relative to the scenario file")


class EpisodeConfig(BaseModel):
    episodes: int = Field(100_000, ge=1)
    tau: int = Field(100, ge=1)


class Scenario(BaseModel):
    """
    Workspace, task automaton and training defaults
    """

    schema_version: int = Field(SCHEMA_VERSION, description="Scenario file format version")
    name: str = Field(description="Scenario name, also the default output directory")
    description: str = ""
    atomic_props: list[str] = Field(description="Ordered atomic propositions")
    workspace: Workspace
    initial_state: str = Field(description="Name of the initial state")
    initial_label: str | None = Field(
        None, description="Label observed initially; defaults to the most likely one"
    )
    automaton: AutomatonRef
    reroute_blocked: bool = Field(
        False,
        description="Let a blocked move into an accepting state enter its unmarked twin instead",
    )
    reward: RewardConfig = Field(default_factory=RewardConfig)
    episodes: EpisodeConfig = Field(default_factory=EpisodeConfig)

    @field_validator("schema_version")
    def check_version(cls, field_value):
        """
        Ensure the file format is supported
        :param field_value: field value
        :return: field_value
        """
        assert field_value == SCHEMA_VERSION
        return field_value

    @field_validator("workspace")
    def check_props(cls, v, info: ValidationInfo):
        """
        Ensure every label uses declared propositions

        :param v: field value
        :param info: validation info
        :return: v
        """
        assert info.data is not None
        props = set(info.data.get("atomic_props", []))
        for labels in v.labels.values():
            for label in labels:
                for prop in label.split("&"):
                    assert prop.strip() in props, f"unknown proposition {prop!r}"
        return v


class PolicyEntry(BaseModel):
    s: str
    l: int
    q: int
    T: int
    action: int
    target: int
    utility: float


class PolicyFile(BaseModel):
    """
    Serialized greedy policy and its utilities
    """

    scenario: str = Field(description="Scenario file the policy was trained on")
    automaton: str | None = Field(None, description="Automaton override, if any")
    key_frontier: bool = True
    entries: list[PolicyEntry] = Field(default_factory=list)
