#!/usr/bin/env python3
# License: BSD-3-Clause

"""
Graph algorithms shared by the explicit models: maximal end components and
bottom strongly connected components
"""

import logging
from typing import Hashable, Iterable, Mapping

import networkx as nx  # type: ignore

logger = logging.getLogger(__name__)

Enabled = Mapping[Hashable, Mapping[Hashable, frozenset]]


def _prune(candidate: set, enabled: Enabled) -> dict:
    """
    Restrict every state of `candidate` to the actions whose successors stay
    inside, dropping states that keep no action. Mutates `candidate`.
    """
    while True:
        actions = {}
        dropped = []
        for s in candidate:
            kept = frozenset(a for a, post in enabled[s].items() if post <= candidate)
            if kept:
                actions[s] = kept
            else:
                dropped.append(s)
        if not dropped:
            return actions
        candidate.difference_update(dropped)


def maximal_end_components(enabled: Enabled) -> list[tuple[frozenset, dict]]:
    """
    MEC decomposition by the iterative SCC/prune fixpoint.

    :param enabled: state -> action -> support of the successor distribution
    :return: list of (states, state -> frozenset of actions), sorted by the
        smallest member state
    """
    result = []
    stack = [set(enabled)]

    while stack:
        candidate = stack.pop()
        actions = _prune(candidate, enabled)
        if not candidate:
            continue

        graph = nx.DiGraph()
        graph.add_nodes_from(candidate)
        for s, acts in actions.items():
            for a in acts:
                graph.add_edges_from((s, t) for t in enabled[s][a])

        components = [set(c) for c in nx.strongly_connected_components(graph)]
        if len(components) == 1:
            result.append((frozenset(candidate), actions))
        else:
            logger.debug(f"Splitting candidate of size {len(candidate)} into {len(components)} parts")
            stack.extend(components)

    return sorted(result, key=lambda mec: min(mec[0]))


def bottom_components(nodes: Iterable[Hashable], edges: Iterable[tuple]) -> list[frozenset]:
    """
    Bottom SCCs (no edge leaving the component) of a directed graph
    """
    graph = nx.DiGraph()
    graph.add_nodes_from(nodes)
    graph.add_edges_from(edges)

    condensed = nx.condensation(graph)
    bottoms = []
    for c in condensed.nodes:
        if condensed.out_degree(c) == 0:
            bottoms.append(frozenset(condensed.nodes[c]["members"]))
    return sorted(bottoms, key=min)
