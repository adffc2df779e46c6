#!/usr/bin/env python3
# License: BSD-3-Clause

"""
Generalized Büchi automata: guards, HOA v1 parsing and emission,
limit-determinism inference and lasso acceptance
"""

import bisect
import functools
import itertools
import logging
import math
import os
import re
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import networkx as nx  # type: ignore

from relaxplan.models import AutomatonManifest
from relaxplan.utils import format_label, popcount

logger = logging.getLogger(__name__)

MAX_GUARD_PROPS = 20
SUPPORTED_ACC_NAMES = ("generalized-Buchi", "Buchi")


# -----------------------------------------------------------------
# Guards


class Guard:
    """
    Boolean formula over atomic-proposition indices
    """

    def evaluate(self, label: int) -> bool:
        raise NotImplementedError

    def letter_set(self, n_props: int) -> frozenset[int]:
        raise NotImplementedError

    def remap(self, mapping: Sequence[int]) -> "Guard":
        raise NotImplementedError


@dataclass(frozen=True)
class TrueGuard(Guard):
    def evaluate(self, label):
        return True

    def letter_set(self, n_props):
        return _universe(n_props)

    def remap(self, mapping):
        return self

    def __str__(self):
        return "t"


@dataclass(frozen=True)
class FalseGuard(Guard):
    def evaluate(self, label):
        return False

    def letter_set(self, n_props):
        return frozenset()

    def remap(self, mapping):
        return self

    def __str__(self):
        return "f"


@dataclass(frozen=True)
class Atom(Guard):
    index: int

    def evaluate(self, label):
        return bool(label >> self.index & 1)

    def letter_set(self, n_props):
        return _atom_letters(self.index, n_props)

    def remap(self, mapping):
        return Atom(mapping[self.index])

    def __str__(self):
        return str(self.index)


@dataclass(frozen=True)
class Not(Guard):
    operand: Guard

    def evaluate(self, label):
        return not self.operand.evaluate(label)

    def letter_set(self, n_props):
        return _universe(n_props) - self.operand.letter_set(n_props)

    def remap(self, mapping):
        return Not(self.operand.remap(mapping))

    def __str__(self):
        return f"!{_wrap(self.operand)}"


@dataclass(frozen=True)
class And(Guard):
    left: Guard
    right: Guard

    def evaluate(self, label):
        return self.left.evaluate(label) and self.right.evaluate(label)

    def letter_set(self, n_props):
        return self.left.letter_set(n_props) & self.right.letter_set(n_props)

    def remap(self, mapping):
        return And(self.left.remap(mapping), self.right.remap(mapping))

    def __str__(self):
        return f"{_wrap(self.left)} & {_wrap(self.right)}"


@dataclass(frozen=True)
class Or(Guard):
    left: Guard
    right: Guard

    def evaluate(self, label):
        return self.left.evaluate(label) or self.right.evaluate(label)

    def letter_set(self, n_props):
        return self.left.letter_set(n_props) | self.right.letter_set(n_props)

    def remap(self, mapping):
        return Or(self.left.remap(mapping), self.right.remap(mapping))

    def __str__(self):
        return f"{_wrap(self.left)} | {_wrap(self.right)}"


def _wrap(guard: Guard) -> str:
    if isinstance(guard, (And, Or)):
        return f"({guard})"
    return str(guard)


@functools.lru_cache(maxsize=None)
def _universe(n_props: int) -> frozenset[int]:
    return frozenset(range(1 << n_props))


@functools.lru_cache(maxsize=None)
def _atom_letters(index: int, n_props: int) -> frozenset[int]:
    return frozenset(l for l in range(1 << n_props) if l >> index & 1)


def eval_guard(guard: Guard, label: int) -> bool:
    return guard.evaluate(label)


@functools.lru_cache(maxsize=4096)
def guard_letters(guard: Guard, n_props: int) -> frozenset[int]:
    """
    All letters (label bitmasks over n_props propositions) satisfying `guard`
    """
    if n_props > MAX_GUARD_PROPS:
        raise AlphabetTooLarge(
            f"Cannot enumerate 2^{n_props} letters (limit is 2^{MAX_GUARD_PROPS})"
        )
    return guard.letter_set(n_props)


def dist(label: int, letters: Iterable[int]) -> float:
    """
    Minimum Hamming distance between `label` and any of `letters`;
    0 if `label` is one of them, infinity if there are none
    """
    letters = letters if isinstance(letters, (set, frozenset)) else frozenset(letters)
    if not letters:
        return math.inf
    if label in letters:
        return 0
    if len(letters) <= 64:
        return min(popcount(label ^ x) for x in letters)

    # search outwards from the label, flipping k bits at a time
    width = max(label.bit_length(), max(letters).bit_length())
    for k in range(1, width + 1):
        for bits in itertools.combinations(range(width), k):
            flip = 0
            for b in bits:
                flip |= 1 << b
            if label ^ flip in letters:
                return k
    return math.inf


# Guards
# -----------------------------------------------------------------


class Edge(NamedTuple):
    guard: Guard
    target: int


class Gba:
    """
    State-based generalized Büchi automaton with ε-transitions.

    :param props: ordered atomic propositions; atom(i) refers to props[i]
    :param edges: per state, the outgoing guarded edges
    :param initial: initial state
    :param accepting: accepting sets F_1..F_f
    :param epsilon: state -> ε-successors
    :param state_names: display names
    :param origin: per state, the HOA state it was split from
    """

    def __init__(
        self,
        props: Sequence[str],
        edges: Sequence[Sequence[Edge]],
        initial: int,
        accepting: Sequence[Iterable[int]],
        epsilon: dict[int, Iterable[int]] | None = None,
        state_names: Sequence[str] | None = None,
        origin: Sequence[int] | None = None,
        name: str | None = None,
    ):
        self.props = tuple(props)
        self.edges = tuple(tuple(Edge(*e) for e in es) for es in edges)
        self.initial = initial
        self.accepting = tuple(frozenset(f) for f in accepting)
        epsilon = epsilon or {}
        self.epsilon = tuple(
            tuple(sorted(set(epsilon.get(q, ())))) for q in range(self.n_states)
        )
        self.state_names = (
            tuple(state_names) if state_names else tuple(str(q) for q in range(self.n_states))
        )
        self.origin = tuple(origin) if origin else tuple(range(self.n_states))
        self.name = name

        self._check()

        self.membership = tuple(
            sum(1 << i for i, f in enumerate(self.accepting) if q in f)
            for q in range(self.n_states)
        )
        self.unmarked_twin = self._twins()
        self._letters: dict[tuple[int, int], frozenset[int]] = {}
        self._targets: dict[int, tuple[int, ...]] = {}

    def _check(self):
        n = self.n_states
        if not 0 <= self.initial < n:
            raise AutomatonError(f"Initial state {self.initial} out of range")
        if not self.accepting:
            raise UnsupportedAcceptance("At least one accepting set is required")
        for i, f in enumerate(self.accepting):
            if not f:
                raise UnsupportedAcceptance(f"Accepting set {i} is empty")
            if not all(0 <= q < n for q in f):
                raise AutomatonError(f"Accepting set {i} refers to unknown states")
        for q, es in enumerate(self.edges):
            for guard, target in es:
                if not 0 <= target < n:
                    raise AutomatonError(f"Edge {q} -> {target} leads to an unknown state")
                if _max_atom(guard) >= len(self.props):
                    raise AutomatonError(f"Guard {guard} at state {q} uses an unknown proposition")
            for target in self.epsilon[q]:
                if not 0 <= target < n:
                    raise AutomatonError(f"ε-edge {q} -> {target} leads to an unknown state")

    def _twins(self) -> tuple[int | None, ...]:
        """
        Per accepting state, a copy of the same HOA state outside every
        accepting set and with the same outgoing edges, if one exists
        """
        plain: dict[int, int] = {}
        for q in range(self.n_states):
            if not self.membership[q]:
                plain.setdefault(self.origin[q], q)
        twins: list[int | None] = []
        for q in range(self.n_states):
            t = plain.get(self.origin[q])
            if (
                self.membership[q]
                and t is not None
                and self.edges[t] == self.edges[q]
                and self.epsilon[t] == self.epsilon[q]
            ):
                twins.append(t)
            else:
                twins.append(None)
        return tuple(twins)

    @property
    def n_states(self) -> int:
        return len(self.edges)

    @property
    def n_props(self) -> int:
        return len(self.props)

    @property
    def n_sets(self) -> int:
        return len(self.accepting)

    @property
    def full_frontier(self) -> int:
        return (1 << self.n_sets) - 1

    def letters(self, q: int, target: int) -> frozenset[int]:
        """
        Letters enabling the move q -> target (union over parallel edges)
        """
        key = (q, target)
        if key not in self._letters:
            letters: frozenset[int] = frozenset()
            for guard, t in self.edges[q]:
                if t == target:
                    letters |= guard_letters(guard, self.n_props)
            self._letters[key] = letters
        return self._letters[key]

    def out_targets(self, q: int) -> tuple[int, ...]:
        """
        Letter successors of q reachable on at least one letter
        """
        if q not in self._targets:
            targets = sorted({t for _, t in self.edges[q]})
            self._targets[q] = tuple(t for t in targets if self.letters(q, t))
        return self._targets[q]

    def successors(self, q: int, label: int) -> tuple[int, ...]:
        return tuple(t for t in self.out_targets(q) if label in self.letters(q, t))

    def with_props(self, props: Sequence[str]) -> "Gba":
        """
        Re-index guards onto a (larger) ordered proposition list
        """
        props = tuple(props)
        missing = [p for p in self.props if p not in props]
        if missing:
            raise AutomatonError(f"Propositions {missing} are not part of {list(props)}")
        mapping = [props.index(p) for p in self.props]
        edges = [[Edge(g.remap(mapping), t) for g, t in es] for es in self.edges]
        return Gba(
            props,
            edges,
            self.initial,
            self.accepting,
            epsilon={q: eps for q, eps in enumerate(self.epsilon)},
            state_names=self.state_names,
            origin=self.origin,
            name=self.name,
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, Gba):
            return NotImplemented
        return (
            self.props == other.props
            and self.initial == other.initial
            and self.accepting == other.accepting
            and self.edges == other.edges
        )

    def __repr__(self) -> str:
        return (
            f"Gba(states={self.n_states}, sets={self.n_sets}, props={list(self.props)})"
        )


def _max_atom(guard: Guard) -> int:
    if isinstance(guard, Atom):
        return guard.index
    if isinstance(guard, Not):
        return _max_atom(guard.operand)
    if isinstance(guard, (And, Or)):
        return max(_max_atom(guard.left), _max_atom(guard.right))
    return -1


class Ldgba:
    """
    Limit-deterministic generalized Büchi automaton: a Gba together with the
    partition into a nondeterministic part Q_N and a deterministic part Q_D
    that holds every accepting state
    """

    def __init__(self, gba: Gba, deterministic_states: Iterable[int]):
        self.gba = gba
        self.q_d = frozenset(deterministic_states)
        self.q_n = frozenset(range(gba.n_states)) - self.q_d

        violation = check_partition(gba, self.q_d)
        if violation is not None:
            raise NotLimitDeterministic(*violation)

        self._step: dict[tuple[int, int], int] = {}

    props = property(lambda self: self.gba.props)
    n_props = property(lambda self: self.gba.n_props)
    n_states = property(lambda self: self.gba.n_states)
    n_sets = property(lambda self: self.gba.n_sets)
    initial = property(lambda self: self.gba.initial)
    accepting = property(lambda self: self.gba.accepting)
    membership = property(lambda self: self.gba.membership)
    epsilon = property(lambda self: self.gba.epsilon)
    full_frontier = property(lambda self: self.gba.full_frontier)
    origin = property(lambda self: self.gba.origin)
    unmarked_twin = property(lambda self: self.gba.unmarked_twin)
    state_names = property(lambda self: self.gba.state_names)

    def letters(self, q: int, target: int) -> frozenset[int]:
        return self.gba.letters(q, target)

    def out_targets(self, q: int) -> tuple[int, ...]:
        return self.gba.out_targets(q)

    def successors(self, q: int, label: int) -> tuple[int, ...]:
        return self.gba.successors(q, label)

    def step(self, q: int, label: int) -> int:
        """
        Unique successor of a deterministic state
        """
        key = (q, label)
        if key not in self._step:
            if q not in self.q_d:
                raise ValueError(f"State {q} is not in the deterministic part")
            (self._step[key],) = self.gba.successors(q, label)
        return self._step[key]

    def with_props(self, props: Sequence[str]) -> "Ldgba":
        return Ldgba(self.gba.with_props(props), self.q_d)

    def __repr__(self) -> str:
        return (
            f"Ldgba(states={self.n_states}, deterministic={len(self.q_d)}, "
            f"sets={self.n_sets}, props={list(self.props)})"
        )


# -----------------------------------------------------------------
# Limit determinism


def _local_violation(gba: Gba, q: int) -> str | None:
    """
    Why q cannot be a deterministic state on its own (ε-free, total and
    deterministic over all letters), or None
    """
    if gba.epsilon[q]:
        return "no ε-transition may leave the deterministic part"
    n_letters = 1 << gba.n_props
    seen: set[int] = set()
    for t in gba.out_targets(q):
        letters = gba.letters(q, t)
        overlap = seen & letters
        if overlap:
            letter = format_label(min(overlap), gba.props)
            return f"exactly one successor is required, letter {letter} has several"
        seen |= letters
    if len(seen) != n_letters:
        missing = min(set(range(n_letters)) - seen)
        return f"transitions must be total, letter {format_label(missing, gba.props)} has no successor"
    return None


def check_partition(gba: Gba, q_d: frozenset[int]) -> tuple[int, str] | None:
    """
    First violated limit-determinism clause for a proposed Q_D, as
    (witness state, clause), or None
    """
    for q in sorted(q_d):
        reason = _local_violation(gba, q)
        if reason is not None:
            return q, reason
        for t in gba.out_targets(q):
            if t not in q_d:
                return q, f"successor {t} of a deterministic state must be deterministic"
    for i, f in enumerate(gba.accepting):
        outside = sorted(f - q_d)
        if outside:
            return outside[0], f"accepting states of set {i} must lie in the deterministic part"
    for q in range(gba.n_states):
        for t in gba.epsilon[q]:
            if t not in q_d:
                return q, f"ε-transition {q} -> {t} must lead into the deterministic part"
    return None


def infer_limit_deterministic(gba: Gba) -> Ldgba:
    """
    Greatest set D of ε-free, total, deterministic states closed under
    successors; succeeds iff D holds every accepting state and every
    ε-target
    """
    local = {q: _local_violation(gba, q) for q in range(gba.n_states)}
    deterministic = {q for q, reason in local.items() if reason is None}

    changed = True
    while changed:
        changed = False
        for q in sorted(deterministic):
            if not set(gba.out_targets(q)) <= deterministic:
                deterministic.discard(q)
                changed = True

    for i, f in enumerate(gba.accepting):
        outside = sorted(f - deterministic)
        if outside:
            q = outside[0]
            reason = local[q] or "it can reach a non-deterministic state"
            raise NotLimitDeterministic(
                q, f"accepting states of set {i} must lie in the deterministic part ({reason})"
            )

    ldgba = Ldgba(gba, deterministic)
    logger.debug(f"Inferred partition |Q_N|={len(ldgba.q_n)}, |Q_D|={len(ldgba.q_d)}")
    return ldgba


# Limit determinism
# -----------------------------------------------------------------


def lasso_accepted(ldgba: Ldgba | Gba, prefix: Sequence[int], cycle: Sequence[int]) -> bool:
    """
    Whether some run on prefix·cycle^ω visits every accepting set infinitely
    often. Decided on the graph of (state, word position) pairs.
    """
    if not cycle:
        raise ValueError("The cycle of a lasso word must be nonempty")
    gba = ldgba.gba if isinstance(ldgba, Ldgba) else ldgba
    word = list(prefix) + list(cycle)
    loop_start = len(prefix)

    def after(i):
        return i + 1 if i + 1 < len(word) else loop_start

    graph = nx.DiGraph()
    start = (gba.initial, 0)
    graph.add_node(start)
    stack = [start]
    while stack:
        node = stack.pop()
        q, i = node
        successors = [(t, after(i)) for t in gba.successors(q, word[i])]
        successors += [(t, i) for t in gba.epsilon[q]]
        for succ in successors:
            if succ not in graph:
                stack.append(succ)
            graph.add_edge(node, succ)

    for component in nx.strongly_connected_components(graph):
        if len(component) == 1:
            (v,) = component
            if not graph.has_edge(v, v):
                continue
        covered = 0
        for q, _ in component:
            covered |= gba.membership[q]
        if covered == gba.full_frontier:
            return True
    return False


# -----------------------------------------------------------------
# HOA


class Token(NamedTuple):
    kind: str
    value: str
    line: int
    column: int


_TOKEN_RE = re.compile(
    r"""
    (?P<space>\s+)
    |(?P<comment>/\*.*?\*/)
    |(?P<marker>--(?:BODY|END|ABORT)--)
    |(?P<header>[A-Za-z_][\w-]*:)
    |(?P<string>"(?:[^"\\]|\\.)*")
    |(?P<int>\d+)
    |(?P<ident>[A-Za-z_][\w-]*)
    |(?P<alias>@[\w-]+)
    |(?P<punct>[\[\]{}()!&|])
    """,
    re.VERBOSE | re.DOTALL,
)


def _tokenize(text: str) -> list[Token]:
    line_starts = [0] + [m.end() for m in re.finditer(r"\n", text)]

    def locate(pos):
        line = bisect.bisect_right(line_starts, pos)
        return line, pos - line_starts[line - 1] + 1

    tokens = []
    pos = 0
    while pos < len(text):
        match = _TOKEN_RE.match(text, pos)
        if match is None:
            line, column = locate(pos)
            raise HoaSyntaxError(f"Unexpected character {text[pos]!r}", line, column)
        kind = match.lastgroup
        if kind not in ("space", "comment"):
            line, column = locate(pos)
            tokens.append(Token(kind, match.group(), line, column))
        pos = match.end()
    return tokens


class _HoaParser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.pos = 0
        last_line = text.count("\n") + 1
        self.eof = Token("eof", "", last_line, len(text) - text.rfind("\n"))

    def peek(self) -> Token:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else self.eof

    def next(self) -> Token:
        tok = self.peek()
        if tok.kind == "eof":
            raise self.error("Unexpected end of input", tok)
        self.pos += 1
        return tok

    def expect(self, kind: str, value: str | None = None) -> Token:
        tok = self.next()
        if tok.kind != kind or (value is not None and tok.value != value):
            wanted = value or kind
            raise self.error(f"Expected {wanted}, found {tok.value!r}", tok)
        return tok

    def at(self, kind: str, value: str | None = None) -> bool:
        tok = self.peek()
        return tok.kind == kind and (value is None or tok.value == value)

    @staticmethod
    def error(message: str, tok: Token) -> "HoaSyntaxError":
        return HoaSyntaxError(message, tok.line, tok.column)

    # header

    def header(self) -> dict[str, list[tuple[Token, list[Token]]]]:
        first = self.next()
        if first.kind != "header" or first.value != "HOA:":
            raise self.error("Input must start with 'HOA:'", first)
        version = self.expect("ident")
        if version.value != "v1":
            raise self.error(f"Unsupported HOA version {version.value}", version)

        items: dict[str, list[tuple[Token, list[Token]]]] = {}
        while not self.at("marker", "--BODY--"):
            tok = self.next()
            if tok.kind != "header":
                raise self.error(f"Unexpected {tok.value!r} in header", tok)
            values = []
            while self.peek().kind not in ("header", "marker", "eof"):
                values.append(self.next())
            items.setdefault(tok.value[:-1], []).append((tok, values))
        return items

    # guards

    def guard_or(self, n_props: int) -> Guard:
        guard = self.guard_and(n_props)
        while self.at("punct", "|"):
            self.next()
            guard = Or(guard, self.guard_and(n_props))
        return guard

    def guard_and(self, n_props: int) -> Guard:
        guard = self.guard_not(n_props)
        while self.at("punct", "&"):
            self.next()
            guard = And(guard, self.guard_not(n_props))
        return guard

    def guard_not(self, n_props: int) -> Guard:
        tok = self.next()
        if tok.kind == "punct" and tok.value == "!":
            return Not(self.guard_not(n_props))
        if tok.kind == "punct" and tok.value == "(":
            guard = self.guard_or(n_props)
            self.expect("punct", ")")
            return guard
        if tok.kind == "int":
            index = int(tok.value)
            if index >= n_props:
                raise self.error(f"AP index {index} out of range (AP count is {n_props})", tok)
            return Atom(index)
        if tok.kind == "ident" and tok.value == "t":
            return TrueGuard()
        if tok.kind == "ident" and tok.value == "f":
            return FalseGuard()
        if tok.kind == "alias":
            raise self.error("Aliases are not supported", tok)
        raise self.error(f"Unexpected {tok.value!r} in guard", tok)

    def marks(self, n_sets: int) -> frozenset[int]:
        if not self.at("punct", "{"):
            return frozenset()
        self.next()
        marks = set()
        while not self.at("punct", "}"):
            tok = self.expect("int")
            if int(tok.value) >= n_sets:
                raise self.error(f"Acceptance mark {tok.value} out of range", tok)
            marks.add(int(tok.value))
        self.next()
        return frozenset(marks)


def _single_int(parser: _HoaParser, key: str, entry: tuple[Token, list[Token]]) -> int:
    tok, values = entry
    if len(values) != 1 or values[0].kind != "int":
        raise parser.error(f"'{key}:' expects a single state number", tok)
    return int(values[0].value)


def _parse_acceptance(parser: _HoaParser, entry: tuple[Token, list[Token]]) -> int:
    tok, values = entry
    if not values or values[0].kind != "int":
        raise parser.error("'Acceptance:' expects the number of sets", tok)
    n_sets = int(values[0].value)
    condition = values[1:]
    if n_sets == 0:
        raise UnsupportedAcceptance("At least one acceptance set is required")

    seen = []
    i = 0
    while i < len(condition):
        chunk = [t.value for t in condition[i : i + 4]]
        if len(chunk) < 4 or chunk[0] != "Inf" or chunk[1] != "(" or chunk[3] != ")":
            raise UnsupportedAcceptance(
                "Only generalized Büchi acceptance (Inf(0)&...&Inf(k-1)) is supported"
            )
        seen.append(int(chunk[2]))
        i += 4
        if i < len(condition):
            if condition[i].value != "&":
                raise UnsupportedAcceptance(
                    "Only conjunctions of Inf terms are supported"
                )
            i += 1
    if sorted(seen) != list(range(n_sets)):
        raise UnsupportedAcceptance(
            f"Acceptance must use every set 0..{n_sets - 1} exactly once"
        )
    return n_sets


def parse_hoa(
    text: str,
    epsilon: Iterable[tuple[int, int]] = (),
    name: str | None = None,
) -> Gba:
    """
    Parse a HOA v1 automaton with generalized Büchi acceptance.

    Edge acceptance marks are moved onto states by splitting every state
    into one copy per mark set it can be entered with. ε-edges are given as
    (source, target) pairs of HOA state numbers; an ε-edge enters the
    unmarked copy of its target.
    """
    parser = _HoaParser(text)
    items = parser.header()
    body = parser.peek()

    if "Acceptance" not in items:
        raise parser.error("Missing 'Acceptance:' header", body)
    n_sets = _parse_acceptance(parser, items["Acceptance"][0])

    if "acc-name" in items:
        tok, values = items["acc-name"][0]
        if not values or values[0].value not in SUPPORTED_ACC_NAMES:
            acc_name = values[0].value if values else ""
            raise UnsupportedAcceptance(f"Unsupported acceptance name {acc_name!r}")

    props: list[str] = []
    if "AP" in items:
        tok, values = items["AP"][0]
        if not values or values[0].kind != "int":
            raise parser.error("'AP:' expects a count", tok)
        declared = int(values[0].value)
        props = [v.value[1:-1] for v in values[1:] if v.kind == "string"]
        if len(props) != declared or len(values) != declared + 1:
            raise parser.error(
                f"AP count mismatch: declared {declared}, listed {len(props)}", tok
            )

    if "Start" not in items:
        raise parser.error("Missing 'Start:' header", body)
    if len(items["Start"]) > 1:
        raise parser.error("Several initial states are not supported", items["Start"][1][0])
    initial = _single_int(parser, "Start", items["Start"][0])

    declared_states = None
    if "States" in items:
        declared_states = _single_int(parser, "States", items["States"][0])

    if "name" in items and name is None:
        values = items["name"][0][1]
        if values and values[0].kind == "string":
            name = values[0].value[1:-1]

    for unsupported in ("Alias", "controllable-AP"):
        if unsupported in items:
            raise parser.error(f"'{unsupported}:' is not supported", items[unsupported][0][0])

    parser.expect("marker", "--BODY--")

    names: dict[int, str] = {}
    state_marks: dict[int, frozenset[int]] = {}
    edges: dict[int, list[tuple[Guard, int, frozenset[int]]]] = {}
    while not parser.at("marker", "--END--"):
        tok = parser.next()
        if tok.kind != "header" or tok.value != "State:":
            raise parser.error(f"Expected 'State:', found {tok.value!r}", tok)
        if parser.at("punct", "["):
            raise parser.error("State labels are not supported", parser.peek())
        state_tok = parser.expect("int")
        q = int(state_tok.value)
        if q in edges:
            raise parser.error(f"State {q} is defined twice", state_tok)
        if declared_states is not None and q >= declared_states:
            raise parser.error(f"State {q} exceeds 'States: {declared_states}'", state_tok)
        if parser.at("string"):
            names[q] = parser.next().value[1:-1]
        state_marks[q] = parser.marks(n_sets)
        edges[q] = []
        while parser.at("punct", "["):
            parser.next()
            guard = parser.guard_or(len(props))
            parser.expect("punct", "]")
            target_tok = parser.expect("int")
            target = int(target_tok.value)
            if declared_states is not None and target >= declared_states:
                raise parser.error(f"Edge target {target} out of range", target_tok)
            edges[q].append((guard, target, parser.marks(n_sets)))
        if parser.at("int"):
            raise parser.error("Implicit edge labels are not supported", parser.peek())
    end = parser.next()
    if parser.peek().kind != "eof":
        raise parser.error("Trailing input after '--END--'", parser.peek())

    n_states = declared_states
    if n_states is None:
        referenced = set(edges) | {t for es in edges.values() for _, t, _ in es} | {initial}
        n_states = max(referenced) + 1
    if not 0 <= initial < n_states:
        raise parser.error(f"Start state {initial} out of range", items["Start"][0][0])

    eps: dict[int, set[int]] = {}
    for src, dst in epsilon:
        if not (0 <= src < n_states and 0 <= dst < n_states):
            raise AutomatonError(f"ε-edge ({src}, {dst}) refers to unknown states")
        eps.setdefault(src, set()).add(dst)

    gba = _assemble(
        props, n_states, initial, n_sets, names, state_marks, edges, eps, name
    )
    logger.debug(f"Parsed HOA automaton {name or ''} with {gba.n_states} states")
    return gba


def _assemble(props, n_states, initial, n_sets, names, state_marks, edges, eps, name) -> Gba:
    all_edges = [edges.get(q, []) for q in range(n_states)]
    base_marks = [state_marks.get(q, frozenset()) for q in range(n_states)]
    base_names = [names.get(q, str(q)) for q in range(n_states)]

    if not any(m for es in all_edges for _, _, m in es):
        return Gba(
            props,
            [[Edge(g, t) for g, t, _ in es] for es in all_edges],
            initial,
            [{q for q in range(n_states) if i in base_marks[q]} for i in range(n_sets)],
            epsilon=eps,
            state_names=base_names,
            name=name,
        )

    index: dict[tuple[int, frozenset[int]], int] = {}
    order: list[tuple[int, frozenset[int]]] = []

    def copy_of(q, marks):
        key = (q, marks)
        if key not in index:
            index[key] = len(order)
            order.append(key)
        return index[key]

    copy_of(initial, frozenset())
    new_edges: list[list[Edge]] = []
    new_eps: dict[int, set[int]] = {}
    k = 0
    while k < len(order):
        q, _ = order[k]
        new_edges.append([Edge(g, copy_of(t, m)) for g, t, m in all_edges[q]])
        new_eps[k] = {copy_of(t, frozenset()) for t in eps.get(q, ())}
        k += 1

    membership = [marks | base_marks[q] for q, marks in order]
    state_names = [
        base_names[q] + ("{" + ",".join(str(i) for i in sorted(m)) + "}" if m else "")
        for q, m in order
    ]
    return Gba(
        props,
        new_edges,
        0,
        [{c for c, m in enumerate(membership) if i in m} for i in range(n_sets)],
        epsilon=new_eps,
        state_names=state_names,
        origin=[q for q, _ in order],
        name=name,
    )


def emit_hoa(gba: Gba | Ldgba) -> str:
    """
    Write a HOA v1 document with state-based acceptance. ε-edges have no HOA
    encoding and are left to the manifest.
    """
    gba = gba.gba if isinstance(gba, Ldgba) else gba
    acceptance = "&".join(f"Inf({i})" for i in range(gba.n_sets))
    lines = ["HOA: v1"]
    if gba.name:
        lines.append(f'name: "{_escape(gba.name)}"')
    lines += [
        f"States: {gba.n_states}",
        f"Start: {gba.initial}",
        f"AP: {gba.n_props}" + "".join(f' "{_escape(p)}"' for p in gba.props),
        f"acc-name: generalized-Buchi {gba.n_sets}",
        f"Acceptance: {gba.n_sets} {acceptance}",
        "properties: trans-labels explicit-labels state-acc",
        "--BODY--",
    ]
    for q in range(gba.n_states):
        sets = [str(i) for i in range(gba.n_sets) if gba.membership[q] >> i & 1]
        marks = " {" + " ".join(sets) + "}" if sets else ""
        lines.append(f'State: {q} "{_escape(gba.state_names[q])}"{marks}')
        for guard, target in gba.edges[q]:
            lines.append(f"[{guard}] {target}")
    lines.append("--END--")
    return "\n".join(lines) + "\n"


def _escape(text: str) -> str:
    return text.replace("\\", "\\\\").replace('"', '\\"')


def load_automaton(path: str) -> Ldgba:
    """
    Load an automaton from a `.hoa` file or from a JSON manifest naming the
    HOA file, its ε-edges and optionally the deterministic part (in HOA state
    numbers). Without a declared partition it is inferred.
    """
    epsilon: list[tuple[int, int]] = []
    deterministic = None
    hoa_path = path
    if path.endswith(".json"):
        with open(path) as f:
            manifest = AutomatonManifest.model_validate_json(f.read())
        hoa_path = os.path.join(os.path.dirname(path), manifest.hoa)
        epsilon = [tuple(pair) for pair in manifest.epsilon]  # type: ignore
        deterministic = manifest.deterministic_states

    with open(hoa_path) as f:
        text = f.read()
    name = os.path.splitext(os.path.basename(hoa_path))[0]
    gba = parse_hoa(text, epsilon=epsilon, name=name)

    if deterministic is None:
        ldgba = infer_limit_deterministic(gba)
    else:
        declared = set(deterministic)
        ldgba = Ldgba(gba, [q for q in range(gba.n_states) if gba.origin[q] in declared])

    logger.info(
        f"Loaded automaton {name}: {ldgba.n_states} states "
        f"({len(set(ldgba.origin))} before mark splitting), {ldgba.n_sets} accepting sets"
    )
    return ldgba


# HOA
# -----------------------------------------------------------------


class AutomatonError(Exception):
    """Base class for malformed automata"""

    pass


class HoaSyntaxError(AutomatonError):
    """Syntax error in a HOA document"""

    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class UnsupportedAcceptance(AutomatonError):
    """Acceptance condition outside the generalized Büchi fragment"""

    pass


class NotLimitDeterministic(AutomatonError):
    """The automaton violates a limit-determinism clause"""

    def __init__(self, state: int, clause: str):
        super().__init__(f"state {state}: {clause}")
        self.state = state
        self.clause = clause


class AlphabetTooLarge(ValueError):
    """Too many propositions to enumerate letters"""

    pass
