"""Core representation of two-player zero-sum extensive-form games.

A game is an explicit enumerated tree: every node carries its acting party
(player 1, player 2, or chance), its available actions and children, and for
terminals a payoff to player 1 (player 2 always receives the negation).
Imperfect information is captured by an infoset partition over decision
nodes; each decision node belongs to exactly one infoset of its acting
player.  Trees are immutable after construction and safe to share.

Games can be built programmatically with :class:`TreeBuilder` or from a JSON
description (see :func:`build_game` for the schema), and round-trip through
``save_game`` / ``load_game`` byte-exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Mapping, Sequence

import numpy as np

CHANCE = 0
PLAYER1 = 1
PLAYER2 = 2
TERMINAL = -1

PLAYERS = (PLAYER1, PLAYER2)

#: Tolerance for probability-distribution sums.
PROB_ATOL = 1e-12

_ACTOR_NAMES = {CHANCE: "chance", PLAYER1: "p1", PLAYER2: "p2", TERMINAL: "terminal"}
_ACTOR_CODES = {v: k for k, v in _ACTOR_NAMES.items()}


class GameError(Exception):
    """Base class for game-construction and evaluation errors."""


class BuildError(GameError):
    """A game description is malformed."""


class UndefinedValueError(GameError):
    """An infoset value was requested where counterfactual reach is zero."""


@dataclass(frozen=True)
class Node:
    """One tree node.  ``children[k]`` is reached by ``actions[k]``."""

    id: int
    player: int
    actions: tuple[str, ...]
    children: tuple[int, ...]
    chance_probs: tuple[float, ...] | None
    payoff: float
    infoset: int | None
    public: str
    parent: int
    parent_action: int
    depth: int

    @property
    def is_terminal(self) -> bool:
        return self.player == TERMINAL


@dataclass(frozen=True)
class Infoset:
    """A set of decision nodes indistinguishable to the acting player."""

    id: int
    player: int
    label: str
    nodes: tuple[int, ...]
    actions: tuple[str, ...]


@dataclass(frozen=True)
class ValidationCheck:
    name: str
    passed: bool
    detail: str = ""


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple[ValidationCheck, ...]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list[ValidationCheck]:
        return [c for c in self.checks if not c.passed]


class GameTree:
    """Immutable extensive-form game tree.

    ``meta`` carries optional annotations from generators (name, analytic
    game value, big-blind size, natural subgame roots); library code treats
    it as read-only apart from value caching.
    """

    def __init__(self, nodes: Sequence[Node], infosets: Sequence[Infoset],
                 meta: dict | None = None):
        self.nodes: tuple[Node, ...] = tuple(nodes)
        self.infosets: tuple[Infoset, ...] = tuple(infosets)
        self.meta: dict = dict(meta or {})
        self.root = 0
        self._compiled: dict = {}  # caches owned by subsolve.equilibrium

    # -- basic queries ----------------------------------------------------

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def num_terminals(self) -> int:
        return sum(1 for n in self.nodes if n.is_terminal)

    def infoset_ids(self, player: int) -> list[int]:
        return [i.id for i in self.infosets if i.player == player]

    def path(self, node: int) -> list[int]:
        """Node ids from the root to ``node`` inclusive."""
        out = []
        cur = node
        while cur >= 0:
            out.append(cur)
            cur = self.nodes[cur].parent
        out.reverse()
        return out

    def descendants(self, node: int) -> Iterator[int]:
        """Yield ``node`` and every node below it."""
        stack = [node]
        while stack:
            cur = stack.pop()
            yield cur
            stack.extend(reversed(self.nodes[cur].children))

    def player_sequence(self, node: int, player: int) -> tuple[tuple[int, int], ...]:
        """(infoset, action index) pairs where ``player`` acted on the path to ``node``."""
        out = []
        path = self.path(node)
        for nid, nxt in zip(path[:-1], path[1:]):
            n = self.nodes[nid]
            if n.player == player:
                out.append((n.infoset, self.nodes[nxt].parent_action))
        return tuple(out)

    def player_view(self, node: int, player: int) -> tuple:
        """What ``player`` knows at ``node``: own action history plus public state.

        Groups nodes into the player's knowledge classes at points where the
        other party acts; used to derive frontier infosets of subgames.
        """
        return (self.player_sequence(node, player), self.nodes[node].public)

    # -- serialization ----------------------------------------------------

    def to_description(self) -> dict:
        nodes = []
        for n in self.nodes:
            row: dict = {"id": n.id, "actor": _ACTOR_NAMES[n.player]}
            if n.is_terminal:
                row["payoff"] = n.payoff
            else:
                row["actions"] = list(n.actions)
                row["children"] = list(n.children)
                if n.player == CHANCE:
                    row["probs"] = list(n.chance_probs)
            nodes.append(row)
        infosets = [
            {"player": i.player, "label": i.label, "nodes": list(i.nodes)}
            for i in self.infosets
        ]
        return {
            "players": ["p1", "p2"],
            "nodes": nodes,
            "infosets": infosets,
            "public_labels": {str(n.id): n.public for n in self.nodes},
        }


# -- construction ----------------------------------------------------------


def build_game(description: Mapping, meta: dict | None = None) -> GameTree:
    """Build a validated :class:`GameTree` from a JSON-style description.

    Schema (all node ids must be 0..N-1 with the root at id 0)::

        {
          "players": ["p1", "p2"],
          "nodes": [
            {"id": 0, "actor": "chance", "actions": [...], "children": [...],
             "probs": [...]},
            {"id": 1, "actor": "p1" | "p2", "actions": [...], "children": [...]},
            {"id": 2, "actor": "terminal", "payoff": 0.5},
            ...
          ],
          "infosets": [{"player": 1, "label": "...", "nodes": [ids]}, ...],
          "public_labels": {"0": "", "1": "Play", ...}
        }

    Node indices and infoset ids are taken from declaration order, so the
    result is deterministic given the description.  Structural problems
    (dangling children, missing payoffs, bad probability sums, an infoset
    spanning players) raise :class:`BuildError`; semantic invariants such as
    perfect recall are reported by :func:`validate` instead.
    """
    rows = list(description["nodes"])
    n = len(rows)
    by_id: dict[int, Mapping] = {}
    for row in rows:
        nid = row["id"]
        if not isinstance(nid, int) or not 0 <= nid < n:
            raise BuildError(f"node id {nid!r} outside 0..{n - 1}")
        if nid in by_id:
            raise BuildError(f"duplicate node id {nid}")
        by_id[nid] = row

    publics = {int(k): v for k, v in description.get("public_labels", {}).items()}

    parent = {0: (-1, -1)}
    for row in rows:
        if _ACTOR_CODES.get(row["actor"]) == TERMINAL:
            continue
        children = row.get("children", [])
        actions = row.get("actions", [])
        if len(children) != len(actions) or not children:
            raise BuildError(f"node {row['id']}: actions/children mismatch")
        for k, c in enumerate(children):
            if c not in by_id:
                raise BuildError(f"node {row['id']}: dangling child {c}")
            if c in parent:
                raise BuildError(f"node {c}: multiple parents")
            parent[c] = (row["id"], k)
    missing = set(by_id) - set(parent)
    if missing:
        raise BuildError(f"unreachable nodes: {sorted(missing)}")

    iset_of: dict[int, int] = {}
    infosets: list[Infoset] = []
    for k, spec in enumerate(description.get("infosets", [])):
        player = spec["player"]
        if player not in PLAYERS:
            raise BuildError(f"infoset {k}: player must be 1 or 2")
        members = tuple(spec["nodes"])
        for m in members:
            if m in iset_of:
                raise BuildError(f"node {m} in more than one infoset")
            iset_of[m] = k
        actors = {by_id[m]["actor"] for m in members}
        if len(actors) > 1 or _ACTOR_CODES[next(iter(actors))] != player:
            raise BuildError(f"infoset {k} spans players or wrong actor")
        actions = tuple(by_id[members[0]].get("actions", []))
        infosets.append(Infoset(k, player, str(spec.get("label", k)), members, actions))

    depth = {0: 0}
    order = [0]
    for nid in order:
        for c in by_id[nid].get("children", []):
            depth[c] = depth[nid] + 1
            order.append(c)
    if len(order) != n:
        raise BuildError("tree is not connected from the root")

    nodes: list[Node] = []
    for nid in range(n):
        row = by_id[nid]
        actor = _ACTOR_CODES.get(row["actor"])
        if actor is None:
            raise BuildError(f"node {nid}: unknown actor {row['actor']!r}")
        if actor == TERMINAL:
            if "payoff" not in row:
                raise BuildError(f"terminal node {nid}: missing payoff")
            nodes.append(Node(nid, TERMINAL, (), (), None, float(row["payoff"]),
                              None, publics.get(nid, ""), *parent[nid], depth[nid]))
            continue
        probs = None
        if actor == CHANCE:
            probs = tuple(float(p) for p in row["probs"])
            if any(p < 0 for p in probs):
                raise BuildError(f"chance node {nid}: negative probability")
            if abs(sum(probs) - 1.0) > PROB_ATOL:
                raise BuildError(f"chance node {nid}: probabilities sum to {sum(probs)}")
        else:
            if nid not in iset_of:
                raise BuildError(f"decision node {nid} not in any infoset")
        nodes.append(Node(nid, actor, tuple(row["actions"]), tuple(row["children"]),
                          probs, 0.0, iset_of.get(nid), publics.get(nid, ""),
                          *parent[nid], depth[nid]))

    return GameTree(nodes, infosets, meta)


class TreeBuilder:
    """Incremental game construction.

    Nodes are appended under an explicit parent; infosets are grouped by a
    caller-supplied key (player, key) in first-use order, which makes node
    and infoset ids deterministic.  ``build()`` returns a validated tree.
    """

    def __init__(self):
        self._rows: list[dict] = []
        self._keys: dict[tuple[int, str], list[int]] = {}
        self._publics: dict[int, str] = {}

    def _append(self, parent: int | None, action: str, prob: float | None,
                row: dict, public: str) -> int:
        nid = len(self._rows)
        row["id"] = nid
        self._rows.append(row)
        self._publics[nid] = public
        if parent is not None:
            prow = self._rows[parent]
            prow.setdefault("actions", []).append(action)
            prow.setdefault("children", []).append(nid)
            if prow["actor"] == "chance":
                prow.setdefault("probs", []).append(prob)
        return nid

    def chance(self, parent: int | None = None, action: str = "", *,
               prob: float | None = None, public: str = "") -> int:
        return self._append(parent, action, prob, {"actor": "chance"}, public)

    def player(self, parent: int | None, action: str, *, player: int, key: str,
               prob: float | None = None, public: str = "") -> int:
        nid = self._append(parent, action, prob,
                           {"actor": _ACTOR_NAMES[player]}, public)
        self._keys.setdefault((player, key), []).append(nid)
        return nid

    def terminal(self, parent: int, action: str, *, payoff: float,
                 prob: float | None = None, public: str = "") -> int:
        return self._append(parent, action, prob,
                            {"actor": "terminal", "payoff": payoff}, public)

    def build(self, meta: dict | None = None) -> GameTree:
        infosets = [
            {"player": player, "label": key, "nodes": nodes}
            for (player, key), nodes in self._keys.items()
        ]
        description = {
            "players": ["p1", "p2"],
            "nodes": self._rows,
            "infosets": infosets,
            "public_labels": {str(k): v for k, v in self._publics.items()},
        }
        return build_game(description, meta)


# -- validation -------------------------------------------------------------


def validate(game: GameTree) -> ValidationReport:
    """Check the semantic invariants of a built game.

    Reports pass/fail for: zero-sum payoffs (a representational guarantee
    here, checked for finiteness), chance distributions summing to one,
    infoset consistency (one acting player, identical action sets), and
    perfect recall (all nodes of an infoset share the acting player's
    (infoset, action) history).
    """
    checks = []

    finite = all(np.isfinite(n.payoff) for n in game.nodes if n.is_terminal)
    checks.append(ValidationCheck(
        "zero_sum", finite,
        "" if finite else "non-finite terminal payoff"))

    bad_chance = [
        n.id for n in game.nodes
        if n.player == CHANCE and (
            abs(sum(n.chance_probs) - 1.0) > PROB_ATOL
            or any(p < 0 for p in n.chance_probs))
    ]
    checks.append(ValidationCheck(
        "chance_sums", not bad_chance,
        "" if not bad_chance else f"bad chance distributions at {bad_chance}"))

    bad_isets = []
    for ist in game.infosets:
        members = [game.nodes[m] for m in ist.nodes]
        if any(m.player != ist.player for m in members):
            bad_isets.append(ist.id)
        elif any(m.actions != members[0].actions for m in members):
            bad_isets.append(ist.id)
    checks.append(ValidationCheck(
        "infoset_consistency", not bad_isets,
        "" if not bad_isets else f"inconsistent infosets {bad_isets}"))

    bad_recall = []
    for ist in game.infosets:
        seqs = {game.player_sequence(m, ist.player) for m in ist.nodes}
        if len(seqs) > 1:
            bad_recall.append(ist.id)
    checks.append(ValidationCheck(
        "perfect_recall", not bad_recall,
        "" if not bad_recall else f"recall violated in infosets {bad_recall}"))

    return ValidationReport(tuple(checks))


# -- strategies --------------------------------------------------------------


@dataclass
class BehavioralStrategy:
    """Per-infoset action distributions for one player.

    ``probs`` maps infoset id to a probability vector over that infoset's
    actions.  Treated as immutable once constructed.
    """

    player: int
    probs: dict[int, np.ndarray]

    @classmethod
    def uniform(cls, game: GameTree, player: int) -> "BehavioralStrategy":
        return cls(player, {
            i.id: np.full(len(i.actions), 1.0 / len(i.actions))
            for i in game.infosets if i.player == player
        })

    @classmethod
    def from_pure(cls, game: GameTree, player: int,
                  choice: Mapping[int, int]) -> "BehavioralStrategy":
        probs = {}
        for i in game.infosets:
            if i.player != player:
                continue
            v = np.zeros(len(i.actions))
            v[choice[i.id]] = 1.0
            probs[i.id] = v
        return cls(player, probs)

    def __getitem__(self, infoset: int) -> np.ndarray:
        return self.probs[infoset]

    def replace(self, updates: Mapping[int, np.ndarray]) -> "BehavioralStrategy":
        merged = dict(self.probs)
        for k, v in updates.items():
            merged[k] = np.asarray(v, dtype=float)
        return BehavioralStrategy(self.player, merged)

    def check(self, game: GameTree) -> None:
        expected = set(game.infoset_ids(self.player))
        if set(self.probs) != expected:
            raise GameError(
                f"strategy for player {self.player} covers {len(self.probs)} infosets, "
                f"expected {len(expected)}")
        for i, p in self.probs.items():
            if abs(p.sum() - 1.0) > PROB_ATOL or (p < 0).any():
                raise GameError(f"infoset {i}: invalid distribution {p}")


@dataclass
class StrategyProfile:
    """One behavioral strategy per player."""

    p1: BehavioralStrategy
    p2: BehavioralStrategy

    @classmethod
    def uniform(cls, game: GameTree) -> "StrategyProfile":
        return cls(BehavioralStrategy.uniform(game, PLAYER1),
                   BehavioralStrategy.uniform(game, PLAYER2))

    def for_player(self, player: int) -> BehavioralStrategy:
        return self.p1 if player == PLAYER1 else self.p2

    def action_prob(self, game: GameTree, node: int, action_index: int) -> float:
        n = game.nodes[node]
        if n.player == CHANCE:
            return n.chance_probs[action_index]
        return float(self.for_player(n.player)[n.infoset][action_index])


# -- reach probabilities and values ------------------------------------------


@dataclass(frozen=True)
class ReachProbs:
    """Multiplicative decomposition of a node's reach probability."""

    total: float
    p1: float
    p2: float
    chance: float

    def contribution(self, player: int) -> float:
        return self.p1 if player == PLAYER1 else self.p2

    def excluding(self, player: int) -> float:
        """Chance and opponent contribution, the paper-style counterfactual reach."""
        return self.chance * (self.p2 if player == PLAYER1 else self.p1)


def reach_probabilities(game: GameTree, profile: StrategyProfile,
                        node: int) -> ReachProbs:
    """Reach probability of ``node`` and its per-contributor factors."""
    if not 0 <= node < len(game.nodes):
        raise GameError(f"node {node} not in game")
    p1 = p2 = pc = 1.0
    path = game.path(node)
    for nid, nxt in zip(path[:-1], path[1:]):
        n = game.nodes[nid]
        pr = profile.action_prob(game, nid, game.nodes[nxt].parent_action)
        if n.player == PLAYER1:
            p1 *= pr
        elif n.player == PLAYER2:
            p2 *= pr
        else:
            pc *= pr
    return ReachProbs(p1 * p2 * pc, p1, p2, pc)


def node_values(game: GameTree, profile: StrategyProfile) -> np.ndarray:
    """Expected payoff to player 1 at every node under ``profile``."""
    v = np.zeros(len(game.nodes))
    for n in sorted(game.nodes, key=lambda n: -n.depth):
        if n.is_terminal:
            v[n.id] = n.payoff
        else:
            probs = (n.chance_probs if n.player == CHANCE
                     else profile.for_player(n.player)[n.infoset])
            v[n.id] = sum(p * v[c] for p, c in zip(probs, n.children))
    return v


def infoset_value(game: GameTree, profile: StrategyProfile, infoset: int,
                  action: int | None = None) -> float:
    """Counterfactual-reach weighted value of an infoset (or one action).

    Raises :class:`UndefinedValueError` when every node of the infoset has
    zero counterfactual reach, since callers constructing alternative
    payoffs must detect that case rather than read a silent zero.
    """
    ist = game.infosets[infoset]
    v = node_values(game, profile)
    weights = [reach_probabilities(game, profile, h).excluding(ist.player)
               for h in ist.nodes]
    denom = sum(weights)
    if denom <= 0.0:
        raise UndefinedValueError(f"infoset {infoset} has zero counterfactual reach")
    if action is None:
        vals = [v[h] for h in ist.nodes]
    else:
        vals = [v[game.nodes[h].children[action]] for h in ist.nodes]
    num = sum(w * x for w, x in zip(weights, vals))
    sign = 1.0 if ist.player == PLAYER1 else -1.0
    return sign * num / denom


# -- subgames -----------------------------------------------------------------


@dataclass(frozen=True)
class Subgame:
    """A node set closed under descendants and infoset membership."""

    nodes: frozenset[int]
    top: tuple[int, ...]
    root_public: str

    def __contains__(self, node: int) -> bool:
        return node in self.nodes


def _subgame_closure(game: GameTree, seeds: Iterable[int]) -> Subgame:
    members: set[int] = set()
    stack = list(seeds)
    while stack:
        cur = stack.pop()
        if cur in members:
            continue
        for d in game.descendants(cur):
            if d in members:
                continue
            members.add(d)
            ist = game.nodes[d].infoset
            if ist is not None:
                stack.extend(m for m in game.infosets[ist].nodes if m not in members)
    top = tuple(sorted(
        m for m in members if game.nodes[m].parent not in members))
    return Subgame(frozenset(members), top, game.nodes[top[0]].public)


def identify_subgame(game: GameTree, node: int) -> Subgame:
    """Smallest subgame containing ``node``.

    Fixpoint of two closure rules: descendants of members are members, and
    any node sharing an infoset with a member is a member.  ``top`` holds
    the earliest-reachable members (no ancestor is a member), ordered by id.
    """
    if not 0 <= node < len(game.nodes):
        raise GameError(f"node {node} not in game")
    return _subgame_closure(game, [node])


def subgames_at_public(game: GameTree, label: str) -> Subgame:
    """Subgame spanning all nodes whose public label equals ``label``.

    Closes over every node carrying the label, so sibling branches that
    share downstream infosets enter together with their ancestors.
    """
    seeds = [n.id for n in game.nodes if n.public == label]
    if not seeds:
        raise GameError(f"no nodes with public label {label!r}")
    return _subgame_closure(game, seeds)


# -- persistence ---------------------------------------------------------------


def dumps_game(game: GameTree) -> str:
    return json.dumps(game.to_description(), sort_keys=True, indent=1)


def save_game(game: GameTree, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps_game(game))


def load_game(path, meta: dict | None = None) -> GameTree:
    with open(path) as fh:
        return build_game(json.load(fh), meta)


def save_strategy(strategy: BehavioralStrategy, path) -> None:
    """Checkpoint a strategy as JSON: infoset id -> probability list."""
    payload = {
        "player": strategy.player,
        "strategy": {str(k): [float(x) for x in v]
                     for k, v in sorted(strategy.probs.items())},
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)


def load_strategy(path) -> BehavioralStrategy:
    with open(path) as fh:
        payload = json.load(fh)
    return BehavioralStrategy(
        payload["player"],
        {int(k): np.asarray(v, dtype=float)
         for k, v in payload["strategy"].items()})
