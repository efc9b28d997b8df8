"""Nested subgame solving for opponent actions outside the action
abstraction, plus the randomized pseudo-harmonic translation baseline.

The defending player (player 2) owns a blueprint over a small action
abstraction.  Whenever the opponent takes an off-tree action, a fresh
subgame is generated and solved in the current expanded abstraction:
rooted just after the action (``inexpensive``) or at the smallest subgame
containing the node where it was taken (``expensive``).  Each solve appends
a patch; lookups resolve to the most recently applied patch covering an
infoset, else the blueprint.

Evaluation materializes responses for every reachable off-tree sequence
breadth-first, producing a complete full-game strategy whose exploitability
is then computed exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from .efg import (
    CHANCE,
    PLAYER1,
    PLAYER2,
    BehavioralStrategy,
    GameError,
    GameTree,
    StrategyProfile,
    Subgame,
    subgames_at_public,
)
from .equilibrium import SolveResult, run_cbr
from .subgames import MethodConfig, SubgameSolveReport, subgame_solve
from .zoo import Abstraction, RestrictedGame


@dataclass(frozen=True)
class OffTreeEvent:
    """An opponent action outside the current abstraction.

    ``node`` is a representative full-game node where the action is
    available; the event covers every node sharing its public state.
    """

    node: int
    action_index: int
    action: str
    public: str          # public label of the node where the action is taken
    edge_public: str     # public label reached by the action


@dataclass
class Patch:
    """One nested re-solve: strategies for the subgame it covered."""

    key: str                                  # edge public that triggered it
    mode: str
    strategies2: dict[int, np.ndarray]        # full-game infoset -> probs
    strategies1: dict[int, np.ndarray]        # kept for deeper unsafe entries
    p1_values: dict[int, float]               # final-iterate estimates
    report: SubgameSolveReport


@dataclass
class NestedPolicy:
    """Blueprint plus ordered subgame patches; lookups are single-valued.

    The most recently applied patch covering an infoset answers first
    (nested patches override their ancestors on the overlap), then the
    blueprint lifted from the restricted game, then a uniform filler for
    infosets unreachable under the policy's own play.
    """

    game: GameTree
    abstraction: Abstraction
    restricted: RestrictedGame
    blueprint: SolveResult
    method: MethodConfig
    mode: str = "inexpensive"
    patches: list[Patch] = field(default_factory=list)

    def __post_init__(self):
        if self.mode not in ("inexpensive", "expensive"):
            raise GameError(f"unknown response mode {self.mode!r}")

    # -- strategy lookup ---------------------------------------------------

    def _lift(self, full_iset: int, player: int) -> np.ndarray | None:
        riset = self.restricted.from_full_infoset.get(full_iset)
        if riset is None:
            return None
        probs = self.blueprint.average.for_player(player).probs.get(riset)
        if probs is None:
            return None
        full_actions = self.game.infosets[full_iset].actions
        r_actions = self.restricted.game.infosets[riset].actions
        out = np.zeros(len(full_actions))
        for j, label in enumerate(r_actions):
            out[full_actions.index(label)] = probs[j]
        return out

    def strategy_at(self, full_iset: int, player: int = PLAYER2,
                    ) -> tuple[np.ndarray, str]:
        for patch in reversed(self.patches):
            table = patch.strategies2 if player == PLAYER2 else patch.strategies1
            if full_iset in table:
                return table[full_iset], f"patch:{patch.key}"
        lifted = self._lift(full_iset, player)
        if lifted is not None:
            return lifted, "blueprint"
        n = len(self.game.infosets[full_iset].actions)
        return np.full(n, 1.0 / n), "uniform"

    def full_strategy(self, player: int = PLAYER2) -> BehavioralStrategy:
        return BehavioralStrategy(player, {
            i.id: self.strategy_at(i.id, player)[0]
            for i in self.game.infosets if i.player == player
        })

    def profile(self) -> StrategyProfile:
        return StrategyProfile(self.full_strategy(PLAYER1),
                               self.full_strategy(PLAYER2))

    def p1_estimate(self, full_iset: int) -> float:
        """Abstract value estimate for a player-1 infoset, deepest patch first."""
        for patch in reversed(self.patches):
            v = patch.p1_values.get(full_iset)
            if v is not None and not math.isnan(v):
                return v
        riset = self.restricted.from_full_infoset.get(full_iset)
        if riset is not None:
            v = self.blueprint.final_values[PLAYER1].get(riset)
            if v is not None and not math.isnan(v):
                return v
        return float("nan")

    def patched_keys(self) -> set[str]:
        return {p.key for p in self.patches}


def _event_from(game: GameTree, node: int, action_index: int) -> OffTreeEvent:
    n = game.nodes[node]
    child = game.nodes[n.children[action_index]]
    return OffTreeEvent(node, action_index, n.actions[action_index],
                        n.public, child.public)


def _respond(game: GameTree, policy: NestedPolicy, event: OffTreeEvent,
             expensive: bool) -> NestedPolicy:
    if game is not policy.game:
        raise GameError("event game does not match the policy's game")
    n = game.nodes[event.node]
    if n.player != PLAYER1:
        raise GameError("off-tree events are opponent (player 1) actions")
    if policy.abstraction.allows(event.action):
        raise GameError(f"action {event.action!r} is inside the abstraction")

    method = policy.method
    if expensive:
        # smallest subgame containing the node where the action was taken:
        # the closure of its whole public state
        S = subgames_at_public(game, event.public)
        allow = lambda nid, lab: policy.abstraction.allows(lab) or (
            lab == event.action and game.nodes[nid].public == event.public)
    else:
        if method.base == "unsafe":
            raise GameError(
                "inexpensive responses cannot use unsafe solving: reach "
                "probabilities are undefined for off-abstraction actions")
        S = subgames_at_public(game, event.edge_public)
        allow = lambda nid, lab: policy.abstraction.allows(lab)

    profile = policy.profile()
    from .subgames import frontier_classes
    classes = frontier_classes(game, S)
    fallback_cbr = None
    alts: dict[tuple, float] = {}
    if method.base != "unsafe":
        for c in classes:
            head = game.nodes[c.nodes[0]]
            if head.player == PLAYER1 and head.infoset is not None:
                iset = head.infoset
            elif c.path_pairs:
                iset = c.path_pairs[-1][0]
            else:
                raise GameError("frontier class has no player-1 anchor infoset")
            v = policy.p1_estimate(iset)
            if math.isnan(v):
                if fallback_cbr is None:
                    fallback_cbr = run_cbr(game, profile.p2, PLAYER1)
                try:
                    v = fallback_cbr.cbv(iset)
                except Exception:
                    v = max(game.nodes[d].payoff for h in c.nodes
                            for d in game.descendants(h)
                            if game.nodes[d].is_terminal)
            alts[c.key] = v

    report = subgame_solve(game, profile, S, method, allow=allow,
                           alt_override=alts if method.base != "unsafe" else None,
                           blueprint_solve=policy.blueprint)

    p1_values = {}
    for aug_iset, orig_iset in report.aug.iset_to_orig.items():
        if report.aug.game.infosets[aug_iset].player == PLAYER1:
            p1_values[orig_iset] = report.solve_result.final_values[PLAYER1][aug_iset]
    patch = Patch(event.edge_public,
                  "expensive" if expensive else "inexpensive",
                  report.updates(PLAYER2), report.updates(PLAYER1),
                  p1_values, report)
    return replace(policy, patches=policy.patches + [patch])


def inexpensive_response(game: GameTree, policy: NestedPolicy,
                         event: OffTreeEvent) -> NestedPolicy:
    """Solve the subgame rooted just after the off-tree action."""
    return _respond(game, policy, event, expensive=False)


def expensive_response(game: GameTree, policy: NestedPolicy,
                       event: OffTreeEvent) -> NestedPolicy:
    """Re-solve the smallest subgame containing the node where the action
    was taken, recomputing strategies for every sibling action."""
    return _respond(game, policy, event, expensive=True)


# -- action translation baseline -------------------------------------------------


def pseudo_harmonic_map(A: float, B: float, x: float) -> float:
    """Probability of mapping off-tree size ``x`` to the smaller size ``A``.

    Sizes are pot fractions with A < x < B; outside that interval the
    nearest boundary receives the whole mass.
    """
    if x <= A:
        return 1.0
    if x >= B:
        return 0.0
    return ((B - x) * (1.0 + A)) / ((B - A) * (1.0 + x))


def _bet_fraction(label: str) -> float | None:
    if label.startswith("b"):
        try:
            return float(label[1:])
        except ValueError:
            return None
    return None


def translation_strategy(game: GameTree, policy: NestedPolicy,
                         ) -> BehavioralStrategy:
    """Player-2 strategy that maps opponent off-tree bets onto in-tree
    sizes with the randomized pseudo-harmonic rule and then plays the
    blueprint of the mapped state."""
    restricted = policy.restricted
    rgame = restricted.game
    bp2 = policy.blueprint.average.p2
    probs_out: dict[int, np.ndarray] = {}

    def rec(full_node: int, mapped: list[tuple[int, float]]):
        n = game.nodes[full_node]
        if n.is_terminal or not mapped:
            return
        if n.player == CHANCE:
            for k, child in enumerate(n.children):
                nxt = []
                for rn, w in mapped:
                    r = rgame.nodes[rn]
                    j = r.actions.index(n.actions[k])
                    nxt.append((r.children[j], w))
                rec(child, nxt)
            return
        if n.player == PLAYER2:
            full_actions = n.actions
            mix = np.zeros(len(full_actions))
            for rn, w in mapped:
                r = rgame.nodes[rn]
                rp = bp2[r.infoset]
                for j, label in enumerate(r.actions):
                    mix[full_actions.index(label)] += w * rp[j]
            total = mix.sum()
            if total > 0:
                probs_out[n.infoset] = mix / total
            for k, label in enumerate(full_actions):
                if not policy.abstraction.allows(label):
                    continue  # own off-tree actions have probability zero
                nxt = []
                for rn, w in mapped:
                    r = rgame.nodes[rn]
                    j = r.actions.index(label)
                    nxt.append((r.children[j], w))
                rec(n.children[k], nxt)
            return
        # opponent node: in-tree actions follow, off-tree bets are translated
        for k, label in enumerate(n.actions):
            if policy.abstraction.allows(label):
                nxt = []
                for rn, w in mapped:
                    r = rgame.nodes[rn]
                    j = r.actions.index(label)
                    nxt.append((r.children[j], w))
                rec(n.children[k], nxt)
                continue
            x = _bet_fraction(label)
            if x is None:
                continue
            nxt = []
            for rn, w in mapped:
                r = rgame.nodes[rn]
                sizes = sorted((_bet_fraction(a), j) for j, a in enumerate(r.actions)
                               if _bet_fraction(a) is not None)
                if not sizes:
                    continue
                below = [(s, j) for s, j in sizes if s <= x]
                above = [(s, j) for s, j in sizes if s >= x]
                if not below:
                    nxt.append((r.children[above[0][1]], w))
                elif not above:
                    nxt.append((r.children[below[-1][1]], w))
                else:
                    a_sz, a_j = below[-1]
                    b_sz, b_j = above[0]
                    if a_j == b_j:
                        nxt.append((r.children[a_j], w))
                    else:
                        f = pseudo_harmonic_map(a_sz, b_sz, x)
                        if f > 0:
                            nxt.append((r.children[a_j], w * f))
                        if f < 1:
                            nxt.append((r.children[b_j], w * (1.0 - f)))
            rec(n.children[k], nxt)

    rec(game.root, [(rgame.root, 1.0)])
    full = {}
    for ist in game.infosets:
        if ist.player != PLAYER2:
            continue
        if ist.id in probs_out:
            full[ist.id] = probs_out[ist.id]
        else:
            lifted, _ = policy.strategy_at(ist.id, PLAYER2)
            full[ist.id] = lifted
    return BehavioralStrategy(PLAYER2, full)


# -- evaluation --------------------------------------------------------------------


@dataclass
class NestedEvalRow:
    method: str
    mode: str
    exploitability: float
    subgames_solved: int
    max_patch_depth: int
    events: tuple[str, ...]


def find_off_tree_events(game: GameTree, policy: NestedPolicy,
                         large: Abstraction) -> list[OffTreeEvent]:
    """Earliest unpatched off-tree opponent actions reachable when the
    opponent plays within ``large`` and the defender within its abstraction."""
    small = policy.abstraction
    patched = policy.patched_keys()
    events: dict[str, OffTreeEvent] = {}
    stack = [game.root]
    while stack:
        cur = stack.pop()
        n = game.nodes[cur]
        if n.is_terminal:
            continue
        for k, label in enumerate(n.actions):
            if n.player == PLAYER1 and not small.allows(label):
                if not large.allows(label):
                    continue
                ev = _event_from(game, cur, k)
                if ev.edge_public in patched:
                    stack.append(n.children[k])
                else:
                    events.setdefault(ev.edge_public, ev)
                continue
            if n.player == PLAYER2 and not small.allows(label):
                continue
            stack.append(n.children[k])
    return [events[key] for key in
            sorted(events, key=lambda q: (q.count("/"), q))]


def materialize_nested(game: GameTree, policy: NestedPolicy, large: Abstraction,
                       *, max_subgames: int = 500) -> NestedPolicy:
    """Apply nested responses breadth-first until no reachable off-tree
    action lacks a patch."""
    expensive = policy.mode == "expensive"
    while True:
        events = find_off_tree_events(game, policy, large)
        if not events:
            return policy
        for ev in events:
            if len(policy.patches) >= max_subgames:
                raise GameError(
                    f"nested materialization exceeded {max_subgames} subgames; "
                    "partial coverage, measurement aborted")
            policy = _respond(game, policy, ev, expensive)


def evaluate_nested(game: GameTree, restricted: RestrictedGame,
                    abstraction_small: Abstraction, abstraction_large: Abstraction,
                    blueprint_solve: SolveResult, method: MethodConfig, *,
                    mode: str = "inexpensive", translation: bool = False,
                    max_subgames: int = 500,
                    value: float | None = None) -> NestedEvalRow:
    """Exploitability of nested re-solving (or the translation baseline)
    against an opponent free to use the larger abstraction."""
    from .equilibrium import exploitability

    policy = NestedPolicy(game, abstraction_small, restricted, blueprint_solve,
                          method, mode=mode)
    if translation:
        strat = translation_strategy(game, policy)
        label = "translation"
        n_sub, depth, events = 0, 0, ()
    else:
        policy = materialize_nested(game, policy, abstraction_large,
                                    max_subgames=max_subgames)
        strat = policy.full_strategy(PLAYER2)
        label = method.name
        n_sub = len(policy.patches)
        depth = max((p.key.count("/") + 1 for p in policy.patches), default=0)
        events = tuple(p.key for p in policy.patches)
    exp = exploitability(game, strat, PLAYER2, value=value)
    return NestedEvalRow(label, "translation" if translation else mode,
                         exp, n_sub, depth, events)
