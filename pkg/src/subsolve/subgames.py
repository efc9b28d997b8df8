"""Subgame re-solving: Unsafe, Resolve, Maxmargin, Reach variants with gift
accounting, Estimated alternative payoffs, and Distributional payoffs.

All constructions share the same shape: an augmented game is built around a
subgame ``S`` (an entry layer feeding the copies of ``S_top`` plus, for the
safe methods, per-frontier-infoset alternative payoffs), solved with CFR+,
and the resulting player-2 strategy is stitched back over the blueprint
inside ``S``.  Player 1's augmented strategy is never used.

Frontier infosets of ``S_top`` are derived as player 1's knowledge classes
(own action history plus public state) since ``S_top`` nodes usually belong
to the other player's stored infosets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Hashable, Mapping, Sequence

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
    TreeBuilder,
    UndefinedValueError,
    reach_probabilities,
)
from .equilibrium import (
    CbrPass,
    CfrSolver,
    SolveResult,
    SolverConfig,
    compile_tree,
    expected_values,
    run_cbr,
)


# -- alternative payoffs --------------------------------------------------------


def _sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


_GH_Z, _GH_W = np.polynomial.hermite.hermgauss(64)
_GH_KEEP = np.abs(math.sqrt(2.0) * _GH_Z) <= 8.0
_GH_Z = _GH_Z[_GH_KEEP]
_GH_W = _GH_W[_GH_KEEP] / _GH_W[_GH_KEEP].sum()


@dataclass(frozen=True)
class ScalarPayoff:
    """Fixed alternative payoff; equivalent to a zero-width distribution."""

    value: float

    def mean(self) -> float:
        return self.value

    def cdf(self, v: float) -> float:
        return 1.0 if v >= self.value else 0.0

    def hedge_prob(self, v: float, eta: float) -> float:
        if v == self.value:
            return 0.5
        return float(_sigmoid(np.array([eta * (v - self.value)]))[0])


@dataclass(frozen=True)
class NormalPayoff:
    """Normally distributed alternative payoff."""

    mu: float
    stddev: float

    def __post_init__(self):
        if self.stddev < 0:
            raise GameError("stddev must be >= 0")

    def mean(self) -> float:
        return self.mu

    def cdf(self, v: float) -> float:
        if self.stddev == 0.0:
            return 1.0 if v >= self.mu else 0.0
        return 0.5 * (1.0 + math.erf((v - self.mu) / (self.stddev * math.sqrt(2.0))))

    def hedge_prob(self, v: float, eta: float) -> float:
        """Probability of entering under Hedge: E_X[sigmoid(eta (v - X))].

        When ``v`` equals the mean the integral is exactly one half for any
        symmetric distribution (paired outcomes mu +- d sum to one), so that
        case short-circuits.  Otherwise the expectation is evaluated by
        64-point Gauss-Hermite quadrature truncated at 8 standard deviations.
        """
        if v == self.mu or self.stddev == 0.0:
            if self.stddev == 0.0 and v != self.mu:
                return float(_sigmoid(np.array([eta * (v - self.mu)]))[0])
            return 0.5
        x = self.mu + math.sqrt(2.0) * self.stddev * _GH_Z
        return float(np.dot(_GH_W, _sigmoid(eta * (v - x))))


@dataclass(frozen=True)
class FinitePayoff:
    """Finite-support alternative payoff (used by the distributional oracle)."""

    atoms: tuple[float, ...]
    probs: tuple[float, ...]

    def __post_init__(self):
        if abs(sum(self.probs) - 1.0) > 1e-12 or any(p < 0 for p in self.probs):
            raise GameError("atom probabilities must form a distribution")

    def mean(self) -> float:
        return float(sum(a * p for a, p in zip(self.atoms, self.probs)))

    def cdf(self, v: float) -> float:
        return float(sum(p for a, p in zip(self.atoms, self.probs) if a <= v))

    def hedge_prob(self, v: float, eta: float) -> float:
        x = np.array(self.atoms)
        return float(np.dot(self.probs, _sigmoid(eta * (v - x))))


AlternativePayoff = ScalarPayoff | NormalPayoff | FinitePayoff


# -- frontier classes ------------------------------------------------------------


@dataclass(frozen=True)
class FrontierClass:
    """One player-1 knowledge class over ``S_top``.

    ``path_pairs`` are the (infoset, action index) pairs player 1 took on
    the way in; identical for every member by perfect recall.
    """

    key: tuple
    nodes: tuple[int, ...]
    path_pairs: tuple[tuple[int, int], ...]


def frontier_classes(game: GameTree, S: Subgame) -> list[FrontierClass]:
    grouped: dict[tuple, list[int]] = {}
    for h in S.top:
        grouped.setdefault(game.player_view(h, PLAYER1), []).append(h)
    out = []
    for key in sorted(grouped, key=lambda k: min(grouped[k])):
        nodes = tuple(sorted(grouped[key]))
        out.append(FrontierClass(key, nodes, game.player_sequence(nodes[0], PLAYER1)))
    return out


# -- gifts -------------------------------------------------------------------------


@dataclass(frozen=True)
class GiftPolicy:
    """How gifts are divided among subgames.

    ``equal`` applies each path gift in full to every subgame below it (the
    division used throughout the experiments).  ``scale`` multiplies the
    frontier bonuses; any value other than 1.0 forfeits the safety guarantee
    and is flagged on reports.
    """

    kind: str = "equal"
    scale: float = 1.0

    def __post_init__(self):
        if self.scale < 0:
            raise GameError("gift scale must be >= 0")

    @property
    def unsafe_scaled(self) -> bool:
        return self.scale != 1.0


@dataclass(frozen=True)
class GiftLedger:
    """Nonnegative per-(infoset, action) gifts plus per-frontier bonuses.

    ``raw_bonuses`` hold the unscaled per-class sums (one gift per path
    pair); the policy's scale factor is applied on read.
    """

    gifts: Mapping[tuple[int, int], float]
    policy: GiftPolicy
    raw_bonuses: Mapping[tuple, float]

    def bonus(self, class_key: tuple) -> float:
        return self.policy.scale * self.raw_bonuses.get(class_key, 0.0)


def _terminal_leading_actions(game: GameTree, infoset: int) -> list[int]:
    ist = game.infosets[infoset]
    out = []
    for a in range(len(ist.actions)):
        if all(game.nodes[game.nodes[m].children[a]].is_terminal for m in ist.nodes):
            out.append(a)
    return out


def compute_gifts(game: GameTree, blueprint2: BehavioralStrategy, S: Subgame, *,
                  policy: GiftPolicy = GiftPolicy(),
                  source: str = "lower_bound",
                  estimates: SolveResult | None = None) -> GiftLedger:
    """Gift values forfeited by player 1 on each action into ``S``.

    ``lower_bound`` uses the certified bound: the best counterfactual value
    among terminal-leading siblings (and the taken action itself) minus the
    taken action's value.  ``estimate`` instead uses final-iterate value
    estimates, clipped at zero.
    """
    classes = frontier_classes(game, S)
    cbr = run_cbr(game, blueprint2, PLAYER1)
    gifts: dict[tuple[int, int], float] = {}
    for c in classes:
        for iset, a in c.path_pairs:
            if (iset, a) in gifts:
                continue
            if source == "lower_bound":
                candidates = set(_terminal_leading_actions(game, iset)) | {a}
                best = max(cbr.cbv(iset, b) for b in sorted(candidates))
                g = best - cbr.cbv(iset, a)
            elif source == "estimate":
                if estimates is None:
                    raise GameError("gift source 'estimate' needs a blueprint solve")
                iv = estimates.final_values[PLAYER1][iset]
                av = estimates.final_action_values[PLAYER1][iset][a]
                g = iv - av
            else:
                raise GameError(f"unknown gift source {source!r}")
            gifts[(iset, a)] = max(0.0, float(g))
    raw = {c.key: sum(gifts[p] for p in c.path_pairs) for c in classes}
    return GiftLedger(gifts, policy, raw)


def apply_gift_policy(ledger: GiftLedger, policy: GiftPolicy) -> GiftLedger:
    """Same gifts under a different division/scaling policy."""
    return GiftLedger(ledger.gifts, policy, ledger.raw_bonuses)


# -- margins ----------------------------------------------------------------------


@dataclass(frozen=True)
class ClassMargin:
    key: tuple
    nodes: tuple[int, ...]
    subgame_margin: float
    bonus: float
    weight: float

    @property
    def reach_margin(self) -> float:
        return self.subgame_margin + self.bonus


@dataclass(frozen=True)
class MarginReport:
    method: str
    margins: tuple[ClassMargin, ...]

    @property
    def min_subgame_margin(self) -> float:
        return min(m.subgame_margin for m in self.margins)

    @property
    def min_reach_margin(self) -> float:
        return min(m.reach_margin for m in self.margins)


def _strategy2(blueprint) -> BehavioralStrategy:
    if isinstance(blueprint, StrategyProfile):
        return blueprint.p2
    return blueprint


def compute_margins(game: GameTree, blueprint, S: Subgame,
                    subgame_strategy, gifts: GiftLedger | None = None,
                    method: str = "") -> MarginReport:
    """Per-frontier-class margins of a re-solved strategy.

    The subgame margin compares player 1's best-response value at the class
    under the blueprint against the same value under the stitched strategy;
    the reach margin adds the ledger's bonus.
    """
    base = run_cbr(game, _strategy2(blueprint), PLAYER1)
    new = run_cbr(game, _strategy2(subgame_strategy), PLAYER1)
    rows = []
    for c in frontier_classes(game, S):
        m = base.class_value(c.nodes) - new.class_value(c.nodes)
        bonus = gifts.bonus(c.key) if gifts is not None else 0.0
        rows.append(ClassMargin(c.key, c.nodes, m, bonus,
                                base.class_weight(c.nodes)))
    return MarginReport(method, tuple(rows))


# -- augmented subgame construction --------------------------------------------------


@dataclass
class AugmentedSubgame:
    """A constructed solving game plus the bookkeeping to stitch back.

    ``entry_infosets`` maps frontier-class keys to the entry infoset in the
    augmented game (resolve-style games only); ``enter_action`` is the index
    of the action leading into the subgame copy at entry nodes.
    """

    game: GameTree
    kind: str                                   # unsafe | resolve | gadget
    source: Subgame
    source_game: GameTree
    classes: list[FrontierClass]
    alts: dict[tuple, AlternativePayoff]
    entry_infosets: dict[tuple, int]
    enter_action: int
    node_to_orig: dict[int, int]
    iset_to_orig: dict[int, int]
    zero_reach_classes: tuple[tuple, ...] = ()


def _copy_subgame_into(b: TreeBuilder, game: GameTree, h_top: int, parent: int,
                       action: str, prob: float | None, shift: float,
                       iset_suffix: str = "",
                       allow=None) -> list[tuple[int, int]]:
    """Copy the subtree below ``h_top`` under ``parent``; returns (new, orig) pairs.

    Decision nodes are keyed by their original infoset id so copies of one
    infoset reunify across entry branches; ``iset_suffix`` splits player-1
    infosets per observed outcome in the expanded distributional game.
    ``allow(node_id, label)`` optionally drops player actions from the copy
    (nested solving restricts continuations to the current abstraction).
    """
    pairs: list[tuple[int, int]] = []

    def rec(orig: int, parent: int, action: str, prob: float | None):
        n = game.nodes[orig]
        if n.is_terminal:
            nid = b.terminal(parent, action, payoff=n.payoff - shift, prob=prob,
                             public=n.public)
        elif n.player == CHANCE:
            nid = b.chance(parent, action, prob=prob, public=n.public)
        else:
            suffix = iset_suffix if n.player == PLAYER1 else ""
            nid = b.player(parent, action, player=n.player,
                           key=f"s:{n.infoset}{suffix}", prob=prob, public=n.public)
        pairs.append((nid, orig))
        if n.is_terminal:
            return
        for k, child in enumerate(n.children):
            if n.player != CHANCE and allow is not None \
                    and not allow(orig, n.actions[k]):
                continue
            pr = n.chance_probs[k] if n.player == CHANCE else None
            rec(child, nid, n.actions[k], pr)

    rec(h_top, parent, action, prob)
    return pairs


def _finish_aug(b: TreeBuilder, game: GameTree, kind: str, S: Subgame,
                classes, alts, pairs, zero_reach) -> AugmentedSubgame:
    aug_game = b.build({"name": f"augmented:{kind}"})
    node_to_orig = dict(pairs)
    iset_to_orig = {}
    entry_infosets = {}
    for ist in aug_game.infosets:
        if ist.label.startswith("s:"):
            orig = int(ist.label[2:].split("@")[0])
            iset_to_orig[ist.id] = orig
        elif ist.label.startswith("entry:"):
            idx = int(ist.label.split(":")[1])
            entry_infosets[classes[idx].key] = ist.id
    return AugmentedSubgame(aug_game, kind, S, game, classes, dict(alts),
                            entry_infosets, 1, node_to_orig, iset_to_orig,
                            tuple(zero_reach))


def unsafe_augment(game: GameTree, blueprint: StrategyProfile,
                   S: Subgame, allow=None) -> AugmentedSubgame:
    """Initial chance node straight into ``S``, weighted by full blueprint reach."""
    classes = frontier_classes(game, S)
    weights = {h: reach_probabilities(game, blueprint, h).total for h in S.top}
    total = sum(weights.values())
    if total <= 0.0:
        raise GameError("unsafe solving undefined: subgame has zero blueprint reach")
    b = TreeBuilder()
    root = b.chance(public="")
    pairs = []
    for c in classes:
        for h in c.nodes:
            pairs += _copy_subgame_into(b, game, h, root, f"h{h}",
                                        weights[h] / total, 0.0, allow=allow)
    return _finish_aug(b, game, "unsafe", S, classes, {}, pairs, ())


def resolve_augment(game: GameTree, blueprint: StrategyProfile, S: Subgame,
                    alt: Mapping[tuple, AlternativePayoff] | None = None,
                    allow=None) -> AugmentedSubgame:
    """Entry layer per Resolve: chance proportional to counterfactual reach,
    then a player-1 choice between the alternative payoff and entering.

    ``alt`` defaults to the blueprint counterfactual best response value of
    each frontier class; classes with zero counterfactual reach fall back to
    their best terminal payoff (recorded in ``zero_reach_classes``).
    """
    classes = frontier_classes(game, S)
    zero_reach = []
    if alt is None:
        cbr = run_cbr(game, _strategy2(blueprint), PLAYER1)
        alt = {}
        for c in classes:
            try:
                alt[c.key] = ScalarPayoff(cbr.class_value(c.nodes))
            except UndefinedValueError:
                bound = max(game.nodes[d].payoff for h in c.nodes
                            for d in game.descendants(h)
                            if game.nodes[d].is_terminal)
                alt[c.key] = ScalarPayoff(bound)
                zero_reach.append(c.key)
    else:
        missing = [c.key for c in classes if c.key not in alt]
        if missing:
            raise GameError(f"alternative payoff missing for classes {missing}")
        alt = {k: (ScalarPayoff(v) if isinstance(v, (int, float)) else v)
               for k, v in alt.items()}

    weights = {h: reach_probabilities(game, blueprint, h).excluding(PLAYER1)
               for h in S.top}
    total = sum(weights.values())
    if total <= 0.0:
        raise GameError("subgame has zero counterfactual reach")

    b = TreeBuilder()
    root = b.chance(public="")
    pairs = []
    for idx, c in enumerate(classes):
        for h in c.nodes:
            entry = b.player(root, f"h{h}", player=PLAYER1, key=f"entry:{idx}",
                             prob=weights[h] / total, public=f"entry:{idx}")
            b.terminal(entry, "out", payoff=alt[c.key].mean(),
                       public=f"entry:{idx}/out")
            pairs += _copy_subgame_into(b, game, h, entry, "enter", None, 0.0,
                                        allow=allow)
    return _finish_aug(b, game, "resolve", S, classes, alt, pairs, zero_reach)


def maxmargin_gadget(aug: AugmentedSubgame) -> AugmentedSubgame:
    """Margin-maximizing transform of a resolve-style augmented subgame.

    Alternative payoffs disappear; all player-1 payoffs below a frontier
    class are shifted down by the class's alternative payoff; player 1 picks
    the class to enter at the root, then chance picks the node within it in
    proportion to counterfactual reach.
    """
    if aug.kind != "resolve":
        raise GameError("gadget transform expects a resolve augmented subgame")
    for key, a in aug.alts.items():
        if not isinstance(a, ScalarPayoff):
            raise GameError(
                "gadget transform requires scalar alternative payoffs; "
                "use distributional solving instead")
    game = aug.game
    b = TreeBuilder()
    root = b.player(None, "", player=PLAYER1, key="gadget-root", public="")
    pairs = []
    # entry nodes of one class are the members of its entry infoset
    for idx, c in enumerate(aug.classes):
        iset = aug.entry_infosets[c.key]
        members = game.infosets[iset].nodes
        w = np.array([game.nodes[game.nodes[m].parent].chance_probs[
            game.nodes[m].parent_action] for m in members])
        w = w / w.sum() if w.sum() > 0 else np.full(len(members), 1.0 / len(members))
        cn = b.chance(root, f"enter:{idx}", public=f"enter:{idx}")
        shift = aug.alts[c.key].value
        for m, wm in zip(members, w):
            h_top = game.nodes[m].children[aug.enter_action]
            pairs += _copy_gadget_subtree(b, game, h_top, cn, f"h{m}", float(wm),
                                          shift)
    gadget_game = b.build({"name": "augmented:gadget"})
    node_map = {}
    iset_map = {}
    for new, old in pairs:
        orig = aug.node_to_orig.get(old)
        if orig is not None:
            node_map[new] = orig
    for ist in gadget_game.infosets:
        if ist.label.startswith("s:"):
            # labels carry the *original* infoset id straight through
            iset_map[ist.id] = int(ist.label[2:].split("@")[0])
    return AugmentedSubgame(gadget_game, "gadget", aug.source, aug.source_game,
                            aug.classes, dict(aug.alts), {}, aug.enter_action,
                            node_map, iset_map, aug.zero_reach_classes)


def _copy_gadget_subtree(b: TreeBuilder, game: GameTree, node: int, parent: int,
                         action: str, prob: float | None,
                         shift: float) -> list[tuple[int, int]]:
    """Copy an augmented-game subtree, shifting terminals and keeping keys."""
    pairs = []

    def rec(orig: int, parent: int, action: str, prob: float | None):
        n = game.nodes[orig]
        if n.is_terminal:
            nid = b.terminal(parent, action, payoff=n.payoff - shift, prob=prob,
                             public=n.public)
        elif n.player == CHANCE:
            nid = b.chance(parent, action, prob=prob, public=n.public)
        else:
            key = game.infosets[n.infoset].label
            nid = b.player(parent, action, player=n.player, key=key, prob=prob,
                           public=n.public)
        pairs.append((nid, orig))
        if not n.is_terminal:
            for k, child in enumerate(n.children):
                pr = n.chance_probs[k] if n.player == CHANCE else None
                rec(child, nid, n.actions[k], pr)

    rec(node, parent, action, prob)
    return pairs


def expanded_distributional_game(game: GameTree, blueprint: StrategyProfile,
                                 S: Subgame,
                                 dists: Mapping[tuple, FinitePayoff],
                                 ) -> AugmentedSubgame:
    """Explicit finite-support distributional augmented subgame.

    Chance draws the alternative-payoff outcome per frontier class; player 1
    observes the draw (entry and interior player-1 infosets split per atom),
    player 2 does not (its infosets reunify across atoms).  This is the
    brute-force counterpart the gadget's entry rule is checked against.
    """
    classes = frontier_classes(game, S)
    missing = [c.key for c in classes if c.key not in dists]
    if missing:
        raise GameError(f"distribution missing for classes {missing}")
    weights = {h: reach_probabilities(game, blueprint, h).excluding(PLAYER1)
               for h in S.top}
    total = sum(weights.values())
    if total <= 0.0:
        raise GameError("subgame has zero counterfactual reach")
    b = TreeBuilder()
    root = b.chance(public="")
    pairs = []
    for idx, c in enumerate(classes):
        dist = dists[c.key]
        for h in c.nodes:
            for ai, (atom, p_atom) in enumerate(zip(dist.atoms, dist.probs)):
                entry = b.player(root, f"h{h}x{ai}", player=PLAYER1,
                                 key=f"entry:{idx}@{ai}",
                                 prob=weights[h] / total * p_atom,
                                 public=f"entry:{idx}")
                b.terminal(entry, "out", payoff=atom,
                           public=f"entry:{idx}/out")
                pairs += _copy_subgame_into(b, game, h, entry, "enter", None,
                                            0.0, iset_suffix=f"@{ai}")
    aug_game = b.build({"name": "augmented:expanded-distributional"})
    node_to_orig = dict(pairs)
    iset_to_orig = {}
    entry_infosets: dict[tuple, int] = {}
    for ist in aug_game.infosets:
        if ist.label.startswith("s:"):
            iset_to_orig[ist.id] = int(ist.label[2:].split("@")[0])
        elif ist.label.startswith("entry:"):
            idx, ai = ist.label[len("entry:"):].split("@")
            entry_infosets[(classes[int(idx)].key, int(ai))] = ist.id
    return AugmentedSubgame(aug_game, "resolve", S, game, classes, dict(dists),
                            entry_infosets, 1, node_to_orig, iset_to_orig, ())


# -- distributional entry rule -----------------------------------------------------


class DistributionalEntryHook:
    """Entry-probability rule for distributional alternative payoffs.

    Under ``cfr-br`` the subgame is entered with probability
    P(X <= v_t(enter)); under ``hedge`` with the softmax expectation over
    the payoff distribution, using the running mean of the entry value and
    the variance-tuned temperature.
    """

    def __init__(self, aug: AugmentedSubgame, rule: str = "hedge"):
        if rule not in ("hedge", "cfr-br"):
            raise GameError(f"unknown distributional rule {rule!r}")
        self.aug = aug
        self.rule = rule
        self._entries: list[dict] = []

    def bind(self, solver: CfrSolver) -> None:
        ta = solver.ta
        game = self.aug.game
        self._entries = []
        for c in self.aug.classes:
            iset = self.aug.entry_infosets[c.key]
            members = ta.iset_members[iset]
            w = np.array([game.nodes[game.nodes[m].parent].chance_probs[
                game.nodes[m].parent_action] for m in members])
            if w.sum() <= 0:
                continue  # zero-reach class: entry rule is irrelevant
            self._entries.append({
                "iset": int(iset),
                "weights": w / w.sum(),
                "children": ta.iset_children[iset][:, self.aug.enter_action],
                "dist": self.aug.alts[c.key],
                "sum_v": 0.0,
                "count": 0,
                "mean": 0.0,
                "m2": 0.0,
            })

    def apply(self, t, v, set_probs) -> None:
        for e in self._entries:
            v_enter = float(np.dot(e["weights"], v[e["children"]]))
            dist = e["dist"]
            if self.rule == "cfr-br":
                p = dist.cdf(v_enter)
            else:
                e["sum_v"] += v_enter
                vhat = e["sum_v"] / (e["count"] + 1)
                var = e["m2"] / e["count"] if e["count"] else 0.0
                if var <= 0.0:
                    p = dist.cdf(vhat)
                else:
                    eta = math.sqrt(math.log(2.0)) / (3.0 * math.sqrt(var) * math.sqrt(t))
                    p = dist.hedge_prob(vhat, eta)
            probs = np.array([1.0 - p, p])
            set_probs(e["iset"], probs)
            x = p * v_enter + (1.0 - p) * dist.mean()
            e["count"] += 1
            delta = x - e["mean"]
            e["mean"] += delta / e["count"]
            e["m2"] += delta * (x - e["mean"])


# -- solving and stitching -----------------------------------------------------------


@dataclass
class AugmentedSolve:
    aug: AugmentedSubgame
    result: SolveResult
    iterations: int
    aug_margins: dict[tuple, float]


def _aug_margins(aug: AugmentedSubgame,
                 sigma2: BehavioralStrategy) -> dict[tuple, float]:
    """Margins measured inside the augmented game (exact given strategies)."""
    if aug.kind == "unsafe":
        return {}
    cbr = run_cbr(aug.game, sigma2, PLAYER1)
    out = {}
    if aug.kind == "resolve":
        for c in aug.classes:
            iset = aug.entry_infosets.get(c.key)
            if iset is None or not cbr.defined(iset):
                continue
            out[c.key] = aug.alts[c.key].mean() - cbr.cbv(iset, aug.enter_action)
    else:  # gadget: margins are the negated root action values
        root_iset = aug.game.nodes[aug.game.root].infoset
        for k, c in enumerate(aug.classes):
            out[c.key] = -cbr.cbv(root_iset, k)
    return out


def solve_augmented(aug: AugmentedSubgame, *, iterations: int,
                    margin_tol: float | None = None,
                    check_every: int = 128,
                    variant: str = "cfr+",
                    hook: DistributionalEntryHook | None = None,
                    ) -> AugmentedSolve:
    """Solve an augmented subgame, optionally stopping early once every
    margin clears ``-margin_tol`` (the safety certificate; further
    iterations only polish the solution)."""
    config = SolverConfig(iterations=max(iterations, 1), variant=variant,
                          entry_hook=hook)
    solver = CfrSolver(aug.game, config)
    done = 0
    margins: dict[tuple, float] = {}
    while done < iterations:
        step = min(check_every, iterations - done)
        solver.run(step)
        done += step
        if margin_tol is not None and aug.kind != "unsafe":
            margins = _aug_margins(aug, solver.average_profile().p2)
            if margins and min(margins.values()) >= -margin_tol:
                break
    if margin_tol is None or aug.kind == "unsafe":
        margins = _aug_margins(aug, solver.average_profile().p2)
    return AugmentedSolve(aug, solver.result(), done, margins)


def stitch_updates(game: GameTree, aug: AugmentedSubgame,
                   solved: BehavioralStrategy, player: int = PLAYER2,
                   ) -> dict[int, np.ndarray]:
    """Per-infoset strategy updates from an augmented solve, keyed by the
    original game's infosets.

    When the augmented copy was action-restricted, probabilities scatter
    back onto the full action list by label (removed actions get zero).
    """
    updates: dict[int, np.ndarray] = {}
    for aug_iset, orig_iset in aug.iset_to_orig.items():
        a_ist = aug.game.infosets[aug_iset]
        if a_ist.player != player:
            continue
        o_ist = game.infosets[orig_iset]
        probs = solved[aug_iset]
        if a_ist.actions == o_ist.actions:
            updates[orig_iset] = probs
        else:
            full = np.zeros(len(o_ist.actions))
            for j, label in enumerate(a_ist.actions):
                full[o_ist.actions.index(label)] = probs[j]
            updates[orig_iset] = full
    return updates


def stitch(blueprint2: BehavioralStrategy, aug: AugmentedSubgame,
           solved2: BehavioralStrategy) -> BehavioralStrategy:
    """Blueprint outside ``S``, the solved strategy inside; player 2 only."""
    return blueprint2.replace(
        stitch_updates(aug.source_game, aug, solved2, PLAYER2))


# -- method configuration and the orchestrator ---------------------------------------


@dataclass(frozen=True)
class DistConfig:
    family: str = "normal"
    rule: str = "hedge"                 # hedge | cfr-br
    stddev_source: str = "heuristic"    # heuristic | explicit
    stddevs: Mapping[tuple, float] | None = None


@dataclass(frozen=True)
class MethodConfig:
    """One subgame-solving method: base construction plus refinements."""

    name: str
    base: str = "resolve"               # unsafe | resolve | maxmargin
    reach: bool = False
    alt_source: str = "blueprint"       # blueprint | estimate | exhaustive | explicit
    alt_values: Mapping[tuple, float] | None = None
    gift_policy: GiftPolicy = GiftPolicy()
    gift_source: str = "lower_bound"
    distributional: DistConfig | None = None
    iterations: int = 10_000
    margin_tol: float | None = None
    check_every: int = 256
    seed: int = 0


_METHOD_NAMES = {
    "unsafe": dict(base="unsafe"),
    "resolve": dict(base="resolve"),
    "maxmargin": dict(base="maxmargin"),
    "reach-resolve": dict(base="resolve", reach=True),
    "reach-maxmargin": dict(base="maxmargin", reach=True),
    "estimate": dict(base="resolve", alt_source="estimate"),
    "reach-estimate": dict(base="resolve", reach=True, alt_source="estimate"),
}


def parse_method(name: str, **overrides) -> MethodConfig:
    """Method configs from paper-style names, e.g. ``reach-maxmargin`` or
    ``estimate+distributional``."""
    base_name = name
    dist = None
    if name.endswith("+distributional"):
        base_name = name[: -len("+distributional")]
        dist = DistConfig()
    spec = _METHOD_NAMES.get(base_name)
    if spec is None:
        raise GameError(f"unknown method {name!r}")
    fields = dict(spec)
    if dist is not None:
        fields["distributional"] = dist
    fields.update(overrides)
    return MethodConfig(name=name, **fields)


@dataclass
class SubgameSolveReport:
    """Stitched strategy plus the margin/gift bookkeeping for one method."""

    method: MethodConfig
    strategy2: BehavioralStrategy
    margins: MarginReport
    ledger: GiftLedger | None
    alts: dict[tuple, float]
    iterations: int
    aug_nodes: int
    zero_reach_classes: tuple[tuple, ...] = ()
    unsafe_scaled: bool = False
    aug: AugmentedSubgame | None = None
    solve_result: SolveResult | None = None

    def updates(self, player: int = PLAYER2) -> dict[int, np.ndarray]:
        source = self.solve_result.average.for_player(player)
        return stitch_updates(self.aug.source_game, self.aug, source, player)


def _class_estimates(game: GameTree, blueprint_solve: SolveResult,
                     classes: Sequence[FrontierClass]) -> dict[tuple, float]:
    """Final-iterate value of each frontier class: the abstract stand-in for
    its counterfactual best response value."""
    profile = StrategyProfile(blueprint_solve.final.p1, blueprint_solve.average.p2)
    vp = expected_values(game, profile)
    out = {}
    for c in classes:
        try:
            out[c.key] = vp.class_value(c.nodes, PLAYER1)
        except UndefinedValueError:
            out[c.key] = float("nan")
    return out


def stddev_heuristic(game: GameTree, blueprint_solve: SolveResult,
                     blueprint2: BehavioralStrategy,
                     nodes: Sequence[int],
                     estimate: float | None = None) -> float:
    """Distribution width for a frontier class: the gap between its abstract
    blueprint value and the exact counterfactual best response value."""
    if estimate is None:
        profile = StrategyProfile(blueprint_solve.final.p1,
                                  blueprint_solve.average.p2)
        estimate = expected_values(game, profile).class_value(list(nodes), PLAYER1)
    true_cbv = run_cbr(game, blueprint2, PLAYER1).class_value(list(nodes))
    return abs(estimate - true_cbv)


def subgame_solve(game: GameTree, blueprint: StrategyProfile, S: Subgame,
                  method: MethodConfig, *,
                  blueprint_solve: SolveResult | None = None,
                  allow=None,
                  alt_override: Mapping[tuple, float] | None = None,
                  ) -> SubgameSolveReport:
    """Construct and solve the configured augmented subgame, stitch the
    player-2 solution over the blueprint, and report margins.

    ``allow`` restricts the copied continuation to an action subset (nested
    solving); ``alt_override`` substitutes precomputed alternative payoffs.
    """
    classes = frontier_classes(game, S)
    zero_reach: list[tuple] = []
    ledger = None

    if method.base == "unsafe":
        if method.distributional or method.reach:
            raise GameError("unsafe solving takes no alternative payoffs")
        aug = unsafe_augment(game, blueprint, S, allow=allow)
        solved = solve_augmented(aug, iterations=method.iterations,
                                 margin_tol=None, check_every=method.check_every)
        stitched = stitch(blueprint.p2, aug, solved.result.average.p2)
        margins = compute_margins(game, blueprint.p2, S, stitched, None,
                                  method.name)
        return SubgameSolveReport(method, stitched, margins, None, {},
                                  solved.iterations, len(aug.game),
                                  aug=aug, solve_result=solved.result)

    # alternative payoffs
    if alt_override is not None:
        alt = {c.key: float(alt_override[c.key]) for c in classes}
    elif method.alt_source == "explicit":
        if method.alt_values is None:
            raise GameError("explicit alt_source needs alt_values")
        alt = {c.key: float(method.alt_values[c.key]) for c in classes}
    elif method.alt_source in ("blueprint", "exhaustive"):
        cbr = run_cbr(game, blueprint.p2, PLAYER1)
        alt = {}
        for c in classes:
            try:
                alt[c.key] = cbr.class_value(c.nodes)
            except UndefinedValueError:
                alt[c.key] = max(game.nodes[d].payoff for h in c.nodes
                                 for d in game.descendants(h)
                                 if game.nodes[d].is_terminal)
                zero_reach.append(c.key)
    elif method.alt_source == "estimate":
        if blueprint_solve is None:
            raise GameError("estimate alt_source needs the blueprint solve")
        est = _class_estimates(game, blueprint_solve, classes)
        alt = {}
        for c in classes:
            if math.isnan(est[c.key]):
                alt[c.key] = max(game.nodes[d].payoff for h in c.nodes
                                 for d in game.descendants(h)
                                 if game.nodes[d].is_terminal)
                zero_reach.append(c.key)
            else:
                alt[c.key] = est[c.key]
    else:
        raise GameError(f"unknown alt_source {method.alt_source!r}")

    alt_base = dict(alt)
    if method.reach:
        ledger = compute_gifts(game, blueprint.p2, S, policy=method.gift_policy,
                               source=method.gift_source,
                               estimates=blueprint_solve)
        alt = {k: v + ledger.bonus(k) for k, v in alt.items()}

    # For estimated alternative payoffs a margin tolerance is measured
    # against the estimates themselves; callers set it no tighter than the
    # estimate error (or leave it None for a fixed budget).
    margin_tol = method.margin_tol

    if method.distributional is not None:
        dcfg = method.distributional
        if dcfg.family != "normal":
            raise GameError(f"unsupported distribution family {dcfg.family!r}")
        dists: dict[tuple, AlternativePayoff] = {}
        for c in classes:
            if dcfg.stddev_source == "explicit":
                s = float((dcfg.stddevs or {}).get(c.key, 0.0))
            else:
                if blueprint_solve is None:
                    raise GameError("stddev heuristic needs the blueprint solve")
                # width from the pre-gift blueprint value; the mean keeps gifts
                s = stddev_heuristic(game, blueprint_solve, blueprint.p2, c.nodes,
                                     estimate=None if method.alt_source == "estimate"
                                     else alt_base[c.key])
            dists[c.key] = NormalPayoff(alt[c.key], s)
        aug = resolve_augment(game, blueprint, S, alt=dists, allow=allow)
        hook = DistributionalEntryHook(aug, dcfg.rule)
        solved = solve_augmented(aug, iterations=method.iterations,
                                 margin_tol=None, check_every=method.check_every,
                                 hook=hook)
    elif method.base == "resolve":
        aug = resolve_augment(game, blueprint, S, allow=allow,
                              alt={k: ScalarPayoff(v) for k, v in alt.items()})
        solved = solve_augmented(aug, iterations=method.iterations,
                                 margin_tol=margin_tol,
                                 check_every=method.check_every)
    elif method.base == "maxmargin":
        base_aug = resolve_augment(game, blueprint, S, allow=allow,
                                   alt={k: ScalarPayoff(v) for k, v in alt.items()})
        aug = maxmargin_gadget(base_aug)
        solved = solve_augmented(aug, iterations=method.iterations,
                                 margin_tol=margin_tol,
                                 check_every=method.check_every)
    else:
        raise GameError(f"unknown method base {method.base!r}")

    stitched = stitch(blueprint.p2, solved.aug, solved.result.average.p2)
    margins = compute_margins(game, blueprint.p2, S, stitched, ledger, method.name)
    zr = tuple(zero_reach) + getattr(solved.aug, "zero_reach_classes", ())
    return SubgameSolveReport(method, stitched, margins, ledger, alt,
                              solved.iterations, len(solved.aug.game),
                              zero_reach_classes=zr,
                              unsafe_scaled=method.gift_policy.unsafe_scaled
                              and method.reach,
                              aug=solved.aug, solve_result=solved.result)


def solve_subgames(game: GameTree, blueprint: StrategyProfile,
                   subgames: Sequence[Subgame], method: MethodConfig, *,
                   blueprint_solve: SolveResult | None = None,
                   ) -> tuple[BehavioralStrategy, list[SubgameSolveReport]]:
    """Independently re-solve a set of disjoint subgames and merge patches."""
    merged = blueprint.p2
    reports = []
    for S in subgames:
        rep = subgame_solve(game, blueprint, S, method,
                            blueprint_solve=blueprint_solve)
        reports.append(rep)
        updates = {ist.id: rep.strategy2[ist.id] for ist in game.infosets
                   if ist.player == PLAYER2 and ist.nodes[0] in S.nodes}
        merged = merged.replace(updates)
    return merged, reports


def constrained_best_p2(game: GameTree, blueprint: StrategyProfile,
                        subgames: Sequence[Subgame], *,
                        iterations: int = 50_000, gap_tol: float = 1e-7,
                        check_every: int = 512) -> BehavioralStrategy:
    """Minimally exploitable player-2 strategy that differs from the
    blueprint only inside the given subgames.

    Computed by freezing player 2 outside the subgames (those nodes become
    chance nodes playing the blueprint) and solving the remaining game
    jointly to convergence.
    """
    inside: set[int] = set()
    for S in subgames:
        inside |= S.nodes
    b = TreeBuilder()

    def rec(orig: int, parent: int | None, action: str, prob: float | None):
        n = game.nodes[orig]
        if n.is_terminal:
            b.terminal(parent, action, payoff=n.payoff, prob=prob, public=n.public)
            return
        if n.player == CHANCE:
            nid = b.chance(parent, action, prob=prob, public=n.public)
            for k, child in enumerate(n.children):
                rec(child, nid, n.actions[k], n.chance_probs[k])
        elif n.player == PLAYER2 and orig not in inside:
            nid = b.chance(parent, action, prob=prob, public=n.public)
            probs = blueprint.p2[n.infoset]
            for k, child in enumerate(n.children):
                rec(child, nid, n.actions[k], float(probs[k]))
        else:
            nid = b.player(parent, action, player=n.player, key=f"s:{n.infoset}",
                           prob=prob, public=n.public)
            for k, child in enumerate(n.children):
                rec(child, nid, n.actions[k], None)

    rec(game.root, None, "", None)
    frozen = b.build({"name": "frozen-outside"})
    solver = CfrSolver(frozen, SolverConfig())
    done = 0
    from .equilibrium import profile_gap
    while done < iterations:
        step = min(check_every, iterations - done)
        solver.run(step)
        done += step
        if profile_gap(frozen, solver.average_profile()) <= gap_tol:
            break
    avg2 = solver.average_profile().p2
    updates = {}
    for ist in frozen.infosets:
        if ist.player != PLAYER2:
            continue
        orig = int(ist.label[2:])
        updates[orig] = avg2[ist.id]
    return blueprint.p2.replace(updates)
