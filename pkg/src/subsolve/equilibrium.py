"""Equilibrium computation: CFR / CFR+ solving, best response, CBV,
exploitability.

The solver walks the tree in vectorized level passes over flat edge arrays,
so iteration cost is a handful of numpy operations per tree level.  CFR+
follows the standard recipe: regret-matching+ (regrets clamped at zero after
every update), alternating updates, and linearly weighted strategy
averaging.  Designated infosets can instead be driven by Hedge or by an
entry-probability hook, which is how the distributional subgame gadget
plugs in.

All solving is deterministic: no sampling, fixed traversal order, fixed
tie-breaking (lowest action index).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Hashable, Mapping, Protocol, Sequence

import numpy as np

from .efg import (
    CHANCE,
    PLAYER1,
    PLAYER2,
    BehavioralStrategy,
    GameError,
    GameTree,
    StrategyProfile,
    UndefinedValueError,
)


def opponent(player: int) -> int:
    return PLAYER2 if player == PLAYER1 else PLAYER1


# -- compiled tree ------------------------------------------------------------


class TreeArrays:
    """Flat array view of a game tree for vectorized passes.

    ``groups`` optionally maps infoset ids to shared table keys (information
    abstraction by table sharing); grouped infosets must agree on acting
    player and action count.  Two slot layouts coexist: group slots for the
    solver's regret/average tables and per-infoset slots for evaluating
    arbitrary strategies.
    """

    def __init__(self, game: GameTree, groups: Mapping[int, Hashable] | None = None):
        self.game = game
        n = len(game.nodes)
        self.player = np.array([nd.player for nd in game.nodes], dtype=np.int8)
        self.payoff = np.array([nd.payoff for nd in game.nodes])
        self.depth = np.array([nd.depth for nd in game.nodes])

        # group table layout
        key_of = {}
        for ist in game.infosets:
            key = groups.get(ist.id, ("self", ist.id)) if groups else ("self", ist.id)
            key_of[ist.id] = key
        group_ids: dict[Hashable, int] = {}
        group_player: list[int] = []
        group_size: list[int] = []
        iset_group = np.zeros(len(game.infosets), dtype=int)
        for ist in game.infosets:
            key = key_of[ist.id]
            if key not in group_ids:
                group_ids[key] = len(group_ids)
                group_player.append(ist.player)
                group_size.append(len(ist.actions))
            g = group_ids[key]
            if group_player[g] != ist.player or group_size[g] != len(ist.actions):
                raise GameError(f"group {key!r} mixes players or action counts")
            iset_group[ist.id] = g
        self.n_groups = len(group_ids)
        self.group_player = np.array(group_player, dtype=np.int8)
        self.group_size = np.array(group_size, dtype=int)
        self.g_offset = np.concatenate(([0], np.cumsum(self.group_size)))[:-1] \
            if self.n_groups else np.zeros(0, dtype=int)
        self.n_gslots = int(self.group_size.sum()) if self.n_groups else 0
        self.iset_group = iset_group
        self.slot_group = np.repeat(np.arange(self.n_groups), self.group_size) \
            if self.n_groups else np.zeros(0, dtype=int)
        self.slot_uniform = 1.0 / self.group_size[self.slot_group] \
            if self.n_gslots else np.zeros(0)
        self.gslot_player = self.group_player[self.slot_group] \
            if self.n_gslots else np.zeros(0, dtype=np.int8)

        # per-infoset slot layout
        sizes = np.array([len(i.actions) for i in game.infosets], dtype=int)
        self.iset_size = sizes
        self.i_offset = np.concatenate(([0], np.cumsum(sizes)))[:-1] \
            if len(sizes) else np.zeros(0, dtype=int)
        self.n_islots = int(sizes.sum()) if len(sizes) else 0
        self.islot_iset = np.repeat(np.arange(len(sizes)), sizes) \
            if self.n_islots else np.zeros(0, dtype=int)

        # edges sorted by (parent depth, parent, action index)
        rows = []
        for nd in game.nodes:
            for k, child in enumerate(nd.children):
                rows.append((nd.depth, nd.id, k, child))
        rows.sort()
        e = len(rows)
        self.e_parent = np.array([r[1] for r in rows], dtype=int)
        self.e_child = np.array([r[3] for r in rows], dtype=int)
        self.e_aidx = np.array([r[2] for r in rows], dtype=int)
        self.e_player = self.player[self.e_parent]
        self.e_chance_prob = np.zeros(e)
        self.e_slot = np.full(e, -1, dtype=int)
        self.e_islot = np.full(e, -1, dtype=int)
        for idx, (_, pid, k, _) in enumerate(rows):
            nd = game.nodes[pid]
            if nd.player == CHANCE:
                self.e_chance_prob[idx] = nd.chance_probs[k]
            else:
                g = iset_group[nd.infoset]
                self.e_slot[idx] = self.g_offset[g] + k
                self.e_islot[idx] = self.i_offset[nd.infoset] + k
        self.e_decision = np.nonzero(self.e_slot >= 0)[0]

        # level structure: contiguous edge ranges per parent depth, with
        # reduceat offsets per distinct parent
        self.levels: list[tuple[int, int, np.ndarray, np.ndarray]] = []
        lo = 0
        while lo < e:
            d = self.depth[self.e_parent[lo]]
            hi = lo
            while hi < e and self.depth[self.e_parent[hi]] == d:
                hi += 1
            par = self.e_parent[lo:hi]
            starts = np.nonzero(np.diff(par, prepend=par[0] - 1))[0]
            self.levels.append((lo, hi, par[starts], starts))
            lo = hi

        # per-player edge slices for the update step
        self.p_edges = {
            pl: np.nonzero(self.e_player == pl)[0] for pl in (PLAYER1, PLAYER2)
        }

        # first edge index of every non-terminal node (edges are contiguous)
        self.node_edge_start: dict[int, int] = {}
        for idx, pid in enumerate(self.e_parent):
            if int(pid) not in self.node_edge_start:
                self.node_edge_start[int(pid)] = idx

        # infoset membership (members must share depth: the bottom-up passes
        # resolve a whole infoset at one level)
        self.iset_members: list[np.ndarray] = []
        self.iset_children: list[np.ndarray] = []
        self.isets_at_depth: dict[int, list[int]] = {}
        for ist in game.infosets:
            members = np.array(ist.nodes, dtype=int)
            depths = {game.nodes[m].depth for m in ist.nodes}
            if len(depths) > 1:
                raise GameError(
                    f"infoset {ist.id} spans depths {sorted(depths)}; "
                    "the solver requires uniform-depth infosets")
            self.iset_members.append(members)
            self.iset_children.append(np.array(
                [game.nodes[m].children for m in ist.nodes], dtype=int))
            self.isets_at_depth.setdefault(depths.pop(), []).append(ist.id)


def compile_tree(game: GameTree,
                 groups: Mapping[int, Hashable] | None = None) -> TreeArrays:
    key = ("identity" if groups is None
           else tuple(sorted(groups.items())))
    cached = game._compiled.get(key)
    if cached is None:
        cached = game._compiled[key] = TreeArrays(game, groups)
    return cached


def _iflat(ta: TreeArrays, *strategies: BehavioralStrategy) -> np.ndarray:
    flat = np.zeros(ta.n_islots)
    for strat in strategies:
        if strat is None:
            continue
        for iset, probs in strat.probs.items():
            off = ta.i_offset[iset]
            flat[off:off + len(probs)] = probs
    return flat


def _edge_probs_from_iflat(ta: TreeArrays, iflat: np.ndarray) -> np.ndarray:
    pe = ta.e_chance_prob.copy()
    dec = ta.e_decision
    pe[dec] = iflat[ta.e_islot[dec]]
    return pe


def _down_pass(ta: TreeArrays, pe: np.ndarray):
    n = len(ta.player)
    r1, r2, rc = np.ones(n), np.ones(n), np.ones(n)
    for lo, hi, _, _ in ta.levels:
        par = ta.e_parent[lo:hi]
        ch = ta.e_child[lo:hi]
        f = pe[lo:hi]
        pl = ta.e_player[lo:hi]
        r1[ch] = r1[par] * np.where(pl == PLAYER1, f, 1.0)
        r2[ch] = r2[par] * np.where(pl == PLAYER2, f, 1.0)
        rc[ch] = rc[par] * np.where(pl == CHANCE, f, 1.0)
    return r1, r2, rc


def _up_pass(ta: TreeArrays, pe: np.ndarray) -> np.ndarray:
    v = ta.payoff.copy()
    for lo, hi, parents, starts in reversed(ta.levels):
        prod = pe[lo:hi] * v[ta.e_child[lo:hi]]
        v[parents] = np.add.reduceat(prod, starts)
    return v


# -- value evaluation under a fixed profile ------------------------------------


@dataclass
class ValuePass:
    """Node values and counterfactual infoset values under a fixed profile."""

    game: GameTree
    v: np.ndarray          # expected payoff to player 1 per node
    r1: np.ndarray
    r2: np.ndarray
    rc: np.ndarray
    _q: np.ndarray         # per infoset-slot: sum_h pi_minus(h) * v1(child)
    _denom: np.ndarray     # per infoset: sum_h pi_minus(h)
    _ta: TreeArrays

    def reach_excluding(self, player: int) -> np.ndarray:
        return self.rc * (self.r2 if player == PLAYER1 else self.r1)

    def infoset_value(self, infoset: int, action: int | None = None) -> float:
        ist = self.game.infosets[infoset]
        sign = 1.0 if ist.player == PLAYER1 else -1.0
        den = self._denom[infoset]
        if den <= 0.0:
            raise UndefinedValueError(
                f"infoset {infoset} has zero counterfactual reach")
        if action is None:
            pim = self.reach_excluding(ist.player)
            num = float((pim[list(ist.nodes)] * self.v[list(ist.nodes)]).sum())
        else:
            num = self._q[self._ta.i_offset[infoset] + action]
        return sign * num / den

    def class_value(self, nodes: Sequence[int], player: int) -> float:
        """pi_{-player}-weighted value of a set of nodes, in player's units."""
        pim = self.reach_excluding(player)[list(nodes)]
        den = float(pim.sum())
        if den <= 0.0:
            raise UndefinedValueError("node class has zero counterfactual reach")
        sign = 1.0 if player == PLAYER1 else -1.0
        return sign * float((pim * self.v[list(nodes)]).sum()) / den


def expected_values(game: GameTree, profile: StrategyProfile) -> ValuePass:
    ta = compile_tree(game)
    pe = _edge_probs_from_iflat(ta, _iflat(ta, profile.p1, profile.p2))
    v = _up_pass(ta, pe)
    r1, r2, rc = _down_pass(ta, pe)
    q = np.zeros(ta.n_islots)
    denom = np.zeros(len(game.infosets))
    if ta.n_islots:
        dec = ta.e_decision
        par = ta.e_parent[dec]
        pl = ta.e_player[dec]
        pim = np.where(pl == PLAYER1, r2[par] * rc[par], r1[par] * rc[par])
        np.add.at(q, ta.e_islot[dec], pim * v[ta.e_child[dec]])
        for ist in game.infosets:
            members = ta.iset_members[ist.id]
            w = rc[members] * (r2 if ist.player == PLAYER1 else r1)[members]
            denom[ist.id] = w.sum()
    return ValuePass(game, v, r1, r2, rc, q, denom, ta)


# -- counterfactual best response ------------------------------------------------


@dataclass
class CbrPass:
    """Result of one counterfactual-best-response computation.

    ``strategy`` is the pure CBR (argmax at every infoset, including
    zero-reach ones, ties to the lowest action index); ``value`` is the best
    response value at the root in the responding player's units.
    """

    player: int
    value: float
    strategy: BehavioralStrategy
    v: np.ndarray                 # node values (player-1 units) under <CBR, opp>
    pi_minus: np.ndarray
    _q: np.ndarray                # per infoset-slot, in player's units
    _denom: np.ndarray
    _ta: TreeArrays

    def cbv(self, infoset: int, action: int | None = None) -> float:
        den = self._denom[infoset]
        if den <= 0.0:
            raise UndefinedValueError(
                f"infoset {infoset} has zero counterfactual reach")
        off = self._ta.i_offset[infoset]
        n = self._ta.iset_size[infoset]
        if action is None:
            return float(self._q[off:off + n].max()) / den
        return self._q[off + action] / den

    def defined(self, infoset: int) -> bool:
        return self._denom[infoset] > 0.0

    def class_value(self, nodes: Sequence[int]) -> float:
        """CBV of an arbitrary node class (pi_{-player}-weighted)."""
        pim = self.pi_minus[list(nodes)]
        den = float(pim.sum())
        if den <= 0.0:
            raise UndefinedValueError("node class has zero counterfactual reach")
        sign = 1.0 if self.player == PLAYER1 else -1.0
        return sign * float((pim * self.v[list(nodes)]).sum()) / den

    def class_weight(self, nodes: Sequence[int]) -> float:
        return float(self.pi_minus[list(nodes)].sum())


def run_cbr(game: GameTree, opp_strategy: BehavioralStrategy, player: int) -> CbrPass:
    """Compute a counterfactual best response for ``player`` against
    ``opp_strategy`` in one bottom-up sweep."""
    ta = compile_tree(game)
    sign = 1.0 if player == PLAYER1 else -1.0
    pe = _edge_probs_from_iflat(ta, _iflat(ta, opp_strategy))

    # chance + opponent reach (player contributes factor 1)
    n = len(ta.player)
    pim = np.ones(n)
    for lo, hi, _, _ in ta.levels:
        par = ta.e_parent[lo:hi]
        f = np.where(ta.e_player[lo:hi] == player, 1.0, pe[lo:hi])
        pim[ta.e_child[lo:hi]] = pim[par] * f

    v = ta.payoff.copy()
    q = np.zeros(ta.n_islots)
    denom = np.zeros(len(game.infosets))
    choice: dict[int, int] = {}
    for lo, hi, parents, starts in reversed(ta.levels):
        child = ta.e_child[lo:hi]
        own = ta.e_player[lo:hi] == player
        prod = np.where(own, 0.0, pe[lo:hi]) * v[child]
        v[parents] = np.add.reduceat(prod, starts)
        if own.any():
            idx = np.nonzero(own)[0]
            np.add.at(q, ta.e_islot[lo + idx],
                      sign * pim[ta.e_parent[lo + idx]] * v[child[idx]])
            d = int(ta.depth[ta.e_parent[lo]])
            for iset in ta.isets_at_depth.get(d, []):
                if game.infosets[iset].player != player:
                    continue
                off = ta.i_offset[iset]
                a = int(np.argmax(q[off:off + ta.iset_size[iset]]))
                choice[iset] = a
                members = ta.iset_members[iset]
                v[members] = v[ta.iset_children[iset][:, a]]
                denom[iset] = pim[members].sum()

    if game.infoset_ids(player):
        strategy = BehavioralStrategy.from_pure(game, player, choice)
    else:
        strategy = BehavioralStrategy(player, {})
    return CbrPass(player, sign * float(v[game.root]), strategy, v, pim, q, denom, ta)


def best_response(game: GameTree, opp_strategy: BehavioralStrategy,
                  player: int) -> tuple[BehavioralStrategy, float]:
    """Best response strategy and its value for ``player``.

    The returned strategy is in fact a counterfactual best response, which
    is also a best response; the value is the max expected payoff.
    """
    cbr = run_cbr(game, opp_strategy, player)
    return cbr.strategy, cbr.value


def counterfactual_best_response(game: GameTree, opp_strategy: BehavioralStrategy,
                                 player: int) -> BehavioralStrategy:
    return run_cbr(game, opp_strategy, player).strategy


def cbv(game: GameTree, opp_strategy: BehavioralStrategy, infoset: int,
        action: int | None = None) -> float:
    """Counterfactual best response value of an infoset (or one action)."""
    player = game.infosets[infoset].player
    return run_cbr(game, opp_strategy, player).cbv(infoset, action)


# -- game value and exploitability ------------------------------------------------


def profile_gap(game: GameTree, profile: StrategyProfile) -> float:
    """Sum of both players' best-response gains: zero exactly at equilibrium."""
    br1 = run_cbr(game, profile.p2, PLAYER1).value
    br2 = run_cbr(game, profile.p1, PLAYER2).value
    return br1 + br2


def game_value(game: GameTree, *, iterations: int = 100_000,
               gap_tol: float = 1e-9, check_every: int = 256) -> float:
    """Value of the game to player 1.

    Uses the zoo's analytic annotation when present; otherwise solves with
    CFR+ until the duality gap falls below ``gap_tol`` (or the budget runs
    out) and caches the bracket midpoint with its tolerance in ``meta``.
    """
    if "value_p1" in game.meta:
        return float(game.meta["value_p1"])
    cached = game.meta.get("value_p1_cache")
    if cached is not None:
        return cached[0]
    solver = CfrSolver(game, SolverConfig())
    br1 = br2 = float("inf")
    done = 0
    while done < iterations:
        step = min(check_every, iterations - done)
        solver.run(step)
        done += step
        avg = solver.average_profile()
        br1 = run_cbr(game, avg.p2, PLAYER1).value
        br2 = run_cbr(game, avg.p1, PLAYER2).value
        if br1 + br2 <= gap_tol:
            break
    value = (br1 - br2) / 2.0
    game.meta["value_p1_cache"] = (value, (br1 + br2) / 2.0)
    return value


def exploitability(game: GameTree, strategy: BehavioralStrategy,
                   player: int | None = None, *,
                   value: float | None = None) -> float:
    """How much a best response gains over the game value against ``strategy``."""
    player = strategy.player if player is None else player
    br = run_cbr(game, strategy, opponent(player))
    v1 = game_value(game) if value is None else value
    return br.value - v1 if player == PLAYER2 else br.value + v1


# -- Hedge ------------------------------------------------------------------------


def hedge_eta(num_actions: int, variance: float, t: int) -> float:
    """Tuning parameter: sqrt(ln |A|) / (3 sqrt(VAR_t) sqrt(t))."""
    return math.sqrt(math.log(num_actions)) / (3.0 * math.sqrt(variance) * math.sqrt(t))


@dataclass
class HedgeState:
    """Per-infoset Hedge bookkeeping: cumulative action payoffs and the
    running variance of the infoset's per-iteration payoff."""

    num_actions: int
    cum: np.ndarray = None
    count: int = 0
    mean: float = 0.0
    m2: float = 0.0

    def __post_init__(self):
        if self.cum is None:
            self.cum = np.zeros(self.num_actions)

    @property
    def variance(self) -> float:
        return self.m2 / self.count if self.count else 0.0

    def observe(self, action_values: np.ndarray, used_probs: np.ndarray) -> None:
        self.cum += action_values
        x = float(np.dot(used_probs, action_values))
        self.count += 1
        delta = x - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (x - self.mean)

    def strategy(self, t: int) -> np.ndarray:
        if self.count == 0:
            return np.full(self.num_actions, 1.0 / self.num_actions)
        means = self.cum / self.count
        var = self.variance
        if var <= 0.0:
            best = means == means.max()
            return best / best.sum()
        w = np.exp(hedge_eta(self.num_actions, var, t) * (means - means.max()))
        return w / w.sum()


class EntryHook(Protocol):
    """Per-iteration entry-probability override for designated infosets.

    ``bind`` receives the solver before the first iteration; ``apply`` may
    rewrite the current strategies of its infosets based on this iteration's
    subtree values (player-1 units).  Used by distributional subgame solving.
    """

    def bind(self, solver: "CfrSolver") -> None: ...

    def apply(self, t: int, v: np.ndarray,
              set_probs: Callable[[int, np.ndarray], None]) -> None: ...


# -- CFR solver ---------------------------------------------------------------------


@dataclass
class SolverConfig:
    """Iterative-solver settings.

    ``groups`` shares regret/average tables across infosets (information
    abstraction).  ``hedge_infosets`` are driven by Hedge instead of regret
    matching; they (and hook-driven entry infosets) must sit below
    chance-only ancestors so their counterfactual weights are constant.
    """

    iterations: int = 1000
    variant: str = "cfr+"            # "cfr+" | "cfr"
    averaging: str = "linear"        # "linear" | "uniform"
    seed: int = 0
    groups: Mapping[int, Hashable] | None = None
    hedge_infosets: frozenset = frozenset()
    entry_hook: EntryHook | None = None
    trace_points: Sequence[int] | None = None

    def __post_init__(self):
        if self.iterations < 1:
            raise GameError("iterations must be >= 1")
        if self.variant not in ("cfr+", "cfr"):
            raise GameError(f"unknown variant {self.variant!r}")
        if self.averaging not in ("linear", "uniform"):
            raise GameError(f"unknown averaging {self.averaging!r}")


@dataclass
class SolveResult:
    """Average and final-iterate profiles plus final-iterate value estimates.

    ``final_values[player][infoset]`` is the infoset's counterfactual value
    under the final iterate of that player against the opponent's average
    strategy: the cheap stand-in for an in-abstraction best response that
    estimated subgame solving consumes.  ``trace`` rows are (iteration,
    profile exploitability gap).
    """

    average: StrategyProfile
    final: StrategyProfile
    iterations: int
    final_values: dict[int, dict[int, float]]
    final_action_values: dict[int, dict[int, np.ndarray]]
    trace: list[tuple[int, float]] = field(default_factory=list)


class CfrSolver:
    """Incremental CFR/CFR+ solver; ``run`` may be called in blocks."""

    def __init__(self, game: GameTree, config: SolverConfig = SolverConfig()):
        self.game = game
        self.config = config
        self.ta = compile_tree(game, config.groups)
        self.plus = config.variant == "cfr+"
        self.linear = config.averaging == "linear"
        self.regrets = np.zeros(self.ta.n_gslots)
        self.ssum = np.zeros(self.ta.n_gslots)
        self.t = 0
        self.trace: list[tuple[int, float]] = []

        self._clamp_mask = {
            pl: self.ta.gslot_player == pl for pl in (PLAYER1, PLAYER2)
        }
        self._hedge: dict[int, HedgeState] = {}
        self._hedge_weights: dict[int, np.ndarray] = {}
        for iset in sorted(config.hedge_infosets):
            ist = game.infosets[iset]
            self._hedge[iset] = HedgeState(len(ist.actions))
            self._hedge_weights[iset] = self._chance_weights(iset)
        self._hook = config.entry_hook
        if self._hook is not None:
            self._hook.bind(self)

    def _chance_weights(self, iset: int) -> np.ndarray:
        w = []
        for m in self.game.infosets[iset].nodes:
            prob = 1.0
            cur = self.game.nodes[m]
            while cur.parent >= 0:
                parent = self.game.nodes[cur.parent]
                if parent.player != CHANCE:
                    raise GameError(
                        "Hedge/hook infosets must sit below chance-only ancestors")
                prob *= parent.chance_probs[cur.parent_action]
                cur = parent
            w.append(prob)
        w = np.array(w)
        return w / w.sum()

    # -- per-iteration pieces ---------------------------------------------

    def _strategies(self) -> np.ndarray:
        ta = self.ta
        if ta.n_gslots == 0:
            return np.zeros(0)
        pos = self.regrets if self.plus else np.maximum(self.regrets, 0.0)
        sums = np.add.reduceat(pos, ta.g_offset)
        denom = sums[ta.slot_group]
        probs = np.where(denom > 0.0, pos / np.where(denom > 0.0, denom, 1.0),
                         ta.slot_uniform)
        for iset, state in self._hedge.items():
            g = ta.iset_group[iset]
            off = ta.g_offset[g]
            probs[off:off + ta.group_size[g]] = state.strategy(self.t + 1)
        return probs

    def set_group_probs(self, iset: int, probs: np.ndarray,
                        gprobs: np.ndarray, pe: np.ndarray) -> None:
        """Overwrite an infoset's current strategy (group slots and edges)."""
        ta = self.ta
        g = ta.iset_group[iset]
        off = ta.g_offset[g]
        gprobs[off:off + ta.group_size[g]] = probs
        for m in ta.iset_members[iset]:
            lo = ta.node_edge_start[int(m)]
            pe[lo:lo + ta.group_size[g]] = probs

    def _iterate(self) -> None:
        t = self.t + 1
        ta = self.ta
        for player in (PLAYER1, PLAYER2):
            gprobs = self._strategies()
            pe = ta.e_chance_prob.copy()
            if len(ta.e_decision):
                pe[ta.e_decision] = gprobs[ta.e_slot[ta.e_decision]]
            v = _up_pass(ta, pe)
            if self._hook is not None:
                self._hook.apply(
                    t, v, lambda i, p: self.set_group_probs(i, p, gprobs, pe))
            r1, r2, rc = _down_pass(ta, pe)

            idx = ta.p_edges[player]
            if len(idx):
                par = ta.e_parent[idx]
                ch = ta.e_child[idx]
                pim = rc[par] * (r2 if player == PLAYER1 else r1)[par]
                dv = v[ch] - v[par]
                if player == PLAYER2:
                    dv = -dv
                np.add.at(self.regrets, ta.e_slot[idx], pim * dv)
                if self.plus:
                    np.maximum(self.regrets, 0.0, out=self.regrets,
                               where=self._clamp_mask[player])
                w = float(t) if self.linear else 1.0
                own = (r1 if player == PLAYER1 else r2)[par]
                np.add.at(self.ssum, ta.e_slot[idx], w * own * pe[idx])

            if player == PLAYER1:
                self._observe_hedge(v, gprobs)
        self.t = t

    def _observe_hedge(self, v: np.ndarray, gprobs: np.ndarray) -> None:
        ta = self.ta
        for iset, state in self._hedge.items():
            sign = 1.0 if self.game.infosets[iset].player == PLAYER1 else -1.0
            weights = self._hedge_weights[iset]
            children = ta.iset_children[iset]
            qa = sign * (weights[:, None] * v[children]).sum(axis=0)
            g = ta.iset_group[iset]
            off = ta.g_offset[g]
            state.observe(qa, gprobs[off:off + ta.group_size[g]])

    # -- public API ----------------------------------------------------------

    def run(self, iterations: int) -> None:
        points = set(self.config.trace_points or ())
        for _ in range(iterations):
            self._iterate()
            if self.t in points:
                self.trace.append((self.t, profile_gap(self.game,
                                                       self.average_profile())))

    def _profile_from_flat(self, flat: np.ndarray) -> StrategyProfile:
        ta = self.ta
        strategies = {PLAYER1: {}, PLAYER2: {}}
        for ist in self.game.infosets:
            g = ta.iset_group[ist.id]
            off = ta.g_offset[g]
            probs = flat[off:off + ta.group_size[g]].copy()
            total = probs.sum()
            probs = probs / total if total > 0 else \
                np.full(len(probs), 1.0 / len(probs))
            strategies[ist.player][ist.id] = probs
        return StrategyProfile(
            BehavioralStrategy(PLAYER1, strategies[PLAYER1]),
            BehavioralStrategy(PLAYER2, strategies[PLAYER2]))

    def average_profile(self) -> StrategyProfile:
        return self._profile_from_flat(self.ssum)

    def final_profile(self) -> StrategyProfile:
        return self._profile_from_flat(self._strategies())

    def result(self) -> SolveResult:
        average = self.average_profile()
        final = self.final_profile()
        final_values: dict[int, dict[int, float]] = {}
        final_action_values: dict[int, dict[int, np.ndarray]] = {}
        for player in (PLAYER1, PLAYER2):
            mine = final.for_player(player)
            theirs = average.for_player(opponent(player))
            profile = StrategyProfile(mine, theirs) if player == PLAYER1 \
                else StrategyProfile(theirs, mine)
            vp = expected_values(self.game, profile)
            vals: dict[int, float] = {}
            avals: dict[int, np.ndarray] = {}
            for ist in self.game.infosets:
                if ist.player != player:
                    continue
                if vp._denom[ist.id] > 0:
                    vals[ist.id] = vp.infoset_value(ist.id)
                    avals[ist.id] = np.array([
                        vp.infoset_value(ist.id, a)
                        for a in range(len(ist.actions))])
                else:
                    vals[ist.id] = float("nan")
                    avals[ist.id] = np.full(len(ist.actions), float("nan"))
            final_values[player] = vals
            final_action_values[player] = avals
        return SolveResult(average, final, self.t, final_values,
                           final_action_values, list(self.trace))


def cfr_solve(game: GameTree, config: SolverConfig = SolverConfig()) -> SolveResult:
    """Solve a game by iterative regret minimization; see :class:`SolverConfig`."""
    solver = CfrSolver(game, config)
    solver.run(config.iterations)
    return solver.result()


def geometric_checkpoints(iterations: int, base: float = 2.0) -> list[int]:
    """Checkpoint schedule 1, 2, 4, ... capped at ``iterations``."""
    out = []
    x = 1
    while x < iterations:
        out.append(x)
        x = max(x + 1, int(x * base))
    out.append(iterations)
    return out


# -- abstraction-level value estimates ---------------------------------------------


def abstract_cbv_estimates(game: GameTree, result: SolveResult,
                           groups: Mapping[int, Hashable] | None = None,
                           player: int = PLAYER1) -> dict[int, float]:
    """Per-infoset value estimates of the blueprint's final iterate.

    Values are computed under (final iterate of ``player``, opponent's
    average); with ``groups``, bucket-level values are aggregated with
    counterfactual weights and lifted back to every member infoset.
    """
    mine = result.final.for_player(player)
    theirs = result.average.for_player(opponent(player))
    profile = StrategyProfile(mine, theirs) if player == PLAYER1 \
        else StrategyProfile(theirs, mine)
    vp = expected_values(game, profile)
    sign = 1.0 if player == PLAYER1 else -1.0
    if groups is None:
        out = {}
        for ist in game.infosets:
            if ist.player != player:
                continue
            out[ist.id] = vp.infoset_value(ist.id) if vp._denom[ist.id] > 0 \
                else float("nan")
        return out
    nums: dict[Hashable, float] = {}
    dens: dict[Hashable, float] = {}
    pim = vp.reach_excluding(player)
    for ist in game.infosets:
        if ist.player != player:
            continue
        key = groups.get(ist.id, ("self", ist.id))
        members = list(ist.nodes)
        nums[key] = nums.get(key, 0.0) + float((pim[members] * vp.v[members]).sum())
        dens[key] = dens.get(key, 0.0) + float(pim[members].sum())
    out = {}
    for ist in game.infosets:
        if ist.player != player:
            continue
        key = groups.get(ist.id, ("self", ist.id))
        out[ist.id] = sign * nums[key] / dens[key] if dens[key] > 0 else float("nan")
    return out
