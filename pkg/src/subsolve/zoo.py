"""Test games and desk-scale poker analogues.

Every generator returns a validated :class:`~subsolve.efg.GameTree` with a
``meta`` dict carrying the game name, the analytic game value where one is
known, the natural re-solve roots (``subgame_publics``), and for poker games
the chip unit used for mbb conversion.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Hashable, Mapping, Sequence

import numpy as np

from .efg import (
    CHANCE,
    PLAYER1,
    PLAYER2,
    GameError,
    GameTree,
    Infoset,
    TreeBuilder,
    validate,
)


# -- Coin Toss ---------------------------------------------------------------


@dataclass(frozen=True)
class CoinTossParams:
    """Payoffs for the coin-guessing game; defaults match the running example.

    ``forfeit`` is +1 to player 1: the value forced by requiring the standard
    blueprint's Play EVs to come out at 0 (Heads) and 1/2 (Tails).
    """

    sell_heads: float = 0.5
    sell_tails: float = -0.5
    correct_guess: float = -1.0
    incorrect_guess: float = 1.0
    forfeit: float = 1.0


def coin_toss(params: CoinTossParams = CoinTossParams()) -> GameTree:
    """Chance flips a coin only player 1 sees; P1 sells or plays, P2 guesses."""
    p = params
    b = TreeBuilder()
    root = b.chance(public="")
    for face, sell_ev in (("H", p.sell_heads), ("T", p.sell_tails)):
        pn = b.player(root, face, player=PLAYER1, key=f"1:{face}", prob=0.5, public="")
        b.terminal(pn, "Sell", payoff=sell_ev, public="Sell")
        guess = b.player(pn, "Play", player=PLAYER2, key="2:play", public="Play")
        for action in ("Heads", "Tails", "Forfeit"):
            if action == "Forfeit":
                payoff = p.forfeit
            elif (action == "Heads") == (face == "H"):
                payoff = p.correct_guess
            else:
                payoff = p.incorrect_guess
            b.terminal(guess, action, payoff=payoff, public=f"Play/{action}")
    meta: dict = {"name": "coin_toss", "subgame_publics": ["Play"]}
    if (p.correct_guess, p.incorrect_guess) == (-1.0, 1.0) \
            and p.sell_heads + p.sell_tails == 0 and abs(p.sell_heads) <= 1:
        meta["value_p1"] = 0.0
    game = b.build(meta)
    assert validate(game).passed
    return game


def double_coin_toss() -> GameTree:
    """Coin Toss variant where Play leads through a public 50/50 chance node
    into one of two identical guessing subgames."""
    b = TreeBuilder()
    root = b.chance(public="")
    for face, sell_ev in (("H", 0.5), ("T", -0.5)):
        pn = b.player(root, face, player=PLAYER1, key=f"1:{face}", prob=0.5, public="")
        b.terminal(pn, "Sell", payoff=sell_ev, public="Sell")
        mid = b.chance(pn, "Play", public="Play")
        for sub in ("C1", "C2"):
            pub = f"Play/{sub}"
            guess = b.player(mid, sub, player=PLAYER2, key=f"2:{sub}",
                             prob=0.5, public=pub)
            for action in ("Heads", "Tails"):
                correct = (action == "Heads") == (face == "H")
                b.terminal(guess, action, payoff=-1.0 if correct else 1.0,
                           public=f"{pub}/{action}")
    game = b.build({
        "name": "double_coin_toss",
        "value_p1": 0.0,
        "subgame_publics": ["Play/C1", "Play/C2"],
    })
    assert validate(game).passed
    return game


# -- Kuhn poker ----------------------------------------------------------------


def kuhn_poker() -> GameTree:
    """Standard three-card Kuhn poker; game value to the first player is -1/18."""
    cards = ("J", "Q", "K")
    rank = {c: i for i, c in enumerate(cards)}
    b = TreeBuilder()
    root = b.chance(public="")
    deals = [(c1, c2) for c1 in cards for c2 in cards if c1 != c2]

    def showdown(c1, c2, pot):
        return pot if rank[c1] > rank[c2] else -pot

    for c1, c2 in deals:
        n1 = b.player(root, f"{c1}{c2}", player=PLAYER1, key=f"1:{c1}:",
                      prob=1.0 / 6.0, public="")
        # P1 checks
        n2 = b.player(n1, "k", player=PLAYER2, key=f"2:{c2}:k", public="k")
        b.terminal(n2, "k", payoff=showdown(c1, c2, 1), public="kk")
        n3 = b.player(n2, "b", player=PLAYER1, key=f"1:{c1}:kb", public="kb")
        b.terminal(n3, "f", payoff=-1.0, public="kbf")
        b.terminal(n3, "c", payoff=showdown(c1, c2, 2), public="kbc")
        # P1 bets
        n4 = b.player(n1, "b", player=PLAYER2, key=f"2:{c2}:b", public="b")
        b.terminal(n4, "f", payoff=1.0, public="bf")
        b.terminal(n4, "c", payoff=showdown(c1, c2, 2), public="bc")

    game = b.build({
        "name": "kuhn_poker",
        "value_p1": -1.0 / 18.0,
        "big_blind": 1.0,
        "subgame_publics": ["k", "b"],
    })
    assert validate(game).passed
    return game


# -- parameterized mini no-limit poker -----------------------------------------


@dataclass(frozen=True)
class MiniPokerParams:
    """Scaled-down no-limit rules: antes, pot-fraction bets, capped raises.

    ``community`` gives the number of shared cards revealed at the start of
    each round (index 0 is the first round).  Showdown ties split the pot.
    """

    ranks: int = 3
    suits: int = 2
    rounds: int = 2
    bet_fractions: tuple[tuple[float, ...], ...] = ((0.5, 1.0), (0.5, 1.0))
    max_raises: tuple[int, ...] = (1, 1)
    ante: float = 1.0
    stack: float = 20.0
    community: tuple[int, ...] = (0, 1)
    node_budget: int = 10 ** 6

    def check(self) -> None:
        if self.rounds < 1:
            raise GameError("rounds must be >= 1")
        if len(self.bet_fractions) != self.rounds or len(self.max_raises) != self.rounds \
                or len(self.community) != self.rounds:
            raise GameError("per-round parameter lengths must equal rounds")
        if any(f <= 0 for fr in self.bet_fractions for f in fr):
            raise GameError("bet fractions must be positive")
        if any(c not in (0, 1) for c in self.community):
            raise GameError("at most one community card per round is supported")
        if self.ranks * self.suits < 2 + sum(self.community):
            raise GameError("deck too small for the deal and community schedule")


def _bet_label(frac: float) -> str:
    return f"b{frac:g}"


def mini_nl_poker(params: MiniPokerParams = MiniPokerParams()) -> GameTree:
    """Two-player no-limit poker analogue with one private card each.

    The tree enumerates every deal, betting sequence, and community reveal.
    Raise actions are labelled by pot fraction (``b0.5``), so games built
    from nested bet-size menus embed into each other action-for-action.
    """
    params.check()
    p = params
    b = TreeBuilder()
    budget = p.node_budget
    ehs_by_key: dict[str, float] = {}

    deck = {r: p.suits for r in range(p.ranks)}
    total = p.ranks * p.suits

    def counts_minus(base: Mapping[int, int], *cards: int) -> dict[int, int]:
        out = dict(base)
        for c in cards:
            out[c] -= 1
            if out[c] < 0:
                raise GameError("deck exhausted")
        return out

    def strength(private: int, comm: tuple[int, ...]) -> tuple[int, int]:
        return (1 if private in comm else 0, private)

    @lru_cache(maxsize=None)
    def hand_strength(private: int, comm: tuple[int, ...], others: tuple[int, ...],
                      future: int) -> float:
        """Win probability (ties count half) vs a uniform opponent card and
        uniform future community, given the visible cards."""
        counts = {r: c for r, c in zip(range(p.ranks), others)}
        if future == 0:
            score = 0.0
            mass = 0
            for opp, cnt in counts.items():
                if cnt <= 0:
                    continue
                mine, theirs = strength(private, comm), strength(opp, comm)
                score += cnt * (1.0 if mine > theirs else 0.5 if mine == theirs else 0.0)
                mass += cnt
            return score / mass
        score = 0.0
        mass = 0
        for card, cnt in counts.items():
            if cnt <= 0:
                continue
            nxt = tuple(c - (r == card) for r, c in counts.items())
            score += cnt * hand_strength(private, comm + (card,), nxt, future - 1)
            mass += cnt
        return score / mass

    def check_budget() -> None:
        if len(b._rows) > budget:
            raise GameError(f"node budget {budget} exceeded")

    def record_infoset(player: int, private: int, public: str,
                       comm: tuple[int, ...], counts: Mapping[int, int]) -> str:
        key = f"{player}:{private}:{public}"
        if key not in ehs_by_key:
            others = tuple(counts.get(r, 0) for r in range(p.ranks))
            future = sum(p.community) - len(comm)
            ehs_by_key[key] = hand_strength(private, comm, others, future)
        return key

    def deal_round(parent: int, action: str, prob: float, rnd: int, cards: tuple[int, int],
                   comm: tuple[int, ...], counts: Mapping[int, int],
                   contrib: tuple[float, float], public: str) -> None:
        """Reveal this round's community cards, then open betting."""
        reveal = p.community[rnd]
        if reveal == 0:
            betting(parent, action, prob, rnd, cards, comm, counts, contrib,
                    (0.0, 0.0), 1, 0, 0, public)
            return
        node = b.chance(parent, action, prob=prob, public=public)
        check_budget()
        mass = sum(counts.values())
        for card in sorted(counts):
            if counts[card] <= 0:
                continue
            pub = f"{public}/d{card}" if public else f"d{card}"
            nxt_counts = counts_minus(counts, card)
            nxt_comm = comm + (card,)
            betting(node, f"d{card}", counts[card] / mass, rnd, cards, nxt_comm,
                    nxt_counts, contrib, (0.0, 0.0), 1, 0, 0, pub)

    def end_of_round(parent: int, action: str, prob: float, rnd: int, cards, comm,
                     counts, contrib, public: str) -> None:
        if rnd + 1 < p.rounds:
            deal_round(parent, action, prob, rnd + 1, cards, comm, counts, contrib, public)
        else:
            s1, s2 = strength(cards[0], comm), strength(cards[1], comm)
            won = contrib[1] if s1 > s2 else -contrib[0] if s1 < s2 else 0.0
            b.terminal(parent, action, payoff=won, prob=prob, public=public)
            check_budget()

    def betting(parent: int, action: str, prob: float | None, rnd: int, cards,
                comm, counts, contrib, round_bets: tuple[float, float],
                to_act: int, n_actions: int, raises: int, public: str) -> None:
        me = to_act - 1
        opp = 1 - me
        owe = round_bets[opp] - round_bets[me]
        key = record_infoset(to_act, cards[me], public, comm, counts)
        node = b.player(parent, action, player=to_act, key=key, prob=prob,
                        public=public)
        check_budget()

        def with_added(amount: float):
            rb = list(round_bets)
            rb[me] += amount
            ct = list(contrib)
            ct[me] += amount
            return tuple(rb), tuple(ct)

        if owe <= 0:
            nxt_pub = f"{public}/k" if public else "k"
            if n_actions >= 1:
                end_of_round(node, "k", None, rnd, cards, comm, counts, contrib, nxt_pub)
            else:
                betting(node, "k", None, rnd, cards, comm, counts, contrib,
                        round_bets, opp + 1, n_actions + 1, raises, nxt_pub)
        else:
            fold_pay = -contrib[0] if me == 0 else contrib[1]
            b.terminal(node, "f", payoff=fold_pay, public=f"{public}/f")
            check_budget()
            _, ct = with_added(owe)
            end_of_round(node, "c", None, rnd, cards, comm, counts, ct, f"{public}/c")
        if raises < p.max_raises[rnd]:
            pot = contrib[0] + contrib[1]
            for frac in p.bet_fractions[rnd]:
                amount = owe + frac * (pot + owe)
                amount = min(amount, p.stack - contrib[me])
                if amount <= owe:
                    continue
                label = _bet_label(frac)
                rb, ct = with_added(amount)
                betting(node, label, None, rnd, cards, comm, counts, ct, rb,
                        opp + 1, n_actions + 1, raises + 1, f"{public}/{label}")

    root = b.chance(public="")
    pairs = [(c1, c2) for c1 in range(p.ranks) for c2 in range(p.ranks)
             if not (c1 == c2 and p.suits < 2)]
    weights = {(c1, c2): p.suits * (p.suits - 1) if c1 == c2 else p.suits ** 2
               for c1, c2 in pairs}
    mass = total * (total - 1)
    for c1, c2 in pairs:
        counts = counts_minus(deck, c1, c2)
        deal_round(root, f"{c1}|{c2}", weights[(c1, c2)] / mass, 0, (c1, c2),
                   (), counts, (p.ante, p.ante), "")

    game = b.build({
        "name": "mini_nl_poker",
        "big_blind": p.ante,
        "params": p,
    })
    game.meta["hand_strength"] = {
        i.id: ehs_by_key[i.label] for i in game.infosets
    }
    game.meta["subgame_publics"] = sorted({
        game.nodes[n.children[0]].public
        for n in game.nodes
        if n.player == CHANCE and n.id != game.root
    })
    assert validate(game).passed
    return game


# -- abstractions ----------------------------------------------------------------


@dataclass(frozen=True)
class Abstraction:
    """Action subset and/or information bucketing of a full game.

    ``allowed_labels``: raise labels the abstraction keeps (``None`` keeps
    all); non-bet actions are always kept.  ``buckets`` maps full-game
    infoset ids to bucket keys; it must be a total function on the bucketed
    players' infosets and never merges across public states.
    """

    allowed_labels: frozenset[str] | None = None
    buckets: Mapping[int, Hashable] | None = None

    def allows(self, label: str) -> bool:
        if self.allowed_labels is None or not label.startswith("b"):
            return True
        return label in self.allowed_labels


def bucket_information(game: GameTree, num_buckets: int,
                       statistic: Mapping[int, float] | None = None) -> Abstraction:
    """Group infosets into expected-hand-strength quantile buckets.

    Within each (player, public state) group, infosets are ordered by the
    statistic (default: the generator's ``hand_strength`` annotation) and
    split into ``num_buckets`` contiguous chunks.  ``num_buckets = 1`` merges
    all private holdings per public state; a bucket count equal to the group
    size is the identity.
    """
    if num_buckets < 1:
        raise GameError("num_buckets must be >= 1")
    stats = statistic if statistic is not None else game.meta.get("hand_strength")
    if stats is None:
        raise GameError("game carries no hand_strength annotation; pass statistic=")
    groups: dict[tuple[int, str], list[Infoset]] = {}
    for ist in game.infosets:
        pub = game.nodes[ist.nodes[0]].public
        groups.setdefault((ist.player, pub), []).append(ist)
    if num_buckets > max(len(g) for g in groups.values()):
        raise GameError(f"num_buckets {num_buckets} exceeds distinct infosets")
    buckets: dict[int, Hashable] = {}
    for (player, pub), members in groups.items():
        members.sort(key=lambda i: (stats[i.id], i.label))
        m = len(members)
        nb = min(num_buckets, m)
        for idx, ist in enumerate(members):
            buckets[ist.id] = (player, pub, idx * nb // m)
    return Abstraction(buckets=buckets)


@dataclass(frozen=True)
class RestrictedGame:
    """An action-subset view of a full game, with node/infoset alignment maps."""

    game: GameTree
    to_full_node: Mapping[int, int]
    to_full_infoset: Mapping[int, int]
    from_full_infoset: Mapping[int, int]


def restrict_actions(full: GameTree, abstraction: Abstraction) -> RestrictedGame:
    """Drop disallowed actions from a game, keeping labels and infoset keys.

    The result is a strict action-subset abstraction: every kept node and
    sequence exists in the full game, and infosets correspond by label.
    """
    b = TreeBuilder()
    new_of_old: dict[int, int] = {}

    def walk(old: int, parent: int | None, action: str, prob: float | None):
        n = full.nodes[old]
        if n.is_terminal:
            nid = b.terminal(parent, action, payoff=n.payoff, prob=prob,
                             public=n.public)
        elif n.player == CHANCE:
            nid = b.chance(parent, action, prob=prob, public=n.public)
        else:
            label = full.infosets[n.infoset].label
            nid = b.player(parent, action, player=n.player, key=label,
                           prob=prob, public=n.public)
        new_of_old[old] = nid
        if n.is_terminal:
            return
        kept = [(a, c, k) for k, (a, c) in enumerate(zip(n.actions, n.children))
                if abstraction.allows(a)]
        if not kept:
            raise GameError(f"abstraction removes all actions at node {old}")
        for a, c, k in kept:
            pr = n.chance_probs[k] if n.player == CHANCE else None
            walk(c, nid, a, pr)

    walk(full.root, None, "", None)
    meta = dict(full.meta)
    meta["restricted_from"] = full.meta.get("name")
    game = b.build(meta)
    to_full_node = {v: k for k, v in new_of_old.items()}
    full_by_label = {i.label: i.id for i in full.infosets}
    to_full_iset = {i.id: full_by_label[i.label] for i in game.infosets}
    from_full = {v: k for k, v in to_full_iset.items()}
    return RestrictedGame(game, to_full_node, to_full_iset, from_full)


# -- random games for property suites ---------------------------------------------


@dataclass(frozen=True)
class RandomGameParams:
    p1_types: int = 3
    p2_types: int = 2
    public_outcomes: int = 2
    plies: int = 2
    actions: int = 2
    terminal_prob: float = 0.3
    payoff_scale: float = 2.0
    max_nodes: int = 1000


def random_game(rng: np.random.Generator,
                params: RandomGameParams = RandomGameParams()) -> GameTree:
    """Random zero-sum game: a hidden joint type deal, a public chance
    outcome, then alternating public-action plies with random payoffs.

    All player actions are public; only the chance deal is hidden (player i
    observes its own type).  Each public outcome's branch is a subgame, so
    generated games plug straight into the solving property suites.
    """
    p = params
    type_pairs = [(a, b_) for a in range(p.p1_types) for b_ in range(p.p2_types)]
    deal_probs = rng.dirichlet(np.ones(len(type_pairs)) * 3.0)
    pub_probs = rng.dirichlet(np.ones(p.public_outcomes) * 3.0)
    owners = [PLAYER1 if k % 2 == 0 else PLAYER2 for k in range(p.plies)]

    # Per public branch, one structural plan shared by every type pair so
    # that infoset members agree on shapes: plan[history] = tuple of "t"/"n"
    # flags per action.
    plans: dict[int, dict[tuple, tuple[str, ...]]] = {}
    for o in range(p.public_outcomes):
        plan: dict[tuple, tuple[str, ...]] = {}
        frontier = [()]
        while frontier:
            hist = frontier.pop(0)
            depth = len(hist)
            if depth >= p.plies:
                continue
            flags = []
            for a in range(p.actions):
                last = depth == p.plies - 1
                term = last or rng.random() < p.terminal_prob
                flags.append("t" if term else "n")
                if not term:
                    frontier.append(hist + (a,))
            plan[hist] = tuple(flags)
        plans[o] = plan

    b = TreeBuilder()
    root = b.chance(public="")

    def grow(parent: int, action: str, prob: float | None, types: tuple[int, int],
             o: int, hist: tuple, public: str) -> None:
        player = owners[len(hist)]
        me = types[player - 1]
        key = f"{player}:{me}:{public}"
        node = b.player(parent, action, player=player, key=key, prob=prob,
                        public=public)
        for a in range(p.actions):
            nxt_pub = f"{public}/a{a}"
            if plans[o][hist][a] == "t":
                b.terminal(node, f"a{a}",
                           payoff=float(rng.uniform(-p.payoff_scale, p.payoff_scale)),
                           public=nxt_pub)
            else:
                grow(node, f"a{a}", None, types, o, hist + (a,), nxt_pub)

    for k, (t1, t2) in enumerate(type_pairs):
        deal = b.chance(root, f"{t1}|{t2}", prob=float(deal_probs[k]), public="")
        for o in range(p.public_outcomes):
            pub = f"P{o}"
            grow(deal, pub, float(pub_probs[o]), (t1, t2), o, (), pub)

    if len(b._rows) > p.max_nodes:
        raise GameError(f"random game exceeded {p.max_nodes} nodes")
    game = b.build({
        "name": "random_game",
        "subgame_publics": [f"P{o}" for o in range(p.public_outcomes)],
    })
    assert validate(game).passed
    return game
