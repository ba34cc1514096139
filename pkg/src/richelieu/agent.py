"""Players: the Richelieu pipeline plus the random and greedy baselines.

A Richelieu turn runs social reasoning, sub-goal proposal, reflection over
retrieved experiences, a few negotiation rounds and finally order selection.
Every backend call has a fallback, so a dead backend degrades the agent to
holding and silence instead of stopping the game.
"""

from __future__ import annotations

import logging
import random
import zlib
from dataclasses import dataclass, field, replace
from typing import Any, Mapping, Sequence

from .domain import (DEFAULT_SUBGOAL, LONG_TERM_GOAL, Commitment, LongTermGoal, NegotiationMessage,
                     SubGoal)
from .heuristics import greedy_adjustments, greedy_orders, greedy_retreats, random_orders
from .llm import (Backend, BackendError, ChatSession, ExtractionError, extract_structured, load_template,
                  render_template)
from .memory import (CredibilityTable, MemoryRecord, MemoryStore, Retrieval, describe_digest,
                     evaluate_subgoal, log_turn, retrieve_negotiation, retrieve_planning,
                     update_credibility, update_truthfulness)
from .orders import Order, OrderError, OrderKind, format_order, is_admissible, parse_order, unit_legal_orders
from .state import GameState

__all__ = [
    "Toggles",
    "SocialBelief",
    "TruthinessScore",
    "RichelieuAgent",
    "RandomAgent",
    "HeuristicAgent",
    "reason_social",
    "propose_subgoal",
    "reflect",
    "assess_truthiness",
    "combine_truthiness",
    "negotiate_round",
    "decide_actions",
    "describe_board",
    "RULES_TEXT",
    "STRATEGY_TEXT",
]

log = logging.getLogger(__name__)

LABELS = ("ally", "enemy", "neutral")

RULES_TEXT = """\
- The board has 34 supply centers. Holding 18 of them wins outright; holding none eliminates you.
- Armies move between adjacent land regions. Fleets move between adjacent sea zones and coastal regions, along coasts.
- A move into a region that is occupied, or that another unit also enters, bounces unless it has more support.
- A unit may support a neighbour's hold or move into a region it could itself reach. Attacking the supporter cancels the support.
- Fleets in sea zones can carry an army across the sea. An enemy fleet moving into one of those zones breaks the chain.
- A beaten unit retreats to a free neighbouring region or is removed.
- Center ownership changes only after the autumn turn. Each winter you build or remove units until units equal centers; builds go on vacant home centers you still own, fleets only on coastal ones."""

STRATEGY_TEXT = """\
- Make friends far away and press the neighbours you can actually take centers from.
- Keep any single power or bloc from growing strong enough to threaten everyone.
- Set rivals against each other and invite third parties into alliances, ceasefires and joint attacks when it helps.
- Promises are not binding. Check what others say against what they do, and be ready to mislead an enemy when it pays."""


@dataclass(frozen=True)
class Toggles:
    """Pipeline stages; all off leaves only the actor."""

    modeling_others: bool = True
    subgoals: bool = True
    negotiation_pipeline: bool = True
    reflection: bool = True
    use_selfplay_memory: bool = True

    NAMES = ("modeling_others", "subgoals", "negotiation_pipeline", "reflection", "use_selfplay_memory")

    @classmethod
    def all_off(cls) -> "Toggles":
        return cls(False, False, False, False, False)

    @classmethod
    def first(cls, n: int) -> "Toggles":
        """The cumulative ablation row with the first ``n`` stages switched on."""
        return cls(*(i < n for i in range(len(cls.NAMES))))

    def to_dict(self) -> dict:
        return {n: getattr(self, n) for n in self.NAMES}


@dataclass
class SocialBelief:
    relationships: dict[str, str]
    rationales: dict[str, str] = field(default_factory=dict)
    inferred_intentions: dict[str, str] = field(default_factory=dict)
    primary_threat: str | None = None
    candidate_ally: str | None = None
    degraded: bool = False

    @classmethod
    def neutral(cls, opponents: Sequence[str], degraded: bool = False) -> "SocialBelief":
        return cls({p: "neutral" for p in opponents}, degraded=degraded)

    def normalized(self, opponents: Sequence[str]) -> "SocialBelief":
        """Exactly one label per opponent; unknown names dropped."""
        rel = {p: self.relationships.get(p, "neutral") for p in opponents}
        keep = set(opponents)
        return SocialBelief(
            relationships=rel,
            rationales={p: r for p, r in self.rationales.items() if p in keep},
            inferred_intentions={p: t for p, t in self.inferred_intentions.items() if p in keep},
            primary_threat=self.primary_threat if self.primary_threat in keep else None,
            candidate_ally=self.candidate_ally if self.candidate_ally in keep else None,
            degraded=self.degraded,
        )

    def of(self, label: str) -> list[str]:
        return sorted(p for p, l in self.relationships.items() if l == label)

    def summary(self) -> str:
        return ", ".join(f"{p}: {l}" for p, l in sorted(self.relationships.items())) or "none"


@dataclass(frozen=True)
class TruthinessScore:
    value: float
    rationale: str = ""
    consistency: float | None = None
    experience: float | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.value <= 1.0:
            raise ValueError(f"truthiness {self.value} outside [0, 1]")


# --------------------------------------------------------------- descriptions

def describe_board(state: GameState) -> str:
    """Per-power ownership and unit lines."""
    graph = state.graph
    lines = []
    for p in state.powers:
        if state.is_eliminated(p):
            lines.append(f"{p.title()} has been eliminated.")
            continue
        owned = ", ".join(graph.provinces[c].name for c in state.centers_of(p)) or "nothing"
        armies = [graph.provinces[u.province].name for u in state.units_of(p) if u.kind.value == "A"]
        fleets = [u.location for u in state.units_of(p) if u.kind.value == "F"]
        lines.append(f"{p.title()} occupies {owned}.")
        lines.append(f"{p.title()} has armies in {', '.join(armies) or 'no region'}. "
                     f"And {p.title()} has fleets in {', '.join(fleets) or 'no region'}.")
    return "\n".join(lines)


def _adjacency_text(state: GameState) -> str:
    graph = state.graph
    return "\n".join(f"{c}: {' '.join(sorted(graph.neighbours(c)))}" for c in sorted(graph.provinces))


def system_preamble(state: GameState, power: str) -> str:
    return render_template(load_template("init"), {
        "country": power.title(),
        "adjacency": _adjacency_text(state),
        "supply_centers": ", ".join(state.graph.supply_centers),
        "rules": RULES_TEXT,
        "strategy": STRATEGY_TEXT,
    })


def _ask(session: ChatSession, prompt: str, schema: str, context: Mapping[str, Any]) -> Any:
    return extract_structured(session.complete(prompt, context), schema, session, context)


def _opponents(state: GameState, power: str) -> list[str]:
    return [p for p in state.active_powers() if p != power]


# ------------------------------------------------------------------ operations

def reason_social(state: GameState, power: str, session: ChatSession, previous: SocialBelief | None = None,
                  context: Mapping[str, Any] | None = None) -> SocialBelief:
    """Relationship labels and the most pressing threat, from the backend."""
    opponents = _opponents(state, power)
    prompt = render_template(load_template("social_reasoning"), {
        "board": describe_board(state),
        "country": power.title(),
        "opponents": ", ".join(opponents),
    })
    ctx = {**(context or {}), "task": "social_reasoning", "state": state, "power": power}
    try:
        data = _ask(session, prompt, "belief", ctx)
    except (BackendError, ExtractionError) as exc:
        log.warning("%s social reasoning degraded: %s", power, exc)
        base = previous.normalized(opponents) if previous else SocialBelief.neutral(opponents)
        return replace(base, degraded=True)
    rel = {str(p).upper(): v["label"] for p, v in data["relationships"].items()}
    why = {str(p).upper(): v.get("rationale", "") for p, v in data["relationships"].items()}
    belief = SocialBelief(
        relationships=rel,
        rationales=why,
        inferred_intentions={str(p).upper(): t for p, t in data.get("intentions", {}).items()},
        primary_threat=(data.get("primary_threat") or None) and str(data["primary_threat"]).upper(),
        candidate_ally=(data.get("candidate_ally") or None) and str(data["candidate_ally"]).upper(),
    )
    return belief.normalized(opponents)


def _clean_subgoal(data: Mapping[str, Any], state: GameState) -> SubGoal:
    goal = SubGoal.from_dict(data)
    return replace(
        goal,
        focus_powers=frozenset(p for p in goal.focus_powers if p in state.powers),
        focus_provinces=frozenset(p for p in goal.focus_provinces if p in state.graph.provinces),
    )


def _ally_enemy_text(belief: SocialBelief) -> str:
    allies, enemies = belief.of("ally"), belief.of("enemy")
    return f"allies {', '.join(allies) or 'none'} and enemies {', '.join(enemies) or 'none'}"


def propose_subgoal(state: GameState, power: str, belief: SocialBelief, long_term: LongTermGoal,
                    session: ChatSession, previous: SubGoal | None = None,
                    context: Mapping[str, Any] | None = None) -> tuple[SubGoal, dict[str, str]]:
    """Own sub-goal plus the sub-goals inferred for everyone else (also written into ``belief``)."""
    prompt = render_template(load_template("planner"), {
        "ally and enemy": _ally_enemy_text(belief),
        "country": power.title(),
        "board": describe_board(state),
        "long_term": long_term.text,
    })
    ctx = {**(context or {}), "task": "planner", "state": state, "power": power, "belief": belief}
    try:
        data = _ask(session, prompt, "subgoal", ctx)
    except (BackendError, ExtractionError) as exc:
        log.warning("%s planning degraded: %s", power, exc)
        return (previous or DEFAULT_SUBGOAL), dict(belief.inferred_intentions)
    intentions = {str(p).upper(): t for p, t in data.get("intentions", {}).items()
                  if str(p).upper() in belief.relationships}
    belief.inferred_intentions.update(intentions)
    return _clean_subgoal(data, state), intentions


def _experience_bindings(r: Retrieval) -> dict[str, str]:
    rec = r.record
    score = "unknown" if rec.lam is None else f"{rec.lam:.1f}"
    future = rec.state.get("outcome") or f"{rec.owner.title()} went on from {describe_digest(rec.state)}"
    return {"state": describe_digest(rec.state), "sub-goal": rec.subgoal.text, "future": future, "score": score}


def reflect(state: GameState, power: str, subgoal: SubGoal, experiences: Sequence[Retrieval],
            session: ChatSession, belief: SocialBelief | None = None,
            context: Mapping[str, Any] | None = None) -> SubGoal:
    """Confirm or revise ``subgoal`` in the light of past evaluations; identity without experiences."""
    if not experiences:
        return subgoal
    first, *rest = experiences
    more = "\n".join(render_template(load_template("experience"), _experience_bindings(r)) for r in rest)
    prompt = render_template(load_template("planner_reflection"), {
        "ally and enemy": _ally_enemy_text(belief or SocialBelief({})),
        "country": power.title(),
        **_experience_bindings(first),
        "more_experiences": more,
        "proposal": subgoal.text,
    })
    ctx = {**(context or {}), "task": "planner_reflection", "state": state, "power": power,
           "subgoal": subgoal, "experiences": list(experiences), "belief": belief}
    try:
        return _clean_subgoal(_ask(session, prompt, "subgoal", ctx), state)
    except (BackendError, ExtractionError) as exc:
        log.warning("%s reflection degraded: %s", power, exc)
        return subgoal


def combine_truthiness(consistency: float, gamma: float, experience: float) -> float:
    """``clamp(0.5 * consistency + 0.3 * gamma + 0.2 * experience, 0, 1)``."""
    return min(1.0, max(0.0, 0.5 * consistency + 0.3 * gamma + 0.2 * experience))


def assess_truthiness(state: GameState, inferred_goal: str | None, message: NegotiationMessage,
                      belief: SocialBelief | None, gamma: float, experiences: Sequence[Retrieval],
                      session: ChatSession | None, context: Mapping[str, Any] | None = None) -> TruthinessScore:
    """Chance that ``message`` is honest; credibility alone when the backend fails."""
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"credibility {gamma} outside [0, 1]")
    if session is None:
        return TruthinessScore(gamma, "credibility only")
    exp_text = "; ".join(
        f"'{next((m.text for m in r.record.messages if m.sender == message.sender), '')}' -> "
        f"{'kept' if r.truthfulness == 1 else 'broken' if r.truthfulness == 0 else 'unknown'}"
        for r in experiences) or "none"
    prompt = render_template(load_template("truthiness"), {
        "sender": message.sender.title(),
        "message": message.text,
        "commitments": ", ".join(str(c.to_dict()) for c in message.commitments) or "none",
        "intention": inferred_goal or "unknown",
        "experiences": exp_text,
    })
    ctx = {**(context or {}), "task": "truthiness", "state": state, "message": message, "belief": belief,
           "inferred_goal": inferred_goal, "experiences": list(experiences), "gamma": gamma}
    try:
        data = _ask(session, prompt, "truthiness", ctx)
    except (BackendError, ExtractionError) as exc:
        log.info("truthiness for %s fell back to credibility: %s", message.sender, exc)
        return TruthinessScore(gamma, "credibility only")
    c, e = float(data["consistency"]), float(data["experience"])
    return TruthinessScore(combine_truthiness(c, gamma, e), data.get("rationale", ""), c, e)


@dataclass
class NegotiationOutcome:
    outbox: list[NegotiationMessage]
    belief: SocialBelief
    pledges: list[tuple[NegotiationMessage, bool]]
    truthiness: dict[int, TruthinessScore]
    degraded: bool = False


def negotiate_round(state: GameState, power: str, belief: SocialBelief, subgoal: SubGoal | None,
                    inbox: Sequence[NegotiationMessage], session: ChatSession,
                    truthiness: Mapping[int, TruthinessScore], round_index: int = 0,
                    context: Mapping[str, Any] | None = None) -> NegotiationOutcome:
    """One round: read the inbox, answer and initiate, maybe relabel relationships.

    ``truthiness`` maps the index of each inbox message to its score.
    """
    inbox_text = "\n".join(
        f"{i + 1}. {m.sender.title()}: {m.text}" for i, m in enumerate(inbox)) or "(no messages)"
    t_text = ", ".join(f"{i + 1}: {truthiness[i].value:.2f}" for i in sorted(truthiness)) or "none"
    prompt = render_template(load_template("negotiation"), {
        "country": power.title(),
        "subgoal": subgoal.text if subgoal else "none",
        "relationships": belief.summary(),
        "inbox": inbox_text,
        "truthiness": t_text,
    })
    ctx = {**(context or {}), "task": "negotiation", "state": state, "power": power, "belief": belief,
           "subgoal": subgoal, "inbox": list(inbox), "truthiness": dict(truthiness), "round": round_index}
    try:
        data = _ask(session, prompt, "message_bundle", ctx)
    except (BackendError, ExtractionError) as exc:
        log.warning("%s negotiation degraded: %s", power, exc)
        return NegotiationOutcome([], belief, [], dict(truthiness), degraded=True)

    opponents = set(belief.relationships)
    outbox: list[NegotiationMessage] = []
    pledges = []
    seen = set()
    for raw in data["messages"]:
        to = str(raw["recipient"]).upper()
        if to not in opponents or to in seen:
            continue
        try:
            commitments = tuple(Commitment.from_dict(c) for c in raw.get("commitments", ()))
        except ValueError:
            commitments = ()
        msg = NegotiationMessage(power, to, raw["text"], commitments, turn=state.turn, round=round_index)
        seen.add(to)
        outbox.append(msg)
        pledges.append((msg, bool(raw.get("sincere", True))))
    updates = {str(p).upper(): l for p, l in data.get("relationships", {}).items() if str(p).upper() in opponents}
    new_belief = replace(belief, relationships={**belief.relationships, **updates}) if updates else belief
    return NegotiationOutcome(outbox, new_belief, pledges, dict(truthiness))


def _legal_listing(state: GameState, units) -> str:
    lines = []
    for u in units:
        opts = [format_order(o) for o in unit_legal_orders(state, u)
                if o.kind in (OrderKind.HOLD, OrderKind.MOVE, OrderKind.CONVOY)]
        lines.append(f"{u}: {'; '.join(opts)} (or a support of any neighbouring unit)")
    return "\n".join(lines)


def _parse_for(state: GameState, power: str, texts: Sequence[str]) -> dict:
    by_unit = {}
    mine = {u.province: u for u in state.units_of(power)}
    for t in texts:
        try:
            o = parse_order(t, power=power, graph=state.graph)
        except (OrderError, TypeError):
            continue
        if o.unit is None or o.unit.province not in mine:
            continue
        o = replace(o, unit=replace(o.unit, power=power))
        if o.unit == mine[o.unit.province] and is_admissible(state, o) and o.unit not in by_unit:
            by_unit[o.unit] = o
    return by_unit


def decide_actions(state: GameState, power: str, subgoal: SubGoal | None, belief: SocialBelief | None,
                   commitments: Sequence[tuple[NegotiationMessage, bool]], session: ChatSession,
                   context: Mapping[str, Any] | None = None) -> list[Order]:
    """Exactly one admissible order per unit of ``power``; Hold fills every gap."""
    units = state.units_of(power)
    if not units:
        return []
    pledge_text = "; ".join(f"to {m.recipient.title()}: {', '.join(str(c.to_dict()) for c in m.commitments)}"
                            for m, _ in commitments if m.commitments) or "none"
    prompt = render_template(load_template("actor"), {
        "country": power.title(),
        "board": describe_board(state),
        "subgoal": subgoal.text if subgoal else "none",
        "relationships": belief.summary() if belief else "unknown",
        "commitments": pledge_text,
        "legal": _legal_listing(state, units),
    })
    ctx = {**(context or {}), "task": "actor", "state": state, "power": power, "subgoal": subgoal,
           "belief": belief, "pledges": list(commitments)}
    chosen: dict = {}
    try:
        chosen = _parse_for(state, power, extract_structured(session.complete(prompt, ctx), "orders", session, ctx))
        missing = [u for u in units if u not in chosen]
        if missing:
            retry = render_template(load_template("actor_retry"), {
                "illegal": ", ".join(str(u) for u in missing),
                "legal": _legal_listing(state, missing),
            })
            rctx = {**ctx, "task": "actor_retry", "missing": missing}
            again = _parse_for(state, power, extract_structured(session.complete(retry, rctx), "orders", session, rctx))
            for u in missing:
                if u in again:
                    chosen[u] = again[u]
    except (BackendError, ExtractionError) as exc:
        log.warning("%s actor degraded: %s", power, exc)
    return [chosen.get(u) or Order(OrderKind.HOLD, power=power, unit=u) for u in units]


# --------------------------------------------------------------------- players

def _seed(*parts: Any) -> int:
    return zlib.crc32("|".join(map(str, parts)).encode())


class Player:
    """Interface the game loop drives. Non-negotiating players ignore the press hooks."""

    kind = "base"

    def __init__(self, power: str, seed: int = 0):
        self.power = power
        self.seed = seed
        self.degraded: list[str] = []

    def start_game(self, game_id: str, state: GameState) -> None:
        self.game_id = game_id

    def begin_turn(self, state: GameState) -> None:
        pass

    def negotiate(self, state: GameState, inbox: Sequence[NegotiationMessage], round_index: int) -> list[NegotiationMessage]:
        return []

    def decide(self, state: GameState) -> list[Order]:
        raise NotImplementedError

    def end_turn(self, state: GameState, next_state: GameState, orders: Mapping[str, Sequence[Order]],
                 messages: Sequence[NegotiationMessage]) -> None:
        pass


class RandomAgent(Player):
    kind = "random"

    def decide(self, state: GameState) -> list[Order]:
        rng = random.Random(_seed(self.seed, self.power, state.year, state.phase.value))
        return random_orders(state, self.power, rng)


class HeuristicAgent(Player):
    """Greedy centre-grabber with support coordination; no press."""

    kind = "heuristic"

    def decide(self, state: GameState) -> list[Order]:
        if state.phase.is_movement:
            rng = random.Random(_seed(self.seed, self.power, state.year, state.phase.value))
            return greedy_orders(state, self.power, rng=rng)
        if state.phase.is_retreat:
            return greedy_retreats(state, self.power)
        return greedy_adjustments(state, self.power)


class RichelieuAgent(Player):
    """The full pipeline, backed by any :class:`~richelieu.llm.Backend`.

    ``memory`` is the store new turns are logged into; with
    ``use_selfplay_memory`` off the agent only ever retrieves from the
    records of the current game.
    """

    kind = "richelieu"

    def __init__(self, power: str, backend: Backend, memory: MemoryStore | None = None,
                 toggles: Toggles = Toggles(), seed: int = 0, long_term: LongTermGoal = LONG_TERM_GOAL,
                 m: int = 5, k: int = 3, context_budget: int = 24_000):
        super().__init__(power, seed)
        self.backend = backend
        self.memory = memory if memory is not None else MemoryStore()
        self.toggles = toggles
        self.long_term = long_term
        self.m, self.k = m, k
        self.context_budget = context_budget
        self.credibility = CredibilityTable()
        self.belief: SocialBelief | None = None
        self.subgoal: SubGoal | None = None
        self.pledges: list[tuple[NegotiationMessage, bool]] = []
        self.trajectory: list[dict] = []
        self.game_records: list[int] = []
        self.truthiness_log: list[tuple[int, str, float]] = []
        self.session: ChatSession | None = None
        self.retrievals = 0
        self.retrieval_hits = 0

    # -- lifecycle ----------------------------------------------------------
    def start_game(self, game_id: str, state: GameState) -> None:
        super().start_game(game_id, state)
        self.credibility.reset(p for p in state.powers if p != self.power)
        self.belief, self.subgoal = None, None
        self.pledges, self.trajectory, self.game_records = [], [], []
        self.session = ChatSession(self.backend, system_preamble(state, self.power), budget=self.context_budget)
        self._local = MemoryStore(base=None)

    def _ctx(self, state: GameState) -> dict:
        return {"power": self.power, "seed": _seed(self.seed, self.power, state.turn), "toggles": self.toggles,
                "credibility": dict(self.credibility.values)}

    def _retrieval_store(self) -> MemoryStore:
        return self.memory if self.toggles.use_selfplay_memory else self._local

    def _note(self, what: str, state: GameState) -> None:
        self.degraded.append(f"{state.year} {state.phase.value}: {what}")

    def begin_turn(self, state: GameState) -> None:
        assert self.session is not None, "start_game not called"
        self.trajectory.append(state.digest())
        self.pledges = []
        ctx = self._ctx(state)
        opponents = _opponents(state, self.power)

        # gamma update from last turn's verified truthfulness
        if self.game_records:
            last = self.memory.get(self.game_records[-1])
            for opp, tau in last.truthfulness.items():
                update_credibility(self.credibility, opp, tau)

        if self.toggles.modeling_others:
            self.belief = reason_social(state, self.power, self.session, self.belief, ctx)
            if self.belief.degraded:
                self._note("social reasoning", state)
        else:
            self.belief = SocialBelief.neutral(opponents)

        if self.toggles.subgoals:
            goal, _ = propose_subgoal(state, self.power, self.belief, self.long_term, self.session,
                                      self.subgoal, ctx)
            if self.toggles.reflection:
                found = retrieve_planning(self._retrieval_store(), state, goal, self.m, owner=self.power)
                self.retrievals += 1
                self.retrieval_hits += bool(found)
                goal = reflect(state, self.power, goal, found, self.session, self.belief, ctx)
            self.subgoal = goal
        else:
            self.subgoal = None

        current = self.subgoal or DEFAULT_SUBGOAL
        for rid in self.game_records:
            evaluate_subgoal(self.memory, rid, self.long_term, self._since(rid), self.backend, current)

    def _since(self, record_id: int) -> list[dict]:
        turn = self.memory.get(record_id).turn
        return [d for d in self.trajectory if _turn_of(d) >= turn]

    def negotiate(self, state: GameState, inbox: Sequence[NegotiationMessage], round_index: int) -> list[NegotiationMessage]:
        if not self.toggles.negotiation_pipeline or self.session is None:
            return []
        belief = self.belief or SocialBelief.neutral(_opponents(state, self.power))
        scores = {}
        for i, msg in enumerate(inbox):
            found = retrieve_negotiation(self._retrieval_store(), state, msg, self.k)
            scores[i] = assess_truthiness(state, belief.inferred_intentions.get(msg.sender), msg, belief,
                                          self.credibility.get(msg.sender), found, self.session, self._ctx(state))
            self.truthiness_log.append((state.turn, msg.sender, scores[i].value))
        out = negotiate_round(state, self.power, belief, self.subgoal, inbox, self.session, scores, round_index,
                              self._ctx(state))
        if out.degraded:
            self._note("negotiation", state)
        self.belief = out.belief
        self.pledges.extend(out.pledges)
        return out.outbox

    def decide(self, state: GameState) -> list[Order]:
        if state.phase.is_movement:
            if self.session is None:
                raise RuntimeError("start_game not called")
            return decide_actions(state, self.power, self.subgoal, self.belief if self.toggles.modeling_others else None,
                                  self.pledges, self.session, self._ctx(state))
        if state.phase.is_retreat:
            return greedy_retreats(state, self.power)
        return greedy_adjustments(state, self.power)

    def end_turn(self, state: GameState, next_state: GameState, orders: Mapping[str, Sequence[Order]],
                 messages: Sequence[NegotiationMessage]) -> None:
        mine = tuple(m for m in messages if self.power in (m.sender, m.recipient))
        record = MemoryRecord(
            game_id=self.game_id,
            turn=state.turn,
            owner=self.power,
            state=state.digest(),
            subgoal=self.subgoal or DEFAULT_SUBGOAL,
            messages=mine,
            actions={p: [format_order(o) for o in os] for p, os in orders.items()},
        )
        rid = log_turn(self.memory, record)
        self.game_records.append(rid)
        if not self.toggles.use_selfplay_memory:
            self._local._insert(record)
        for msg in mine:
            if msg.recipient == self.power:
                update_truthfulness(self.memory, rid, msg.sender, state, next_state, orders.get(msg.sender, ()),
                                    msg, self.backend)


def _turn_of(digest: Mapping[str, Any]) -> int:
    half = 0 if str(digest.get("phase", "")).startswith("Spring") else 1
    return (int(digest["year"]) - 1901) * 2 + half
