"""Deterministic stand-in for a language model, built from the greedy heuristics.

:class:`HeuristicResponder` answers every pipeline prompt from the structured
context the agent passes alongside it. It reads none of the prompt text, so
its quality tracks which pipeline stages are switched on: without a sub-goal
its orders are uncoordinated, a sub-goal adds focus and supports, and a social
belief adds defence and spares the chosen ally.
"""

from __future__ import annotations

import random
import zlib
from dataclasses import dataclass
from typing import Any, Mapping, Sequence

from .domain import CommitmentType, SubGoal
from .heuristics import Knobs, greedy_orders, reach, threat_scores
from .llm import BackendError, ScriptedBackend, json_block
from .orders import Order, OrderKind, format_order
from .state import GameState

__all__ = ["HeuristicResponder", "heuristic_backend"]


def _rng(context: Mapping[str, Any], *salt: Any) -> random.Random:
    key = "|".join(map(str, (context.get("seed", 0), context.get("power", ""), *salt)))
    return random.Random(zlib.crc32(key.encode()))


def _neighbours_of(state: GameState, power: str) -> set[str]:
    """Powers with a unit or centre within one move of ours."""
    mine = set(state.centers_of(power)) | {u.province for u in state.units_of(power)}
    near = set()
    for u in state.units:
        if u.power != power and (reach(state, u) & mine or u.province in mine):
            near.add(u.power)
    return near


@dataclass
class HeuristicResponder:
    """Callable ``(messages, context) -> reply`` for :class:`~richelieu.llm.ScriptedBackend`.

    ``deceive`` lets the agent promise peace to its primary threat without
    meaning it.
    """

    deceive: bool = True

    def __call__(self, messages: Sequence[Mapping[str, str]], context: Mapping[str, Any]) -> str:
        task = context.get("task")
        handler = getattr(self, f"_{task}", None)
        if handler is None:
            raise BackendError(f"heuristic responder has no answer for task {task!r}")
        return json_block(handler(context))

    # ---------------------------------------------------------------- beliefs
    def _social_reasoning(self, ctx: Mapping[str, Any]) -> dict:
        state: GameState = ctx["state"]
        power = ctx["power"]
        threats = threat_scores(state, power)
        if not threats:
            return {"relationships": {}}
        ranked = sorted(threats, key=lambda p: (-threats[p], -state.sc_count(p), p))
        threat = ranked[0] if threats[ranked[0]] > 0 else None
        near = _neighbours_of(state, power)
        order = sorted(threats)
        _rng(ctx, state.turn, "ally").shuffle(order)  # break ties without favouring the alphabet
        far = [p for p in sorted(order, key=lambda p: threats[p]) if p != threat]
        ally = next((p for p in far if p in near), far[0] if far else None)
        rel = {}
        for p in threats:
            if p == threat:
                rel[p] = {"label": "enemy", "rationale": f"{threats[p]:.0f} pressure on our ground"}
            elif p == ally:
                rel[p] = {"label": "ally", "rationale": "least pressure among neighbours"}
            else:
                rel[p] = {"label": "neutral", "rationale": "no clear conflict"}
        return {"relationships": rel, "primary_threat": threat, "candidate_ally": ally}

    # --------------------------------------------------------------- planning
    def _goal_for(self, state: GameState, power: str, enemy: str | None, ally: str | None) -> dict:
        units = state.units_of(power)
        near = set()
        for u in units:
            near |= reach(state, u)
        neutral = sorted(sc for sc in state.graph.supply_centers if state.ownership.get(sc) is None and sc in near)
        hostile = sorted(sc for sc in state.centers_of(enemy) if sc in near) if enemy else []
        focus = hostile + neutral if hostile else neutral
        if not focus:
            others = sorted(sc for sc in near if sc in state.ownership and state.ownership[sc] not in (power, ally))
            focus = others
        if enemy and hostile:
            text = f"weaken {enemy.title()} by taking {', '.join(hostile)}"
        elif focus:
            text = f"take {', '.join(focus)}"
        else:
            text = "hold current centers"
        return {"text": text, "focus_powers": [enemy] if enemy else [], "focus_provinces": focus, "horizon": 2}

    def _intentions(self, state: GameState, power: str) -> dict[str, str]:
        out = {}
        for p in state.active_powers():
            if p == power:
                continue
            threats = threat_scores(state, p)
            target = max(sorted(threats), key=lambda q: threats[q]) if threats else None
            out[p] = f"press {target.title()}" if target and threats[target] > 0 else "expand into neutral centers"
        return out

    def _planner(self, ctx: Mapping[str, Any]) -> dict:
        state, power, belief = ctx["state"], ctx["power"], ctx.get("belief")
        enemy = belief.primary_threat if belief else None
        ally = belief.candidate_ally if belief else None
        return {**self._goal_for(state, power, enemy, ally), "intentions": self._intentions(state, power)}

    def _planner_reflection(self, ctx: Mapping[str, Any]) -> dict:
        """Keep the proposal unless the closest past experiences scored badly."""
        goal: SubGoal = ctx["subgoal"]
        scored = [r.record.lam for r in ctx.get("experiences", ()) if r.record.lam is not None]
        if not scored or sum(scored) / len(scored) >= 5.0:
            return goal.to_dict()
        state, power, belief = ctx["state"], ctx["power"], ctx.get("belief")
        ally = belief.candidate_ally if belief else None
        revised = self._goal_for(state, power, None, ally)
        if revised["text"] == goal.text:
            revised["text"] = "consolidate and hold current centers"
            revised["focus_provinces"] = list(state.centers_of(power))
        return revised

    # ------------------------------------------------------------ negotiation
    def _negotiation(self, ctx: Mapping[str, Any]) -> dict:
        state: GameState = ctx["state"]
        power = ctx["power"]
        belief = ctx.get("belief")
        inbox = ctx.get("inbox", ())
        scores = ctx.get("truthiness", {})
        messages = []
        updates = {}
        if belief is None:
            return {"messages": []}
        ally, threat = belief.candidate_ally, belief.primary_threat
        if ctx.get("round", 0) == 0:
            if ally:
                mine = sorted(set(state.centers_of(ally)) | {u.province for u in state.units_of(ally)})
                messages.append({
                    "recipient": ally,
                    "text": f"{power.title()} will leave your territory alone; let us both look elsewhere.",
                    "commitments": [{"type": CommitmentType.CEASEFIRE.value, "power": ally}] if mine else [],
                    "sincere": True,
                })
            if threat and self.deceive:
                messages.append({
                    "recipient": threat,
                    "text": f"{power.title()} proposes peace between us this season.",
                    "commitments": [{"type": CommitmentType.CEASEFIRE.value, "power": threat}],
                    "sincere": False,
                })
        for i, msg in enumerate(inbox):
            psi = scores[i].value if i in scores else 0.5
            if msg.sender == threat:
                continue
            if psi >= 0.6 and belief.relationships.get(msg.sender) == "neutral":
                updates[msg.sender] = "ally"
            elif psi < 0.3 and belief.relationships.get(msg.sender) == "ally":
                updates[msg.sender] = "neutral"
        return {"messages": messages, "relationships": updates}

    def _truthiness(self, ctx: Mapping[str, Any]) -> dict:
        msg = ctx["message"]
        belief = ctx.get("belief")
        state: GameState = ctx["state"]
        label = belief.relationships.get(msg.sender, "neutral") if belief else "neutral"
        hostile = belief is not None and belief.primary_threat == msg.sender
        pressure = threat_scores(state, msg.recipient).get(msg.sender, 0.0)
        consistency = 0.2 if hostile else 0.9 if label == "ally" else max(0.3, 0.8 - 0.1 * pressure)
        known = [r.truthfulness for r in ctx.get("experiences", ()) if r.truthfulness is not None]
        experience = sum(known) / len(known) if known else 0.5
        return {"consistency": round(consistency, 4), "experience": round(experience, 4)}

    # ---------------------------------------------------------------- actions
    def knobs(self, ctx: Mapping[str, Any]) -> Knobs:
        goal: SubGoal | None = ctx.get("subgoal")
        belief = ctx.get("belief")
        spare = set()
        if belief is not None:
            spare.update(belief.of("ally"))
            for msg, sincere in ctx.get("pledges", ()):
                if sincere and any(c.type is CommitmentType.CEASEFIRE for c in msg.commitments):
                    spare.add(msg.recipient)
            # with no one else left, sparing would freeze the board
            if len(spare) >= len([p for p in belief.relationships]):
                spare.clear()
        return Knobs(
            coordinate=goal is not None,
            defend=belief is not None,
            spare=frozenset(spare),
            focus=frozenset(goal.focus_provinces) if goal else frozenset(),
            focus_powers=frozenset(goal.focus_powers) if goal else frozenset(),
        )

    def _actor(self, ctx: Mapping[str, Any]) -> dict:
        state: GameState = ctx["state"]
        power = ctx["power"]
        orders = greedy_orders(state, power, self.knobs(ctx), _rng(ctx, state.turn, "actor"))
        return {"orders": [format_order(o) for o in orders]}

    def _actor_retry(self, ctx: Mapping[str, Any]) -> dict:
        return {"orders": [format_order(_hold(u)) for u in ctx.get("missing", ())]}

    # ------------------------------------------------------------- judgements
    def _memory_eval(self, ctx: Mapping[str, Any]) -> dict:
        rec = ctx["record"]
        last = ctx["trajectory"][-1]
        owned_after = set(last.get("ownership", {}).get(rec.owner, ()))
        hit = len(rec.subgoal.focus_provinces & owned_after)
        score = 5 + ctx.get("delta", 0) + hit
        return {"score": max(0, min(10, score))}

    def _truthfulness(self, ctx: Mapping[str, Any]) -> dict:
        msg = ctx["message"]
        before = ctx["before"]
        own = set(before.get("ownership", {}).get(msg.recipient, ()))
        own |= {loc.split("/")[0] for p, _, loc in before.get("units", ()) if p == msg.recipient}
        hostile = any(o.kind is OrderKind.MOVE and o.target.split("/")[0] in own for o in ctx.get("orders", ()))
        return {"honest": not hostile}


def _hold(unit) -> Order:
    return Order(OrderKind.HOLD, power=unit.power, unit=unit)


def heuristic_backend(deceive: bool = True) -> ScriptedBackend:
    return ScriptedBackend(responder=HeuristicResponder(deceive=deceive))
