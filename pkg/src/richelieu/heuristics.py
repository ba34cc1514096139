"""Rule-based policies: the greedy baseline, the uniform-random player, and helpers.

The greedy policy scores every move of every unit by how close it brings the
unit to a supply centre it does not own, assigns moves best-first so that two
units never target the same province, and (when ``coordinate`` is on) turns
idle units into supports for contested attacks and threatened centres.
"""

from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Mapping

from .adjudicator import force_disband_order
from .maps import MapGraph, Terrain, UnitKind, adjacent, province_of
from .orders import Order, OrderKind, Unit, legal_orders, retreat_destinations, unit_legal_orders
from .state import GameState

__all__ = [
    "Knobs",
    "greedy_orders",
    "random_orders",
    "greedy_retreats",
    "greedy_adjustments",
    "threat_scores",
    "target_centers",
]

UNREACHABLE = 99


@lru_cache(maxsize=8)
def _kind_graphs(graph: MapGraph) -> dict[UnitKind, dict[str, frozenset[str]]]:
    """Province-level movement graph per unit kind."""
    army = {p: frozenset(n) for p, n in graph.army_adjacency.items()}
    fleet: dict[str, set[str]] = {}
    for loc, nbrs in graph.fleet_adjacency.items():
        fleet.setdefault(province_of(loc), set()).update(province_of(n) for n in nbrs)
    return {UnitKind.ARMY: army, UnitKind.FLEET: {p: frozenset(n) for p, n in fleet.items()}}


def _bfs(adj: Mapping[str, frozenset[str]], sources: Iterable[str]) -> dict[str, int]:
    dist = {s: 0 for s in sources}
    queue = deque(dist)
    while queue:
        cur = queue.popleft()
        for nxt in adj.get(cur, ()):
            if nxt not in dist:
                dist[nxt] = dist[cur] + 1
                queue.append(nxt)
    return dist


def reach(state: GameState, unit: Unit) -> frozenset[str]:
    return frozenset(province_of(x) for x in adjacent(state.graph, unit.location, unit.kind))


@dataclass(frozen=True)
class Knobs:
    """Tuning of the greedy policy.

    ``spare``: powers whose units and centres are left alone. ``focus`` and
    ``focus_powers`` add value to particular centres. ``defend`` keeps units
    on threatened home ground. ``coordinate`` enables support orders.
    """

    coordinate: bool = True
    defend: bool = True
    spare: frozenset[str] = frozenset()
    focus: frozenset[str] = frozenset()
    focus_powers: frozenset[str] = frozenset()
    noise: float = 0.25


def target_centers(state: GameState, power: str, spare: Iterable[str] = ()) -> set[str]:
    spare = set(spare)
    return {sc for sc, owner in state.ownership.items() if owner != power and owner not in spare}


def threat_scores(state: GameState, power: str) -> dict[str, float]:
    """How hard each opponent presses on ``power``: its units next to our centres and units."""
    mine = set(state.centers_of(power)) | {u.province for u in state.units_of(power)}
    scores = {p: 0.0 for p in state.active_powers() if p != power}
    for u in state.units:
        if u.power == power or u.power not in scores:
            continue
        hits = len(reach(state, u) & mine)
        scores[u.power] += hits + (1 if u.province in mine else 0)
    return scores


def _threatened(state: GameState, power: str, spare: frozenset[str]) -> set[str]:
    own = set(state.centers_of(power))
    out: set[str] = set()
    for u in state.units:
        if u.power != power and u.power not in spare:
            out |= reach(state, u) & own
    return out


def greedy_orders(state: GameState, power: str, knobs: Knobs = Knobs(), rng: random.Random | None = None) -> list[Order]:
    """One order per unit of ``power`` for a movement phase."""
    rng = rng or random.Random(0)
    graph = state.graph
    units = state.units_of(power)
    if not units:
        return []
    targets = target_centers(state, power, knobs.spare)
    graphs = _kind_graphs(graph)
    dist = {k: _bfs(graphs[k], targets) for k in (UnitKind.ARMY, UnitKind.FLEET)}
    threatened = _threatened(state, power, knobs.spare) if knobs.defend else set()
    spare_land = {sc for sc, o in state.ownership.items() if o in knobs.spare}

    def value(p: str) -> float:
        owner = state.ownership.get(p)
        v = 10.0 + (2.0 if owner is None else 0.0)
        if p in knobs.focus or owner in knobs.focus_powers:
            v += 5.0
        return v

    options = []
    for u in units:
        d = dist[u.kind]
        here = u.province
        if here in threatened:
            hold = 9.0
        else:
            hold = -2.0 * d.get(here, UNREACHABLE) - 0.5
        options.append((hold + rng.random() * knobs.noise, u, None))
        for loc in sorted(adjacent(graph, u.location, u.kind)):
            p = province_of(loc)
            occupant = state.unit_at(p)
            if occupant is not None and (occupant.power == power or occupant.power in knobs.spare):
                continue
            if p in spare_land:
                continue
            s = -2.0 * d.get(p, UNREACHABLE)
            if p in targets:
                s += value(p) - (4.0 if occupant is not None else 0.0)
            if here in threatened:
                s -= 6.0
            options.append((s + rng.random() * knobs.noise, u, loc))

    options.sort(key=lambda x: (-x[0], x[1].province, x[2] or ""))
    chosen: dict[Unit, str | None] = {}
    score_of: dict[Unit, float] = {}
    claimed: set[str] = set()
    for score, u, loc in options:
        if u in chosen:
            continue
        p = u.province if loc is None else province_of(loc)
        if p in claimed:
            continue
        chosen[u] = loc
        score_of[u] = score
        claimed.add(p)

    orders: dict[Unit, Order] = {}
    for u in units:
        loc = chosen.get(u)
        if loc is None:
            orders[u] = Order(OrderKind.HOLD, power=power, unit=u)
        else:
            orders[u] = Order(OrderKind.MOVE, power=power, unit=u, target=loc)

    if knobs.coordinate:
        _add_supports(state, power, units, chosen, score_of, targets, threatened, orders)
    return [orders[u] for u in units]


def _add_supports(state, power, units, chosen, score_of, targets, threatened, orders) -> None:
    """Convert idle units into supports, attacks on occupied or contested centres first."""
    foreign_reach: dict[str, int] = {}
    for u in state.units:
        if u.power != power:
            for p in reach(state, u):
                foreign_reach[p] = foreign_reach.get(p, 0) + 1

    def idle(u: Unit) -> bool:
        loc = chosen.get(u)
        if loc is None:
            return u.province not in threatened
        return province_of(loc) not in targets

    attacks = []
    for u in units:
        loc = chosen.get(u)
        if loc is None:
            continue
        p = province_of(loc)
        occupied = state.unit_at(p) is not None
        if p in targets and (occupied or foreign_reach.get(p, 0)):
            attacks.append((-(score_of[u] + (5 if occupied else 0)), p, u))
    attacks.sort(key=lambda x: (x[0], x[1]))
    used: set[Unit] = set()
    for _, p, mover in attacks:
        for helper in units:
            if helper is mover or helper in used or not idle(helper):
                continue
            if p in reach(state, helper) and p != helper.province:
                orders[helper] = Order(OrderKind.SUPPORT_MOVE, power=power, unit=helper,
                                       aux_kind=mover.kind, aux_from=mover.location, aux_to=p)
                used.add(helper)
                break
    for u in units:
        if chosen.get(u) is not None or u.province not in threatened:
            continue
        for helper in units:
            if helper is u or helper in used or not idle(helper):
                continue
            if u.province in reach(state, helper):
                orders[helper] = Order(OrderKind.SUPPORT_HOLD, power=power, unit=helper,
                                       aux_kind=u.kind, aux_from=u.location)
                used.add(helper)
                break


def greedy_retreats(state: GameState, power: str) -> list[Order]:
    targets = target_centers(state, power)
    graphs = _kind_graphs(state.graph)
    out = []
    for d in state.dislodged:
        if d.unit.power != power:
            continue
        options = retreat_destinations(state, d.unit, d.attacker_origin)
        if not options:
            out.append(Order(OrderKind.DISBAND, power=power, unit=d.unit))
            continue
        dist = _bfs(graphs[d.unit.kind], targets)
        best = min(options, key=lambda loc: (dist.get(province_of(loc), UNREACHABLE), loc))
        out.append(Order(OrderKind.RETREAT, power=power, unit=d.unit, target=best))
    return out


def greedy_adjustments(state: GameState, power: str) -> list[Order]:
    graph = state.graph
    delta = state.sc_count(power) - len(state.units_of(power))
    if delta < 0:
        doomed = force_disband_order(state, power, state.units_of(power))[:-delta]
        return [Order(OrderKind.DISBAND, power=power, unit=u) for u in doomed]
    if delta == 0:
        return []
    targets = target_centers(state, power)
    graphs = _kind_graphs(graph)
    da, df = _bfs(graphs[UnitKind.ARMY], targets), _bfs(graphs[UnitKind.FLEET], targets)
    occupied = {u.province for u in state.units}
    out = []
    for code in graph.home_centers(power):
        if len(out) == delta:
            break
        if state.ownership.get(code) != power or code in occupied:
            continue
        prov = graph.provinces[code]
        if prov.terrain is Terrain.COASTAL and df.get(code, UNREACHABLE) + 1 < da.get(code, UNREACHABLE):
            loc = min(prov.fleet_locations,
                      key=lambda l: min((df.get(province_of(n), UNREACHABLE) for n in graph.fleet_adjacency[l]),
                                        default=UNREACHABLE))
            out.append(Order(OrderKind.BUILD, power=power, target=loc, build_kind=UnitKind.FLEET))
        else:
            out.append(Order(OrderKind.BUILD, power=power, target=code, build_kind=UnitKind.ARMY))
    return out


def random_orders(state: GameState, power: str, rng: random.Random) -> list[Order]:
    """Uniformly random admissible orders for any phase."""
    if state.phase.is_movement:
        return [rng.choice(unit_legal_orders(state, u)) for u in state.units_of(power)]
    if state.phase.is_retreat:
        return [rng.choice(unit_legal_orders(state, d.unit)) for d in state.dislodged if d.unit.power == power]
    delta = state.sc_count(power) - len(state.units_of(power))
    options = legal_orders(state, power)
    if delta < 0:
        return rng.sample(options, min(-delta, len(options)))
    out, sites = [], set()
    for o in rng.sample(options, len(options)):
        if len(out) == delta:
            break
        if province_of(o.target) not in sites:
            sites.add(province_of(o.target))
            out.append(o)
    return out
