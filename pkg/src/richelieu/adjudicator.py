"""Simultaneous order resolution for movement, retreat and adjustment phases.

Movement uses a guess-and-check resolver over two kinds of decisions, "does
this move succeed" and "is this support given". When decisions depend on each
other in a cycle the resolver tries both guesses; a cycle made only of moves is
a rotation and every move in it succeeds, any other ambiguous cycle fails its
convoyed moves.

House rules that differ from some published rule sets:

* A convoy is disrupted as soon as any other fleet is ordered into the
  convoying fleet's sea, whether or not that attack succeeds.
* Support is cut by any attack from a different power, except an attack coming
  from the province the support is directed into (that one only cuts by
  dislodging the supporter).
"""

from __future__ import annotations

import enum
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .maps import Terrain, UnitKind, province_of
from .orders import Order, OrderKind, Unit, is_admissible, retreat_destinations
from .state import Dislodgement, GameState

__all__ = [
    "OrderOutcome",
    "AdjudicationError",
    "Resolution",
    "RetreatResult",
    "AdjustmentResult",
    "adjudicate_movement",
    "support_strength",
    "adjudicate_retreats",
    "adjudicate_adjustments",
]

log = logging.getLogger(__name__)


class OrderOutcome(str, enum.Enum):
    SUCCEEDS = "succeeds"
    FAILS = "fails"
    SUPPORT_CUT = "support_cut"
    CONVOY_DISRUPTED = "convoy_disrupted"


class AdjudicationError(ValueError):
    """Orders that cannot be adjudicated at all (duplicates, missing units, wrong phase)."""


@dataclass(frozen=True)
class Resolution:
    orders: tuple[Order, ...]
    outcomes: Mapping[Order, OrderOutcome]
    dislodged: tuple[Dislodgement, ...]
    units: tuple[Unit, ...]
    contested: frozenset[str] = frozenset()
    strengths: Mapping[Order, int] = field(default_factory=dict)


@dataclass(frozen=True)
class RetreatResult:
    orders: tuple[Order, ...]
    outcomes: Mapping[Order, OrderOutcome]
    units: tuple[Unit, ...]
    disbanded: tuple[Unit, ...]


@dataclass(frozen=True)
class AdjustmentResult:
    orders: tuple[Order, ...]
    outcomes: Mapping[Order, OrderOutcome]
    units: tuple[Unit, ...]
    built: tuple[Unit, ...]
    disbanded: tuple[Unit, ...]
    rejected: Mapping[Order, str] = field(default_factory=dict)


# ------------------------------------------------------------------ movement

_UNRESOLVED, _GUESSING, _RESOLVED = 0, 1, 2


def _bind_orders(state: GameState, orders: Iterable[Order]) -> tuple[list[Order], dict[Unit, Order]]:
    """Attach each order to its unit; missing orders become holds."""
    submitted = list(orders)
    by_unit: dict[Unit, Order] = {}
    bound: list[Order] = []
    for order in submitted:
        if order.kind not in (OrderKind.HOLD, OrderKind.MOVE, OrderKind.SUPPORT_HOLD,
                              OrderKind.SUPPORT_MOVE, OrderKind.CONVOY):
            raise AdjudicationError(f"{order} is not a movement-phase order")
        unit = state.unit_at(order.unit.province)
        if unit is None or unit.kind is not order.unit.kind or unit.location != order.unit.location:
            raise AdjudicationError(f"order {order} names no existing unit")
        if order.power is not None and order.power != unit.power:
            raise AdjudicationError(f"order {order} given by {order.power} for a {unit.power} unit")
        if unit in by_unit:
            raise AdjudicationError(f"duplicate orders for {unit}")
        if order.power is None:
            order = _with_power(order, unit.power)
        by_unit[unit] = order
        bound.append(order)
    for unit in state.units:
        if unit not in by_unit:
            hold = Order(OrderKind.HOLD, power=unit.power, unit=unit)
            by_unit[unit] = hold
            bound.append(hold)
    return bound, by_unit


def _with_power(order: Order, power: str) -> Order:
    unit = Unit(power, order.unit.kind, order.unit.location)
    return Order(order.kind, power=power, unit=unit, target=order.target, aux_kind=order.aux_kind,
                 aux_from=order.aux_from, aux_to=order.aux_to, build_kind=order.build_kind)


class _MovementResolver:
    def __init__(self, state: GameState, by_unit: Mapping[Unit, Order]):
        self.state = state
        graph = state.graph
        self.units = list(state.units)
        self.n = len(self.units)
        self.order = [by_unit[u] for u in self.units]
        self.power = [u.power for u in self.units]
        self.origin = [u.province for u in self.units]
        self.at = {p: i for i, p in enumerate(self.origin)}
        self.valid = [is_admissible(state, o) for o in self.order]

        n = self.n
        self.is_move = [self.valid[i] and self.order[i].kind is OrderKind.MOVE for i in range(n)]
        self.dest = [province_of(self.order[i].target) if self.is_move[i] else None for i in range(n)]
        self.via_convoy = [
            self.is_move[i] and self.units[i].kind is UnitKind.ARMY
            and self.order[i].target not in graph.army_adjacency.get(self.origin[i], ())
            for i in range(n)
        ]
        self.moves_to: dict[str, list[int]] = defaultdict(list)
        for i in range(n):
            if self.is_move[i]:
                self.moves_to[self.dest[i]].append(i)

        # convoys: static disruption, then path search
        self.disrupted = [False] * n
        self.convoy_ok = [False] * n
        for i in range(n):
            o = self.order[i]
            if not (self.valid[i] and o.kind is OrderKind.CONVOY):
                continue
            self.disrupted[i] = any(
                k != i and self.units[k].kind is UnitKind.FLEET for k in self.moves_to.get(self.origin[i], ())
            )
            army = self.at.get(province_of(o.aux_from))
            self.convoy_ok[i] = (
                army is not None and self.is_move[army] and self.via_convoy[army]
                and self.dest[army] == province_of(o.aux_to)
            )
        self.path_ok = [True] * n
        self.path_disrupted = [False] * n
        for i in range(n):
            if self.via_convoy[i]:
                self.path_ok[i], self.path_disrupted[i] = self._convoy_path(i)

        # supports: validity is static
        self.support_for: dict[int, list[int]] = defaultdict(list)
        self.support_target = [None] * n
        self.support_valid = [False] * n
        for i in range(n):
            o = self.order[i]
            if not self.valid[i] or o.kind not in (OrderKind.SUPPORT_HOLD, OrderKind.SUPPORT_MOVE):
                continue
            j = self.at.get(province_of(o.aux_from))
            if j is None:
                continue
            if o.kind is OrderKind.SUPPORT_HOLD:
                ok = not self.is_move[j]
                target = self.origin[j]
            else:
                ok = self.is_move[j] and self.dest[j] == province_of(o.aux_to)
                target = province_of(o.aux_to)
            if ok:
                self.support_valid[i] = True
                self.support_target[i] = target
                self.support_for[j].append(i)

        self.state_of = [_UNRESOLVED] * n
        self.result = [False] * n
        self.deps: list[int] = []

    def _convoy_path(self, i: int) -> tuple[bool, bool]:
        graph = self.state.graph
        army = self.units[i]
        carriers = {}
        any_disrupted = False
        for k in range(self.n):
            o = self.order[k]
            if (self.valid[k] and o.kind is OrderKind.CONVOY and province_of(o.aux_from) == army.province
                    and province_of(o.aux_to) == self.dest[i]):
                if self.disrupted[k]:
                    any_disrupted = True
                else:
                    carriers[self.origin[k]] = k

        def seas_next_to(prov: str) -> set[str]:
            return {province_of(x) for loc in graph.provinces[prov].fleet_locations
                    for x in graph.fleet_adjacency.get(loc, ())}

        frontier = [s for s in seas_next_to(army.province) if s in carriers]
        seen: set[str] = set()
        goal = seas_next_to(self.dest[i])
        while frontier:
            sea = frontier.pop()
            if sea in seen:
                continue
            seen.add(sea)
            if sea in goal:
                return True, any_disrupted
            frontier.extend(s for s in seas_next_to(sea) if s in carriers and s not in seen)
        return False, any_disrupted

    # -- decision engine -------------------------------------------------
    def resolve(self, nr: int) -> bool:
        if self.state_of[nr] == _RESOLVED:
            return self.result[nr]
        if self.state_of[nr] == _GUESSING:
            if nr not in self.deps:
                self.deps.append(nr)
            return self.result[nr]

        old = len(self.deps)
        self.result[nr] = False
        self.state_of[nr] = _GUESSING
        first = self.adjudicate(nr)
        if len(self.deps) == old:
            if self.state_of[nr] != _RESOLVED:
                self.result[nr] = first
                self.state_of[nr] = _RESOLVED
            return first
        if self.deps[old] != nr:
            self.deps.append(nr)
            self.result[nr] = first
            return first

        for x in self.deps[old:]:
            self.state_of[x] = _UNRESOLVED
        del self.deps[old:]
        self.result[nr] = True
        self.state_of[nr] = _GUESSING
        second = self.adjudicate(nr)
        if first == second:
            for x in self.deps[old:]:
                self.state_of[x] = _UNRESOLVED
            del self.deps[old:]
            self.result[nr] = first
            self.state_of[nr] = _RESOLVED
            return first

        self._backup_rule(self.deps[old:])
        del self.deps[old:]
        return self.resolve(nr)

    def _backup_rule(self, cycle: Sequence[int]) -> None:
        if all(self.is_move[x] for x in cycle):
            for x in cycle:
                self.result[x] = True
                self.state_of[x] = _RESOLVED
            return
        convoyed = [x for x in cycle if self.is_move[x] and self.via_convoy[x]]
        fail = convoyed or [x for x in cycle if self.is_move[x]] or list(cycle)
        for x in cycle:
            self.state_of[x] = _UNRESOLVED
        for x in fail:
            self.result[x] = False
            self.state_of[x] = _RESOLVED

    def adjudicate(self, i: int) -> bool:
        if self.is_move[i]:
            return self._move_succeeds(i)
        return self._support_given(i)

    def _h2h(self, i: int, j: int | None) -> bool:
        return (j is not None and self.is_move[i] and self.is_move[j]
                and self.dest[i] == self.origin[j] and self.dest[j] == self.origin[i]
                and not self.via_convoy[i] and not self.via_convoy[j])

    def _supports(self, i: int, exclude_power: str | None = None) -> int:
        return sum(1 for s in self.support_for.get(i, ())
                   if (exclude_power is None or self.power[s] != exclude_power) and self.resolve(s))

    def _attack(self, i: int) -> int:
        if not self.path_ok[i]:
            return 0
        j = self.at.get(self.dest[i])
        if j is None or (self.is_move[j] and not self._h2h(i, j) and self.resolve(j)):
            return 1 + self._supports(i)
        if self.power[j] == self.power[i]:
            return 0
        return 1 + self._supports(i, exclude_power=self.power[j])

    def _hold(self, prov: str) -> int:
        j = self.at.get(prov)
        if j is None:
            return 0
        if self.is_move[j]:
            return 0 if self.resolve(j) else 1
        return 1 + self._supports(j)

    def _prevent(self, k: int) -> int:
        if not self.path_ok[k]:
            return 0
        partner = self.at.get(self.dest[k])
        if self._h2h(k, partner) and self.resolve(partner):
            return 0
        return 1 + self._supports(k)

    def _move_succeeds(self, i: int) -> bool:
        if not self.path_ok[i]:
            return False
        attack = self._attack(i)
        j = self.at.get(self.dest[i])
        if self._h2h(i, j):
            if attack <= 1 + self._supports(j):
                return False
        elif attack <= self._hold(self.dest[i]):
            return False
        for k in self.moves_to[self.dest[i]]:
            if k != i and attack <= self._prevent(k):
                return False
        return True

    def _support_given(self, i: int) -> bool:
        if not self.support_valid[i]:
            return False
        here = self.origin[i]
        for m in self.moves_to.get(here, ()):
            if self.power[m] == self.power[i] or not self.path_ok[m]:
                continue
            if self.origin[m] != self.support_target[i]:
                return False
        return not any(self.resolve(m) for m in self.moves_to.get(here, ()))

    # -- result assembly -------------------------------------------------
    def run(self) -> tuple[dict[int, OrderOutcome], list[Dislodgement], list[Unit], frozenset[str], dict[int, int]]:
        for i in range(self.n):
            if self.is_move[i] or self.support_valid[i]:
                self.resolve(i)
        moved = {i for i in range(self.n) if self.is_move[i] and self.result[i]}
        entered = {self.dest[i]: i for i in moved}

        dislodged: list[Dislodgement] = []
        units: list[Unit] = []
        gone: set[int] = set()
        for j in range(self.n):
            u = self.units[j]
            if j in moved:
                units.append(Unit(u.power, u.kind, self.order[j].target))
            elif self.origin[j] in entered:
                dislodged.append(Dislodgement(u, self.origin[entered[self.origin[j]]]))
                gone.add(j)
            else:
                units.append(u)

        contested = frozenset(
            prov for prov, movers in self.moves_to.items()
            if prov not in entered and sum(1 for m in movers if self.path_ok[m]) >= 2
        )

        outcomes: dict[int, OrderOutcome] = {}
        strengths: dict[int, int] = {}
        for i in range(self.n):
            kind = self.order[i].kind
            if self.is_move[i]:
                if self.result[i]:
                    outcomes[i] = OrderOutcome.SUCCEEDS
                elif not self.path_ok[i] and self.path_disrupted[i]:
                    outcomes[i] = OrderOutcome.CONVOY_DISRUPTED
                else:
                    outcomes[i] = OrderOutcome.FAILS
                strengths[i] = 1 + self._supports(i)
                continue
            strengths[i] = 1 + self._supports(i)
            if not self.valid[i]:
                outcomes[i] = OrderOutcome.FAILS
            elif kind in (OrderKind.SUPPORT_HOLD, OrderKind.SUPPORT_MOVE):
                if not self.support_valid[i]:
                    outcomes[i] = OrderOutcome.FAILS
                else:
                    outcomes[i] = OrderOutcome.SUCCEEDS if self.result[i] else OrderOutcome.SUPPORT_CUT
            elif kind is OrderKind.CONVOY:
                if self.disrupted[i]:
                    outcomes[i] = OrderOutcome.CONVOY_DISRUPTED
                else:
                    outcomes[i] = OrderOutcome.SUCCEEDS if self.convoy_ok[i] and i not in gone else OrderOutcome.FAILS
            else:
                outcomes[i] = OrderOutcome.FAILS if i in gone else OrderOutcome.SUCCEEDS
        return outcomes, dislodged, units, contested, strengths


def adjudicate_movement(state: GameState, orders: Iterable[Order]) -> Resolution:
    """Resolve one movement phase.

    Units without an order hold. Orders that are well formed but not
    admissible (for example a move to a non-adjacent province) are resolved as
    holds and reported as failed.
    """
    if not state.phase.is_movement:
        raise AdjudicationError(f"movement orders in {state.phase.value}")
    bound, by_unit = _bind_orders(state, orders)
    resolver = _MovementResolver(state, by_unit)
    outcomes, dislodged, units, contested, strengths = resolver.run()
    index = {u: i for i, u in enumerate(resolver.units)}
    return Resolution(
        orders=tuple(bound),
        outcomes={o: outcomes[index[o.unit]] for o in bound},
        dislodged=tuple(dislodged),
        units=tuple(units),
        contested=contested,
        strengths={o: strengths[index[o.unit]] for o in bound},
    )


def support_strength(state: GameState, orders: Iterable[Order]) -> dict[Order, int]:
    """1 + number of valid, uncut supports for every order (moves and stationary units alike)."""
    return dict(adjudicate_movement(state, orders).strengths)


# ------------------------------------------------------------------- retreats

def adjudicate_retreats(state: GameState, orders: Iterable[Order]) -> RetreatResult:
    """Resolve a retreat phase.

    Dislodged units without a legal, uncontested retreat are disbanded,
    including every unit of a group retreating to the same province.
    """
    if not state.phase.is_retreat:
        raise AdjudicationError(f"retreat orders in {state.phase.value}")
    pending = {d.unit.province: d for d in state.dislodged}
    chosen: dict[str, Order] = {}
    submitted = []
    for order in orders:
        if order.kind not in (OrderKind.RETREAT, OrderKind.DISBAND) or order.unit is None:
            raise AdjudicationError(f"{order} is not a retreat-phase order")
        d = pending.get(order.unit.province)
        if d is None or d.unit.kind is not order.unit.kind or d.unit.location != order.unit.location:
            raise AdjudicationError(f"{order} is for a unit that was not dislodged")
        if order.power is not None and order.power != d.unit.power:
            raise AdjudicationError(f"{order} given by {order.power} for a {d.unit.power} unit")
        if order.unit.province in chosen:
            raise AdjudicationError(f"duplicate retreat orders for {d.unit}")
        if order.power is None:
            order = _with_power(order, d.unit.power)
        chosen[order.unit.province] = order
        submitted.append(order)

    targets: dict[str, list[str]] = defaultdict(list)
    legal: dict[str, bool] = {}
    for prov, order in chosen.items():
        if order.kind is OrderKind.RETREAT:
            d = pending[prov]
            legal[prov] = order.target in retreat_destinations(state, d.unit, d.attacker_origin)
            if legal[prov]:
                targets[province_of(order.target)].append(prov)

    outcomes: dict[Order, OrderOutcome] = {}
    units = list(state.units)
    disbanded: list[Unit] = []
    for prov, d in sorted(pending.items()):
        order = chosen.get(prov)
        if order is not None and order.kind is OrderKind.RETREAT and legal[prov] \
                and len(targets[province_of(order.target)]) == 1:
            units.append(Unit(d.unit.power, d.unit.kind, order.target))
            outcomes[order] = OrderOutcome.SUCCEEDS
        else:
            disbanded.append(d.unit)
            if order is not None:
                outcomes[order] = OrderOutcome.SUCCEEDS if order.kind is OrderKind.DISBAND else OrderOutcome.FAILS
    return RetreatResult(tuple(submitted), outcomes, tuple(units), tuple(disbanded))


# ---------------------------------------------------------------- adjustments

def force_disband_order(state: GameState, power: str, units: Sequence[Unit]) -> list[Unit]:
    """Units sorted for civil disorder: farthest from the nearest owned home centre first,
    ties by province code."""
    homes = [c for c in state.graph.home_centers(power) if state.ownership.get(c) == power]
    dist = state.graph.distances_from(homes) if homes else {}
    far = len(state.graph.provinces) + 1
    return sorted(units, key=lambda u: (-dist.get(u.province, far), u.province))


def adjudicate_adjustments(state: GameState, orders: Iterable[Order]) -> AdjustmentResult:
    """Apply builds and disbands.

    Invalid orders are rejected with a reason and otherwise ignored. A power
    that disbands too few units loses the extra ones by :func:`force_disband_order`.
    """
    if not state.phase.is_adjustment:
        raise AdjudicationError(f"adjustment orders in {state.phase.value}")
    graph = state.graph
    units = list(state.units)
    occupied = {u.province for u in units}
    delta = {p: state.sc_count(p) - len(state.units_of(p)) for p in state.powers}
    used = defaultdict(int)
    outcomes: dict[Order, OrderOutcome] = {}
    rejected: dict[Order, str] = {}
    built: list[Unit] = []
    removed: list[Unit] = []
    submitted = list(orders)

    def reject(order: Order, reason: str) -> None:
        rejected[order] = reason
        outcomes[order] = OrderOutcome.FAILS
        log.info("adjustment order %s rejected: %s", order, reason)

    for order in submitted:
        if order.kind is OrderKind.BUILD:
            power = order.power
            code = province_of(order.target)
            prov = graph.provinces.get(code)
            if power not in delta:
                reject(order, "unknown power")
            elif delta[power] - used[power] <= 0:
                reject(order, "no builds available")
            elif prov is None or prov.home_power != power or not prov.is_supply_center:
                reject(order, "not a home supply center")
            elif state.ownership.get(code) != power:
                reject(order, "home center not owned")
            elif code in occupied:
                reject(order, "build site occupied")
            elif order.build_kind is UnitKind.FLEET and prov.terrain is not Terrain.COASTAL:
                reject(order, "fleets can only be built at coastal centers")
            elif order.build_kind is UnitKind.FLEET and order.target not in prov.fleet_locations:
                reject(order, "fleet build needs a valid coast")
            elif order.build_kind is UnitKind.ARMY and order.target != code:
                reject(order, "armies are built without a coast")
            else:
                unit = Unit(power, order.build_kind, order.target)
                units.append(unit)
                built.append(unit)
                occupied.add(code)
                used[power] += 1
                outcomes[order] = OrderOutcome.SUCCEEDS
        elif order.kind is OrderKind.DISBAND:
            unit = state.unit_at(order.unit.province)
            power = unit.power if unit is not None else None
            if unit is None or unit.location != order.unit.location or unit.kind is not order.unit.kind:
                reject(order, "no such unit")
            elif order.power is not None and order.power != power:
                reject(order, "unit belongs to another power")
            elif unit in removed:
                reject(order, "unit already disbanded")
            elif delta[power] + used[power] >= 0:
                reject(order, "no disbands required")
            else:
                units.remove(unit)
                removed.append(unit)
                used[power] += 1
                outcomes[order] = OrderOutcome.SUCCEEDS
        else:
            raise AdjudicationError(f"{order} is not an adjustment-phase order")

    for power in state.powers:
        owed = -(delta[power] + used[power]) if delta[power] < 0 else 0
        if owed > 0:
            remaining = [u for u in units if u.power == power]
            for unit in force_disband_order(state, power, remaining)[:owed]:
                units.remove(unit)
                removed.append(unit)
                log.info("%s force-disbanded %s", power, unit)

    return AdjustmentResult(tuple(submitted), outcomes, tuple(units), tuple(built), tuple(removed), rejected)
