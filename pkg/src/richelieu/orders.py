"""Order values, the order text grammar, and legal-order enumeration.

Canonical grammar (case-insensitive, whitespace-tolerant)::

    A PAR H                 hold
    A PAR - BUR             move
    A PAR S A BUR           support hold
    A GAS S A PAR - BUR     support move
    F MAO C A BRE - SPA     convoy
    A PAR R BUR             retreat
    A PAR D                 disband
    BUILD F BRE/NC          build

Province tokens are three-letter codes; a coast is a ``/NC``-style suffix.
The text form is the wire format used in replays and memory records.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable

from .maps import MapGraph, Terrain, UnitKind, adjacent, load_standard_map, province_of

if TYPE_CHECKING:
    from .state import GameState

__all__ = [
    "OrderKind",
    "Unit",
    "Order",
    "OrderError",
    "OrderParseError",
    "OrderVocabularyError",
    "parse_order",
    "format_order",
    "legal_orders",
    "unit_legal_orders",
    "is_admissible",
    "convoy_reach",
    "COASTS",
]

COASTS = frozenset({"NC", "SC", "EC", "WC"})


class OrderKind(str, enum.Enum):
    HOLD = "hold"
    MOVE = "move"
    SUPPORT_HOLD = "support_hold"
    SUPPORT_MOVE = "support_move"
    CONVOY = "convoy"
    RETREAT = "retreat"
    DISBAND = "disband"
    BUILD = "build"


class OrderError(ValueError):
    """Base class for malformed orders."""


class OrderParseError(OrderError):
    def __init__(self, message: str, position: int, expected: str | None = None):
        self.position = position
        self.expected = expected
        hint = f" (expected {expected})" if expected else ""
        super().__init__(f"{message} at position {position}{hint}")


class OrderVocabularyError(OrderError):
    def __init__(self, token: str, position: int):
        self.token = token
        self.position = position
        super().__init__(f"unknown province {token!r} at position {position}")


@dataclass(frozen=True, order=True)
class Unit:
    power: str | None
    kind: UnitKind
    location: str

    @property
    def province(self) -> str:
        return province_of(self.location)

    def __str__(self) -> str:
        return f"{self.kind.value} {self.location}"


_NEEDS = {
    OrderKind.HOLD: {"unit"},
    OrderKind.MOVE: {"unit", "target"},
    OrderKind.SUPPORT_HOLD: {"unit", "aux_kind", "aux_from"},
    OrderKind.SUPPORT_MOVE: {"unit", "aux_kind", "aux_from", "aux_to"},
    OrderKind.CONVOY: {"unit", "aux_kind", "aux_from", "aux_to"},
    OrderKind.RETREAT: {"unit", "target"},
    OrderKind.DISBAND: {"unit"},
    OrderKind.BUILD: {"target", "build_kind"},
}
_OPTIONAL_FIELDS = ("unit", "target", "aux_kind", "aux_from", "aux_to", "build_kind")


@dataclass(frozen=True)
class Order:
    """One command. Fields not used by ``kind`` must be ``None``."""

    kind: OrderKind
    power: str | None = None
    unit: Unit | None = None
    target: str | None = None
    aux_kind: UnitKind | None = None
    aux_from: str | None = None
    aux_to: str | None = None
    build_kind: UnitKind | None = None

    def __post_init__(self) -> None:
        required = _NEEDS[self.kind]
        for name in _OPTIONAL_FIELDS:
            present = getattr(self, name) is not None
            if present != (name in required):
                state = "requires" if name in required else "does not take"
                raise OrderError(f"{self.kind.value} order {state} field {name!r}")
        if self.unit is not None and self.power is not None and self.unit.power not in (None, self.power):
            raise OrderError("order power differs from unit power")
        if self.kind is OrderKind.CONVOY and self.aux_kind is not UnitKind.ARMY:
            raise OrderError("only armies are convoyed")

    @property
    def location(self) -> str:
        """Province the order is issued from (build site for builds)."""
        return self.unit.province if self.unit is not None else province_of(self.target)

    def __str__(self) -> str:
        return format_order(self)


# --------------------------------------------------------------------- grammar

_TOKEN_RE = re.compile(r"[A-Za-z]+(?:/[A-Za-z]*)?|-|\S")


def _tokenize(text: str) -> list[tuple[str, int]]:
    return [(m.group(0).upper(), m.start()) for m in _TOKEN_RE.finditer(text)]


class _Parser:
    def __init__(self, text: str, graph: MapGraph | None):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0
        self.graph = graph

    def _peek(self) -> tuple[str, int] | None:
        return self.tokens[self.i] if self.i < len(self.tokens) else None

    def _fail(self, message: str, expected: str) -> OrderParseError:
        tok = self._peek()
        pos = tok[1] if tok else len(self.text)
        found = f"unexpected {tok[0]!r}" if tok else "unexpected end of order"
        return OrderParseError(f"{message}: {found}", pos, expected)

    def take(self, *options: str, what: str) -> str:
        tok = self._peek()
        if tok is None or tok[0] not in options:
            raise self._fail("syntax error", what)
        self.i += 1
        return tok[0]

    def kind(self) -> UnitKind:
        return UnitKind(self.take("A", "F", what="unit type A or F"))

    def location(self) -> str:
        tok = self._peek()
        if tok is None or not re.fullmatch(r"[A-Z]{3}(/[A-Z]*)?", tok[0]):
            raise self._fail("syntax error", "three-letter province code")
        word, pos = tok
        code, _, coast = word.partition("/")
        if "/" in word and coast not in COASTS:
            raise OrderParseError(f"bad coast {coast!r}", pos + 4, "coast NC, SC, EC or WC")
        if self.graph is not None and code not in self.graph.provinces:
            raise OrderVocabularyError(code, pos)
        self.i += 1
        return word

    def end(self) -> None:
        if self._peek() is not None:
            raise self._fail("trailing input", "end of order")

    def order(self, power: str | None) -> Order:
        if self._peek() is None:
            raise self._fail("empty order", "unit type or BUILD")
        if self._peek()[0] == "BUILD":
            self.i += 1
            bk = self.kind()
            loc = self.location()
            self.end()
            return Order(OrderKind.BUILD, power=power, target=loc, build_kind=bk)

        unit = Unit(power, self.kind(), self.location())
        verb = self.take("H", "-", "S", "C", "R", "D", what="H, -, S, C, R or D")
        if verb == "H":
            result = Order(OrderKind.HOLD, power=power, unit=unit)
        elif verb == "-":
            result = Order(OrderKind.MOVE, power=power, unit=unit, target=self.location())
        elif verb == "R":
            result = Order(OrderKind.RETREAT, power=power, unit=unit, target=self.location())
        elif verb == "D":
            result = Order(OrderKind.DISBAND, power=power, unit=unit)
        elif verb == "S":
            ak = self.kind()
            src = self.location()
            if self._peek() is not None and self._peek()[0] == "-":
                self.i += 1
                result = Order(OrderKind.SUPPORT_MOVE, power=power, unit=unit, aux_kind=ak,
                               aux_from=src, aux_to=self.location())
            else:
                result = Order(OrderKind.SUPPORT_HOLD, power=power, unit=unit, aux_kind=ak, aux_from=src)
        else:
            ak = UnitKind(self.take("A", what="A (only armies are convoyed)"))
            src = self.location()
            self.take("-", what="-")
            result = Order(OrderKind.CONVOY, power=power, unit=unit, aux_kind=ak,
                           aux_from=src, aux_to=self.location())
        self.end()
        return result


def parse_order(text: str, power: str | None = None, graph: MapGraph | None = None) -> Order:
    """Parse one order string.

    ``power`` is attached to the result (the text form carries no power).
    Province codes are checked against ``graph`` (the standard board by default).
    """
    return _Parser(text, graph if graph is not None else load_standard_map()).order(power)


def format_order(order: Order) -> str:
    k = order.kind
    if k is OrderKind.BUILD:
        return f"BUILD {order.build_kind.value} {order.target}"
    head = f"{order.unit.kind.value} {order.unit.location}"
    if k is OrderKind.HOLD:
        return f"{head} H"
    if k is OrderKind.MOVE:
        return f"{head} - {order.target}"
    if k is OrderKind.RETREAT:
        return f"{head} R {order.target}"
    if k is OrderKind.DISBAND:
        return f"{head} D"
    if k is OrderKind.SUPPORT_HOLD:
        return f"{head} S {order.aux_kind.value} {order.aux_from}"
    if k is OrderKind.SUPPORT_MOVE:
        return f"{head} S {order.aux_kind.value} {order.aux_from} - {order.aux_to}"
    return f"{head} C A {order.aux_from} - {order.aux_to}"


# ------------------------------------------------------------------- legality

def convoy_reach(graph: MapGraph, fleet_seas: Iterable[str], origin: str) -> tuple[frozenset[str], frozenset[str]]:
    """Seas usable to convoy an army from ``origin`` and the coastal provinces it could land in.

    ``fleet_seas`` are the sea provinces that currently hold a fleet.
    """
    seas = set(fleet_seas)
    start = province_of(origin)
    if graph.provinces[start].terrain is not Terrain.COASTAL:
        return frozenset(), frozenset()
    frontier = [s for loc in graph.provinces[start].fleet_locations
                for s in (province_of(x) for x in graph.fleet_adjacency.get(loc, ())) if s in seas]
    reached: set[str] = set()
    while frontier:
        sea = frontier.pop()
        if sea in reached:
            continue
        reached.add(sea)
        for nxt in graph.fleet_adjacency.get(sea, ()):
            if province_of(nxt) in seas and province_of(nxt) not in reached:
                frontier.append(province_of(nxt))
    landing = {
        province_of(x)
        for sea in reached
        for x in graph.fleet_adjacency.get(sea, ())
        if graph.provinces[province_of(x)].terrain is Terrain.COASTAL
    }
    landing.discard(start)
    return frozenset(reached), frozenset(landing)


class _MoveIndex:
    """Per-state cache of where each unit could move (province level)."""

    def __init__(self, state: "GameState"):
        self.state = state
        graph = state.graph
        self.fleet_seas = frozenset(
            u.province for u in state.units
            if u.kind is UnitKind.FLEET and graph.provinces[u.province].terrain is Terrain.SEA
        )
        self.direct: dict[Unit, frozenset[str]] = {}
        self.convoy_seas: dict[Unit, frozenset[str]] = {}
        self.convoy_dest: dict[Unit, frozenset[str]] = {}
        for u in state.units:
            self.direct[u] = adjacent(graph, u.location, u.kind)
            if u.kind is UnitKind.ARMY:
                seas, dest = convoy_reach(graph, self.fleet_seas, u.location)
                self.convoy_seas[u] = seas
                self.convoy_dest[u] = dest
            else:
                self.convoy_seas[u] = frozenset()
                self.convoy_dest[u] = frozenset()

    def reach(self, unit: Unit) -> frozenset[str]:
        """Province codes the unit could attempt to move into."""
        return frozenset(province_of(x) for x in self.direct[unit]) | self.convoy_dest[unit]

    def support_reach(self, unit: Unit) -> frozenset[str]:
        return frozenset(province_of(x) for x in self.direct[unit])


def _index(state: "GameState") -> _MoveIndex:
    idx = state.__dict__.get("_move_index")
    if idx is None:
        idx = _MoveIndex(state)
        state.__dict__["_move_index"] = idx
    return idx


def _movement_orders(state: "GameState", unit: Unit) -> list[Order]:
    idx = _index(state)
    p = unit.power
    out = [Order(OrderKind.HOLD, power=p, unit=unit)]
    for dest in sorted(idx.direct[unit]):
        out.append(Order(OrderKind.MOVE, power=p, unit=unit, target=dest))
    for dest in sorted(idx.convoy_dest[unit] - {province_of(d) for d in idx.direct[unit]}):
        out.append(Order(OrderKind.MOVE, power=p, unit=unit, target=dest))

    my_reach = idx.support_reach(unit)
    for other in state.units:
        if other == unit:
            continue
        if other.province in my_reach:
            out.append(Order(OrderKind.SUPPORT_HOLD, power=p, unit=unit,
                             aux_kind=other.kind, aux_from=other.location))
        for dest in sorted(idx.reach(other) & my_reach - {unit.province}):
            out.append(Order(OrderKind.SUPPORT_MOVE, power=p, unit=unit, aux_kind=other.kind,
                             aux_from=other.location, aux_to=dest))

    graph = state.graph
    if unit.kind is UnitKind.FLEET and graph.provinces[unit.province].terrain is Terrain.SEA:
        for army in state.units:
            if army.kind is not UnitKind.ARMY or unit.province not in idx.convoy_seas[army]:
                continue
            for dest in sorted(idx.convoy_dest[army]):
                out.append(Order(OrderKind.CONVOY, power=p, unit=unit, aux_kind=UnitKind.ARMY,
                                 aux_from=army.location, aux_to=dest))
    return out


def retreat_destinations(state: "GameState", unit: Unit, attacker_origin: str | None) -> list[str]:
    occupied = {u.province for u in state.units}
    blocked = occupied | set(state.contested)
    if attacker_origin is not None:
        blocked.add(province_of(attacker_origin))
    return sorted(d for d in adjacent(state.graph, unit.location, unit.kind) if province_of(d) not in blocked)


def _adjustment_orders(state: "GameState", power: str) -> list[Order]:
    delta = state.sc_count(power) - len(state.units_of(power))
    out: list[Order] = []
    if delta > 0:
        occupied = {u.province for u in state.units}
        for code in state.graph.home_centers(power):
            if state.ownership.get(code) != power or code in occupied:
                continue
            prov = state.graph.provinces[code]
            out.append(Order(OrderKind.BUILD, power=power, target=code, build_kind=UnitKind.ARMY))
            if prov.terrain is Terrain.COASTAL:
                for loc in prov.fleet_locations:
                    out.append(Order(OrderKind.BUILD, power=power, target=loc, build_kind=UnitKind.FLEET))
    elif delta < 0:
        out = [Order(OrderKind.DISBAND, power=power, unit=u) for u in state.units_of(power)]
    return out


def unit_legal_orders(state: "GameState", unit: Unit) -> list[Order]:
    """Admissible orders for one unit in the current phase."""
    if state.phase.is_movement:
        return _movement_orders(state, unit)
    if state.phase.is_retreat:
        for d in state.dislodged:
            if d.unit == unit:
                return [Order(OrderKind.RETREAT, power=unit.power, unit=unit, target=t)
                        for t in retreat_destinations(state, unit, d.attacker_origin)] + [
                    Order(OrderKind.DISBAND, power=unit.power, unit=unit)]
        return []
    return [o for o in _adjustment_orders(state, unit.power) if o.unit == unit]


def legal_orders(state: "GameState", power: str) -> list[Order]:
    """Every admissible order for ``power`` in the current phase, in canonical text order.

    Eliminated powers get an empty list.
    """
    if state.is_eliminated(power):
        return []
    if state.phase.is_movement:
        out = [o for u in state.units_of(power) for o in _movement_orders(state, u)]
    elif state.phase.is_retreat:
        out = [o for d in state.dislodged if d.unit.power == power for o in unit_legal_orders(state, d.unit)]
    else:
        out = _adjustment_orders(state, power)
    return sorted(set(out), key=format_order)


def is_admissible(state: "GameState", order: Order) -> bool:
    """Cheap legality test for a single order in the current phase."""
    if state.phase.is_movement:
        unit = order.unit
        if unit is None or order.kind not in (
            OrderKind.HOLD, OrderKind.MOVE, OrderKind.SUPPORT_HOLD, OrderKind.SUPPORT_MOVE, OrderKind.CONVOY
        ):
            return False
        if state.unit_at(unit.province) != unit:
            return False
        idx = _index(state)
        if order.kind is OrderKind.HOLD:
            return True
        if order.kind is OrderKind.MOVE:
            if order.target in idx.direct[unit]:
                return True
            return "/" not in order.target and order.target in idx.convoy_dest[unit]
        other = state.unit_at(province_of(order.aux_from))
        if other is None or other == unit or other.kind is not order.aux_kind or other.location != order.aux_from:
            return False
        if order.kind is OrderKind.SUPPORT_HOLD:
            return other.province in idx.support_reach(unit)
        to = province_of(order.aux_to)
        if order.kind is OrderKind.SUPPORT_MOVE:
            return to != unit.province and to in idx.support_reach(unit) and to in idx.reach(other)
        return (unit.kind is UnitKind.FLEET and other.kind is UnitKind.ARMY
                and unit.province in idx.convoy_seas[other] and to in idx.convoy_dest[other]
                and "/" not in order.aux_to)
    if order.power is None:
        return False
    return order in set(legal_orders(state, order.power))


def orders_from_text(lines: Iterable[str], power: str, graph: MapGraph | None = None) -> list[Order]:
    return [parse_order(line, power=power, graph=graph) for line in lines]
