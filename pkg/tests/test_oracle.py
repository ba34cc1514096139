"""Brute-force cross-check of the movement resolver on a five-province land board.

The oracle enumerates every success/failure assignment for the moves, keeps
those that are self-consistent under the strength rules, and prefers the one
with the most successful moves (a rotation moves rather than stalls). It
shares no code with the resolver beyond the order types.
"""

import itertools
import time

import pytest

from richelieu.adjudicator import OrderOutcome, adjudicate_movement
from richelieu.maps import UnitKind, parse_map
from richelieu.orders import Order, OrderKind, Unit
from richelieu.state import GameState, Phase, PowerStatus

MICRO = """
name micro
powers PAX QUA REX
province ALP land sc PAX - Alpha
province BAY land sc QUA - Bay
province COL land - - - Col
province DUN land sc REX - Dune
province EYR land - - - Eyrie
army ALP BAY COL
army BAY ALP COL DUN
army COL ALP BAY DUN EYR
army DUN BAY COL EYR
army EYR COL DUN
"""

GRAPH = parse_map(MICRO)
PROVS = sorted(GRAPH.provinces)
ADJ = {p: set(GRAPH.army_adjacency[p]) for p in PROVS}
PATTERNS = {1: ["P"], 2: ["PP", "PQ"], 3: ["PPP", "PPQ", "PQP", "PQQ", "PQR"]}
POWER = {"P": "PAX", "Q": "QUA", "R": "REX"}


def state_for(units):
    return GameState(year=1901, phase=Phase.SPRING_MOVE,
                     ownership={sc: GRAPH.provinces[sc].home_power for sc in GRAPH.supply_centers},
                     units=tuple(units), status={p: PowerStatus.ACTIVE for p in GRAPH.powers}, graph=GRAPH)


def options(u, units):
    out = [Order(OrderKind.HOLD, power=u.power, unit=u)]
    out += [Order(OrderKind.MOVE, power=u.power, unit=u, target=d) for d in sorted(ADJ[u.location])]
    far = sorted(set(PROVS) - ADJ[u.location] - {u.location})
    if far:
        out.append(Order(OrderKind.MOVE, power=u.power, unit=u, target=far[0]))  # not adjacent
    for o in units:
        if o == u:
            continue
        if o.location in ADJ[u.location]:
            out.append(Order(OrderKind.SUPPORT_HOLD, power=u.power, unit=u, aux_kind=UnitKind.ARMY,
                             aux_from=o.location))
        for d in sorted(ADJ[o.location] & ADJ[u.location]):
            out.append(Order(OrderKind.SUPPORT_MOVE, power=u.power, unit=u, aux_kind=UnitKind.ARMY,
                             aux_from=o.location, aux_to=d))
    return out


def oracle(units, orders):
    at = {u.location: i for i, u in enumerate(units)}
    moves = [i for i, o in enumerate(orders) if o.kind is OrderKind.MOVE and o.target in ADJ[units[i].location]]
    dest = {i: orders[i].target for i in moves}
    sup_of = {}
    for i, o in enumerate(orders):
        j = at.get(o.aux_from) if o.aux_from else None
        if j is None:
            continue
        if o.kind is OrderKind.SUPPORT_HOLD and j not in dest:
            sup_of[i] = (j, units[j].location)
        elif o.kind is OrderKind.SUPPORT_MOVE and dest.get(j) == o.aux_to:
            sup_of[i] = (j, o.aux_to)

    def evaluate(ok):
        given = {}
        for s, (_, target) in sup_of.items():
            cut = False
            for m in moves:
                if dest[m] != units[s].location or units[m].power == units[s].power:
                    continue
                if units[m].location != target or ok[m]:
                    cut = True
            given[s] = not cut

        def supports(j, exclude=None):
            return sum(1 for s, (k, _) in sup_of.items() if k == j and given[s] and units[s].power != exclude)

        def h2h(i):
            j = at.get(dest[i])
            return j if j is not None and j in dest and dest[j] == units[i].location else None

        result = {}
        for i in moves:
            d = dest[i]
            j = at.get(d)
            if j is None or (j in dest and h2h(i) is None and ok[j]):
                attack = 1 + supports(i)
            elif units[j].power == units[i].power:
                attack = 0
            else:
                attack = 1 + supports(i, exclude=units[j].power)
            if h2h(i) is not None:
                resist = 1 + supports(j)
            elif j is None:
                resist = 0
            elif j in dest:
                resist = 0 if ok[j] else 1
            else:
                resist = 1 + supports(j)
            prevents = []
            for k in moves:
                if k == i or dest[k] != d:
                    continue
                partner = h2h(k)
                prevents.append(0 if partner is not None and ok[partner] else 1 + supports(k))
            result[i] = attack > resist and all(attack > p for p in prevents)
        return result, given

    best = None
    for bits in itertools.product((False, True), repeat=len(moves)):
        ok = dict(zip(moves, bits))
        result, given = evaluate(ok)
        if result == ok and (best is None or sum(bits) > sum(best[0].values())):
            best = (ok, given)
    assert best is not None, "land-only positions always have a consistent resolution"
    ok, given = best

    entered = {dest[i]: i for i in moves if ok[i]}
    final, dislodged = set(), set()
    for i, u in enumerate(units):
        if ok.get(i):
            final.add((u.power, dest[i]))
        elif u.location in entered:
            dislodged.add((u.power, u.location, units[entered[u.location]].location))
        else:
            final.add((u.power, u.location))
    outcome = {}
    for i, o in enumerate(orders):
        if i in dest:
            outcome[i] = OrderOutcome.SUCCEEDS if ok[i] else OrderOutcome.FAILS
        elif o.kind in (OrderKind.SUPPORT_HOLD, OrderKind.SUPPORT_MOVE):
            outcome[i] = (OrderOutcome.FAILS if i not in sup_of
                          else OrderOutcome.SUCCEEDS if given[i] else OrderOutcome.SUPPORT_CUT)
        elif o.kind is OrderKind.MOVE:
            outcome[i] = OrderOutcome.FAILS
        else:
            outcome[i] = OrderOutcome.FAILS if units[i].location in entered else OrderOutcome.SUCCEEDS
    return final, dislodged, outcome


def positions():
    for n, patterns in PATTERNS.items():
        for locs in itertools.combinations(PROVS, n):
            for pattern in patterns:
                yield [Unit(POWER[c], UnitKind.ARMY, loc) for c, loc in zip(pattern, locs)]


def test_micro_map_is_symmetric():
    for a, dests in ADJ.items():
        assert all(a in ADJ[b] for b in dests)


def test_resolver_matches_oracle_exhaustively():
    start = time.perf_counter()
    checked = 0
    for units in positions():
        state = state_for(units)
        ordered = state.units
        for combo in itertools.product(*(options(u, ordered) for u in ordered)):
            res = adjudicate_movement(state, combo)
            final, dis, outcome = oracle(list(ordered), list(combo))
            got_final = {(u.power, u.location) for u in res.units}
            got_dis = {(d.unit.power, d.unit.location, d.attacker_origin) for d in res.dislodged}
            assert got_final == final, combo
            assert got_dis == dis, combo
            for i, o in enumerate(combo):
                assert res.outcomes[o] is outcome[i], (combo, o)
            checked += 1
    assert checked > 10_000
    assert time.perf_counter() - start < 60


@pytest.mark.parametrize("pattern", ["PPP", "PQR"])
def test_rotation_on_micro_map(pattern):
    units = [Unit(POWER[c], UnitKind.ARMY, loc) for c, loc in zip(pattern, ["ALP", "BAY", "COL"])]
    state = state_for(units)
    by = {u.location: u for u in state.units}
    combo = [Order(OrderKind.MOVE, power=by[a].power, unit=by[a], target=b)
             for a, b in [("ALP", "BAY"), ("BAY", "COL"), ("COL", "ALP")]]
    res = adjudicate_movement(state, combo)
    assert all(v is OrderOutcome.SUCCEEDS for v in res.outcomes.values())
