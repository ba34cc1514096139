import pytest

from richelieu.maps import load_standard_map
from richelieu.orders import Unit, parse_order
from richelieu.maps import UnitKind
from richelieu.state import Dislodgement, GameState, Phase, PowerStatus


@pytest.fixture(scope="session")
def graph():
    return load_standard_map()


def make_state(units, phase=Phase.SPRING_MOVE, ownership=None, dislodged=(), contested=(), year=1901):
    """Board from ``{"FRANCE": ["A PAR", "F BRE"], ...}`` on the standard map.

    ``ownership`` overrides individual centres; the rest start at their home owner.
    ``dislodged`` takes ``(power, "A BUR", attacker_origin)`` triples.
    """
    g = load_standard_map()
    owners = {sc: g.provinces[sc].home_power for sc in g.supply_centers}
    owners.update(ownership or {})
    placed = []
    for power, specs in units.items():
        for spec in specs:
            kind, loc = spec.split()
            placed.append(Unit(power, UnitKind(kind), loc))
    dis = tuple(Dislodgement(Unit(p, UnitKind(s.split()[0]), s.split()[1]), origin) for p, s, origin in dislodged)
    counts = {p: sum(1 for o in owners.values() if o == p) for p in g.powers}
    status = {p: PowerStatus.ACTIVE if counts[p] else PowerStatus.ELIMINATED for p in g.powers}
    return GameState(year=year, phase=phase, ownership=owners, units=tuple(placed), status=status,
                     dislodged=dis, contested=frozenset(contested), graph=g)


def orders(spec):
    """Orders from ``{"FRANCE": ["A PAR - BUR"], ...}``."""
    return [parse_order(text, power=power) for power, texts in spec.items() for text in texts]


def unit(power, text):
    kind, loc = text.split()
    return Unit(power, UnitKind(kind), loc)
