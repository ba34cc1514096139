"""Board topology: provinces, coasts, supply centres and unit-type adjacency.

Maps are read from a small line-oriented text format (see ``data/standard.map``
for the documented schema). A loaded :class:`MapGraph` is never mutated, so one
instance can be shared by any number of concurrently running games.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping

__all__ = [
    "Terrain",
    "UnitKind",
    "Province",
    "MapGraph",
    "MapLoadError",
    "MapLookupError",
    "parse_map",
    "load_map",
    "load_standard_map",
    "adjacent",
    "validate_map",
    "province_of",
    "split_location",
]


class Terrain(str, enum.Enum):
    LAND = "land"
    SEA = "sea"
    COASTAL = "coastal"


class UnitKind(str, enum.Enum):
    ARMY = "A"
    FLEET = "F"


class MapLoadError(ValueError):
    """Raised when map data cannot be parsed or fails validation."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class MapLookupError(KeyError):
    """Unknown province or coast, or a coast used where none applies."""

    def __str__(self) -> str:  # KeyError quotes its argument otherwise
        return str(self.args[0]) if self.args else ""


def split_location(location: str) -> tuple[str, str | None]:
    code, _, coast = location.upper().partition("/")
    return code, (coast or None)


def province_of(location: str) -> str:
    return location.split("/", 1)[0].upper()


@dataclass(frozen=True)
class Province:
    code: str
    name: str
    terrain: Terrain
    is_supply_center: bool = False
    home_power: str | None = None
    coasts: frozenset[str] = frozenset()

    @property
    def fleet_locations(self) -> tuple[str, ...]:
        """Locations a fleet in this province may occupy."""
        if self.terrain is Terrain.LAND:
            return ()
        if self.coasts:
            return tuple(f"{self.code}/{c}" for c in sorted(self.coasts))
        return (self.code,)


@dataclass(frozen=True, eq=False)
class MapGraph:
    name: str
    powers: tuple[str, ...]
    provinces: Mapping[str, Province]
    army_adjacency: Mapping[str, frozenset[str]]
    fleet_adjacency: Mapping[str, frozenset[str]]
    opening: tuple[tuple[str, UnitKind, str], ...] = ()
    version: int = 1
    _home: Mapping[str, tuple[str, ...]] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        home: dict[str, list[str]] = {p: [] for p in self.powers}
        for code in sorted(self.provinces):
            prov = self.provinces[code]
            if prov.home_power is not None and prov.is_supply_center:
                home.setdefault(prov.home_power, []).append(code)
        object.__setattr__(self, "_home", MappingProxyType({k: tuple(v) for k, v in home.items()}))

    @property
    def supply_centers(self) -> tuple[str, ...]:
        return tuple(c for c in sorted(self.provinces) if self.provinces[c].is_supply_center)

    def home_centers(self, power: str) -> tuple[str, ...]:
        return self._home.get(power, ())

    def province(self, location: str) -> Province:
        code = province_of(location)
        try:
            return self.provinces[code]
        except KeyError:
            raise MapLookupError(f"unknown province {code!r}") from None

    def is_location(self, location: str) -> bool:
        """True for a province code or a valid ``CODE/COAST`` location."""
        code, coast = split_location(location)
        prov = self.provinces.get(code)
        if prov is None:
            return False
        return coast is None or coast in prov.coasts

    def neighbours(self, province: str) -> frozenset[str]:
        """Province-level neighbours by either unit type."""
        code = province_of(province)
        out = set(self.army_adjacency.get(code, ()))
        for loc in self.provinces[code].fleet_locations:
            out.update(province_of(x) for x in self.fleet_adjacency.get(loc, ()))
        return frozenset(out)

    def distances_from(self, sources: Iterable[str]) -> dict[str, int]:
        """Breadth-first province distances over the union of both adjacency relations."""
        dist: dict[str, int] = {}
        queue: deque[str] = deque()
        for s in sources:
            s = province_of(s)
            if s not in dist:
                dist[s] = 0
                queue.append(s)
        while queue:
            cur = queue.popleft()
            for nxt in self.neighbours(cur):
                if nxt not in dist:
                    dist[nxt] = dist[cur] + 1
                    queue.append(nxt)
        return dist


def adjacent(graph: MapGraph, location: str, kind: UnitKind | str) -> frozenset[str]:
    """Destinations a unit of ``kind`` at ``location`` can reach in one move.

    Army destinations are bare province codes. Fleet destinations carry a coast
    suffix when the target province has more than one coast.
    """
    kind = UnitKind(kind)
    code, coast = split_location(location)
    prov = graph.province(code)
    if coast is not None and coast not in prov.coasts:
        raise MapLookupError(f"{code} has no coast {coast!r}")
    if kind is UnitKind.ARMY:
        if coast is not None:
            raise MapLookupError(f"armies do not occupy coasts ({location})")
        return graph.army_adjacency.get(code, frozenset())
    if prov.terrain is Terrain.LAND:
        return frozenset()
    if prov.coasts and coast is None:
        raise MapLookupError(f"fleet in {code} needs a coast ({', '.join(sorted(prov.coasts))})")
    key = f"{code}/{coast}" if coast else code
    return graph.fleet_adjacency.get(key, frozenset())


def validate_map(
    graph: MapGraph,
    *,
    supply_centers: int | None = 34,
    power_count: int | None = 7,
) -> list[str]:
    """Return one message per violated invariant; empty when the map is sound.

    Pass ``supply_centers=None`` / ``power_count=None`` for non-standard boards.
    """
    report: list[str] = []
    provs = graph.provinces
    if power_count is not None and len(graph.powers) != power_count:
        report.append(f"expected {power_count} powers, found {len(graph.powers)}")
    if len(set(graph.powers)) != len(graph.powers):
        report.append("duplicate power identifiers")

    for code, prov in sorted(provs.items()):
        if prov.terrain is Terrain.SEA and prov.is_supply_center:
            report.append(f"sea province {code} is a supply center")
        if prov.coasts and prov.terrain is not Terrain.COASTAL:
            report.append(f"province {code} has named coasts but is {prov.terrain.value}")
        if prov.home_power is not None:
            if prov.home_power not in graph.powers:
                report.append(f"province {code} home power {prov.home_power} is not a power")
            if not prov.is_supply_center:
                report.append(f"home province {code} is not a supply center")

    n_sc = sum(p.is_supply_center for p in provs.values())
    if supply_centers is not None and n_sc != supply_centers:
        report.append(f"expected {supply_centers} supply centers, found {n_sc}")

    for src, dests in sorted(graph.army_adjacency.items()):
        if src not in provs:
            report.append(f"army adjacency names unknown province {src}")
            continue
        if provs[src].terrain is Terrain.SEA and dests:
            report.append(f"army adjacency from sea province {src}")
        for dst in sorted(dests):
            if dst not in provs:
                report.append(f"army edge {src}-{dst} names unknown province {dst}")
            elif provs[dst].terrain is Terrain.SEA:
                report.append(f"army edge {src}-{dst} enters sea")
            elif src not in graph.army_adjacency.get(dst, ()):
                report.append(f"asymmetric army edge {src}->{dst}")

    valid_fleet_locs = {loc for p in provs.values() for loc in p.fleet_locations}
    for src, dests in sorted(graph.fleet_adjacency.items()):
        if src not in valid_fleet_locs:
            report.append(f"fleet adjacency names invalid location {src}")
            continue
        for dst in sorted(dests):
            if dst not in valid_fleet_locs:
                report.append(f"fleet edge {src}-{dst} names invalid location {dst}")
            elif src not in graph.fleet_adjacency.get(dst, ()):
                report.append(f"asymmetric fleet edge {src}->{dst}")

    occupied: set[str] = set()
    for power, kind, loc in graph.opening:
        if power not in graph.powers:
            report.append(f"opening unit for unknown power {power}")
        ok = (loc in valid_fleet_locs) if kind is UnitKind.FLEET else (
            loc in provs and provs[loc].terrain is not Terrain.SEA)
        if not ok:
            report.append(f"opening unit {kind.value} {loc} is not a legal location")
        if province_of(loc) in occupied:
            report.append(f"opening units share province {province_of(loc)}")
        occupied.add(province_of(loc))
    return report


def parse_map(text: str) -> MapGraph:
    """Parse map text without validating invariants."""
    name, version, powers = "unnamed", 1, ()
    provinces: dict[str, Province] = {}
    army: dict[str, set[str]] = {}
    fleet: dict[str, set[str]] = {}
    opening: list[tuple[str, UnitKind, str]] = []

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head, *rest = line.split()
        try:
            if head == "version":
                version = int(rest[0])
            elif head == "name":
                name = rest[0]
            elif head == "powers":
                powers = tuple(p.upper() for p in rest)
            elif head == "province":
                code, terrain, sc, home, coasts = (x for x in rest[:5])
                code = code.upper()
                if code in provinces:
                    raise MapLoadError(f"duplicate province {code}", lineno)
                provinces[code] = Province(
                    code=code,
                    name=" ".join(rest[5:]) or code,
                    terrain=Terrain(terrain.lower()),
                    is_supply_center={"sc": True, "-": False}[sc.lower()],
                    home_power=None if home == "-" else home.upper(),
                    coasts=frozenset() if coasts == "-" else frozenset(c.upper() for c in coasts.split(",")),
                )
                army.setdefault(code, set())
            elif head == "army":
                army.setdefault(rest[0].upper(), set()).update(x.upper() for x in rest[1:])
            elif head == "fleet":
                fleet.setdefault(rest[0].upper(), set()).update(x.upper() for x in rest[1:])
            elif head == "unit":
                opening.append((rest[0].upper(), UnitKind(rest[1].upper()), rest[2].upper()))
            else:
                raise MapLoadError(f"unknown directive {head!r}", lineno)
        except MapLoadError:
            raise
        except (IndexError, ValueError, KeyError) as exc:
            raise MapLoadError(f"malformed {head} record: {raw.strip()!r} ({exc})", lineno) from None

    return MapGraph(
        name=name,
        version=version,
        powers=powers,
        provinces=MappingProxyType(provinces),
        army_adjacency=MappingProxyType({k: frozenset(v) for k, v in army.items()}),
        fleet_adjacency=MappingProxyType({k: frozenset(v) for k, v in fleet.items()}),
        opening=tuple(opening),
    )


def load_map(path: str | Path, **validate_kwargs) -> MapGraph:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise MapLoadError(f"cannot read map file {path}: {exc}") from None
    graph = parse_map(text)
    problems = validate_map(graph, **validate_kwargs)
    if problems:
        raise MapLoadError(f"{path}: " + "; ".join(problems))
    return graph


@lru_cache(maxsize=1)
def load_standard_map() -> MapGraph:
    ref = resources.files("richelieu") / "data" / "standard.map"
    with resources.as_file(ref) as path:
        return load_map(path)
