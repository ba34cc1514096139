import pytest

from richelieu.maps import (
    MapLoadError,
    MapLookupError,
    Terrain,
    UnitKind,
    adjacent,
    load_map,
    parse_map,
    province_of,
    split_location,
    validate_map,
)


def test_standard_map_is_sound(graph):
    assert validate_map(graph) == []
    assert len(graph.supply_centers) == 34
    assert graph.powers == ("AUSTRIA", "ENGLAND", "FRANCE", "GERMANY", "ITALY", "RUSSIA", "TURKEY")
    assert len(graph.provinces) == 75


def test_home_centres(graph):
    counts = {p: len(graph.home_centers(p)) for p in graph.powers}
    assert counts == {p: 4 if p == "RUSSIA" else 3 for p in graph.powers}
    assert graph.home_centers("ENGLAND") == ("EDI", "LON", "LVP")


def test_opening_position(graph):
    assert len(graph.opening) == 22
    assert ("RUSSIA", UnitKind.FLEET, "STP/SC") in graph.opening


def test_split_coasts(graph):
    coasted = {c: p.coasts for c, p in graph.provinces.items() if p.coasts}
    assert coasted == {"BUL": {"EC", "SC"}, "SPA": {"NC", "SC"}, "STP": {"NC", "SC"}}


def test_adjacency_is_symmetric(graph):
    for src, dests in graph.army_adjacency.items():
        for d in dests:
            assert src in graph.army_adjacency[d]
    for src, dests in graph.fleet_adjacency.items():
        for d in dests:
            assert src in graph.fleet_adjacency[d]


def test_armies_never_enter_sea(graph):
    for src, dests in graph.army_adjacency.items():
        for d in dests:
            assert graph.provinces[d].terrain is not Terrain.SEA


@pytest.mark.parametrize("loc,kind,expected,absent", [
    ("PAR", "A", {"BUR", "PIC", "BRE", "GAS"}, {"MUN"}),
    ("KIE", "F", {"BAL", "HEL", "DEN", "BER", "HOL"}, {"MUN"}),
    ("STP/NC", "F", {"BAR", "NWY"}, {"BOT"}),
    ("STP/SC", "F", {"BOT", "FIN", "LVN"}, {"BAR"}),
    ("MAO", "F", {"SPA/NC", "SPA/SC", "POR", "BRE"}, {"SPA"}),
])
def test_known_adjacencies(graph, loc, kind, expected, absent):
    got = adjacent(graph, loc, kind)
    assert expected <= got
    assert not (absent & got)


def test_inland_fleet_has_no_moves(graph):
    assert adjacent(graph, "PAR", UnitKind.FLEET) == frozenset()


def test_lookup_errors(graph):
    with pytest.raises(MapLookupError):
        adjacent(graph, "XYZ", "A")
    with pytest.raises(MapLookupError):
        adjacent(graph, "STP", "F")
    with pytest.raises(MapLookupError):
        adjacent(graph, "STP/NC", "A")
    with pytest.raises(MapLookupError):
        graph.province("QQQ")


def test_location_helpers(graph):
    assert split_location("stp/nc") == ("STP", "NC")
    assert province_of("SPA/SC") == "SPA"
    assert graph.is_location("BUL/EC") and not graph.is_location("BUL/NC")


def test_distances(graph):
    dist = graph.distances_from(["PAR"])
    assert dist["PAR"] == 0 and dist["BUR"] == 1 and dist["MUN"] == 2


TINY = """
name tiny
powers RED BLUE
province AAA coastal sc RED - Aa
province BBB land sc BLUE - Bb
province SEA sea - - - Water
army AAA BBB
army BBB AAA
fleet AAA SEA
fleet SEA AAA
unit RED A AAA
"""


def test_parse_custom_map():
    g = parse_map(TINY)
    assert g.name == "tiny"
    assert validate_map(g, supply_centers=2, power_count=2) == []
    assert adjacent(g, "AAA", "F") == {"SEA"}


def test_validate_reports_asymmetry_and_counts():
    g = parse_map(TINY.replace("army BBB AAA\n", ""))
    problems = validate_map(g)
    assert "asymmetric army edge AAA->BBB" in problems
    assert "expected 34 supply centers, found 2" in problems
    assert "expected 7 powers, found 2" in problems


def test_validate_reports_sea_centre_and_army_in_sea():
    g = parse_map(TINY.replace("province SEA sea - -", "province SEA sea sc -") + "army AAA SEA\n")
    problems = validate_map(g, supply_centers=None, power_count=None)
    assert "sea province SEA is a supply center" in problems
    assert "army edge AAA-SEA enters sea" in problems


def test_parse_errors_carry_line_numbers():
    with pytest.raises(MapLoadError) as info:
        parse_map("name x\nbogus directive\n")
    assert info.value.line == 2
    with pytest.raises(MapLoadError) as info:
        parse_map("province AAA swamp sc - - A\n")
    assert info.value.line == 1
    with pytest.raises(MapLoadError) as info:
        parse_map(TINY + "province AAA land - - - again\n")
    assert "duplicate" in str(info.value)


def test_load_map_validates(tmp_path):
    path = tmp_path / "tiny.map"
    path.write_text(TINY)
    with pytest.raises(MapLoadError):
        load_map(path)
    assert load_map(path, supply_centers=2, power_count=2).name == "tiny"
    with pytest.raises(MapLoadError):
        load_map(tmp_path / "missing.map")
