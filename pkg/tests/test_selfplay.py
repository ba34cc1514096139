import itertools
import random
from collections import Counter
from decimal import Decimal

import pytest
import tomli
from scipy.stats import chisquare

from richelieu.agent import Toggles
from richelieu.memory import MemoryStore, load
from richelieu.replay import read_replay, write_replay
from richelieu.selfplay import (
    ABLATION_ROWS,
    AgentSpec,
    ConfigError,
    GameConfig,
    ablation_table,
    assign_powers,
    run_ablation,
    run_evaluation,
    run_game,
    run_selfplay,
)

POWERS = ("AUSTRIA", "ENGLAND", "FRANCE", "GERMANY", "ITALY", "RUSSIA", "TURKEY")

CONFIG = """
[game]
seed = 4
max_year = 1903
rounds = 2
press = "press"

[agents.default]
kind = "richelieu"
backend = "heuristic"

[agents.FRANCE]
kind = "random"

[agents.ITALY]
kind = "richelieu"
backend = "heuristic"
label = "lite"
toggles = { reflection = false, use_selfplay_memory = false }
"""


def movement_phases(replay):
    return sum(1 for p in replay.phases if p["phase"].endswith("Move"))


# ------------------------------------------------------------------- config

def test_config_from_toml():
    cfg = GameConfig.from_mapping(tomli.loads(CONFIG))
    assert (cfg.seed, cfg.max_year, cfg.rounds, cfg.press) == (4, 1903, 2, True)
    assert cfg.spec_for("FRANCE").kind == "random"
    assert cfg.spec_for("ITALY").name == "lite" and not cfg.spec_for("ITALY").toggles.reflection
    assert cfg.spec_for("RUSSIA") == AgentSpec()


def test_no_press_forces_zero_rounds():
    assert GameConfig(press=False, rounds=3).rounds == 0
    assert GameConfig.from_mapping({"game": {"press": "no_press"}}).rounds == 0


@pytest.mark.parametrize("data", [
    {"game": {"colour": 1}},
    {"extras": {}},
    {"game": {"press": "loud"}},
    {"game": {"max_year": 1800}},
    {"game": {"rounds": -1}},
    {"agents": {"default": {"kind": "oracle"}}},
    {"agents": {"default": {"toggles": {"telepathy": True}}}},
    {"agents": {"default": {"backend": "nowhere"}}},
    {"backends": {"x": {"kind": "psychic"}}},
])
def test_bad_configs_rejected(data):
    with pytest.raises(ConfigError):
        GameConfig.from_mapping(data)


# --------------------------------------------------------------------- games

def test_random_game_reaches_max_year_and_replays():
    cfg = GameConfig(seed=2, max_year=1905, default=AgentSpec("random"))
    a, b = run_game(cfg), run_game(cfg)
    assert a.result.year <= 1906
    assert a.replay.dumps() == b.replay.dumps()


def test_richelieu_games_are_reproducible():
    cfg = GameConfig(seed=9, max_year=1903)
    a, b = run_game(cfg), run_game(cfg)
    assert a.result == b.result
    assert a.replay.dumps() == b.replay.dumps()
    assert a.replay.messages


def test_no_press_replay_is_silent():
    run = run_game(GameConfig(seed=1, max_year=1903, press=False))
    assert run.replay.messages == []


def test_replay_round_trip(tmp_path):
    run = run_game(GameConfig(seed=3, max_year=1902))
    path = tmp_path / "r.jsonl"
    write_replay(path, run.replay)
    back = read_replay(path)
    assert back.dumps() == run.replay.dumps()
    assert back.result == run.result
    assert back.seed == 3 and back.config_digest == run.replay.config_digest


def test_failing_backend_game_completes_silently():
    run = run_game(GameConfig(seed=1, max_year=1903, default=AgentSpec(backend="failing")))
    assert run.replay.messages == []
    for phase in run.replay.phases:
        for orders_ in phase["orders"].values():
            assert all(o.endswith(" H") for o in orders_)
    assert run.result.year == 1904
    assert run.degraded


def test_memory_logged_once_per_agent_and_movement_turn():
    run = run_game(GameConfig(seed=5, max_year=1903))
    assert run.records_added == 7 * movement_phases(run.replay)


# ------------------------------------------------------------------ selfplay

def test_selfplay_memory_count(tmp_path):
    cfg = GameConfig(seed=11, max_year=1902)
    path = tmp_path / "mem.jsonl"
    report, memory = run_selfplay(2, cfg, path)
    replays = [run_game(GameConfig(seed=11 + i, max_year=1902), game_id=f"selfplay-11-{i}").replay for i in range(2)]
    expected = sum(7 * movement_phases(r) for r in replays)
    assert len(memory) == expected == sum(report.records_added)
    assert len(load(path)) == expected
    assert not (tmp_path / "mem.jsonl.shards").exists()


def test_selfplay_zero_games_changes_nothing():
    memory = MemoryStore()
    report, out = run_selfplay(0, GameConfig(max_year=1902), memory=memory)
    assert report.results == [] and len(out) == 0 and out is memory


def test_selfplay_workers_match_sequential():
    cfg = GameConfig(seed=1, max_year=1902)
    seq, mem_a = run_selfplay(3, cfg, workers=1)
    par, mem_b = run_selfplay(3, cfg, workers=2)
    assert len(mem_a) == len(mem_b)
    assert [r.sc_counts for r in seq.results][:2] == [r.sc_counts for r in par.results][:2]


# ----------------------------------------------------------------- evaluation

def test_assignment_is_uniform_over_three_power_sides():
    rng = random.Random(0)
    sides = list(itertools.combinations(POWERS, 3))
    counts = Counter()
    who = Counter()
    n = 35 * 200
    for _ in range(n):
        three, w = assign_powers(rng, POWERS)
        counts[tuple(sorted(three))] += 1
        who[w] += 1
    assert set(counts) == set(sides)
    assert chisquare([counts[s] for s in sides]).pvalue > 0.001
    assert chisquare([who["a"], who["b"]]).pvalue > 0.001


def test_evaluation_splits_three_and_four():
    report = run_evaluation(AgentSpec("richelieu"), AgentSpec("random"), 4, seed=1, max_year=1902)
    for res in report.results:
        assert sorted(Counter(res.labels.values()).values()) == [3, 4]
    rates = report.reports
    assert set(rates) == {"richelieu", "random"}
    assert all(r.rates.total() == 1 for r in rates.values())


def test_evaluation_is_reproducible():
    a = run_evaluation(AgentSpec("heuristic"), AgentSpec("random"), 3, seed=7, max_year=1902)
    b = run_evaluation(AgentSpec("heuristic"), AgentSpec("random"), 3, seed=7, max_year=1902)
    assert a.rate_rows() == b.rate_rows() and a.results == b.results


def test_identical_models_are_told_apart():
    report = run_evaluation(AgentSpec("random"), AgentSpec("random"), 2, seed=0, max_year=1902)
    assert set(report.reports) == {"random_a", "random_b"}


def test_rate_rows_have_slot_and_average_lines():
    report = run_evaluation(AgentSpec("random"), AgentSpec("heuristic"), 6, seed=2, max_year=1902)
    names = [r[0] for r in report.rate_rows()[1:]]
    assert "random" in names and "heuristic" in names
    assert len(names) > 2


# ------------------------------------------------------------------- ablation

def test_ablation_has_six_rows_summing_to_one():
    rows = run_ablation(2, seed=0, max_year=1902, selfplay_games=1)
    assert [r.name for r in rows] == list(ABLATION_ROWS)
    assert [r.toggles for r in rows] == [Toggles.first(i) for i in range(6)]
    table = ablation_table(rows)
    assert len(table) == 7
    for row in table[1:]:
        total = sum(Decimal(cell.rstrip("%")) for cell in row[-4:])
        assert abs(total - 100) <= Decimal("0.02")
