"""Acceptance criteria 1-9, one pass/fail line each.

Each check runs the real machinery at full size; a failing criterion prints
FAIL with the reason and then fails the test.
"""

import inspect
import itertools
import random
import time
from decimal import Decimal
from fractions import Fraction

import pytest

import test_adjudicator
import test_memory
import test_oracle
import test_orders
import test_scoring
from richelieu.cli import main
from richelieu.memory import credibility_closed_form, update_credibility, CredibilityTable
from richelieu.orders import OrderError, format_order, parse_order
from richelieu.scoring import aggregate_metrics, combine_slot_rates, score_cdiplo
from richelieu.selfplay import AgentSpec, GameConfig, ablation_table, run_ablation, run_evaluation, run_game

# Margin of the first full 100-game run (seed 0, max_year 1910); later runs must not fall below it.
BASELINE_MARGIN = Fraction(94114, 4200)


@pytest.fixture
def verdict(capsys):
    def report(n, checks):
        failed = [name for name, ok in checks if not ok]
        line = f"ACCEPTANCE {n}: {'PASS' if not failed else 'FAIL'}"
        detail = "; ".join(name for name, _ in checks) if not failed else "failed: " + "; ".join(failed)
        with capsys.disabled():
            print(f"\n{line} ({detail})")
        assert not failed, detail
    return report


def holds(fn, *args):
    try:
        fn(*args)
    except AssertionError:
        return False
    return True


def test_criterion_1_adjudication(verdict):
    scenarios = [f for name, f in vars(test_adjudicator).items()
                 if name.startswith("test_") and inspect.isfunction(f) and not inspect.signature(f).parameters]
    passed = sum(holds(f) for f in scenarios)
    start = time.perf_counter()
    oracle_ok = holds(test_oracle.test_resolver_matches_oracle_exhaustively)
    elapsed = time.perf_counter() - start
    verdict(1, [
        (f"{passed}/{len(scenarios)} scenario fixtures", passed == len(scenarios) >= 30),
        (f"micro-map oracle agreement in {elapsed:.1f}s", oracle_ok and elapsed < 60),
    ])


def test_criterion_2_parser(verdict):
    rng = random.Random(2024)
    mismatches = 0
    for _ in range(10_000):
        order = test_orders.random_order(rng)
        text = format_order(order)
        back = parse_order(text, power=order.power)
        mismatches += back != order or format_order(back) != text
    positioned = 0
    for text in test_orders.MALFORMED:
        try:
            parse_order(text)
        except OrderError as exc:
            positioned += exc.position is not None and 0 <= exc.position <= len(text)
    verdict(2, [
        (f"10000 round trips, {mismatches} mismatches", mismatches == 0),
        (f"{positioned}/{len(test_orders.MALFORMED)} malformed strings positioned",
         positioned == len(test_orders.MALFORMED) == 100),
    ])


def test_criterion_3_scoring(verdict):
    rng = random.Random(11)
    bad = ties = 0
    for _ in range(1000):
        counts = test_scoring.random_counts(rng)
        bad += sum(score_cdiplo(test_scoring.result(counts)).values()) != 99
        ties += len(set(counts)) < 7
    worked = score_cdiplo(test_scoring.result([10, 8, 6, 5, 3, 2, 0]))
    verdict(3, [
        (f"1000 results sum to 99 ({ties} with ties, {bad} off)", bad == 0 and ties > 0),
        ("worked draw gives 48,23,14,6,4,3,1",
         [worked[p] for p in test_scoring.POWERS] == [48, 23, 14, 6, 4, 3, 1]),
    ])


def test_criterion_4_slot_averages(verdict):
    tol = Fraction(5, 1000)
    a = combine_slot_rates(test_scoring.slot_rates("6.20", "6.60", "7.10", "7.40")).win * 100
    b = combine_slot_rates(test_scoring.slot_rates("5.90", "6.30", "5.90")).win * 100
    reports = aggregate_metrics(test_scoring.games_with_slot_wins([62, 66, 71, 74], [59, 63, 59]))
    ga, gb = reports["A"].rates.win * 100, reports["B"].rates.win * 100
    verdict(4, [
        (f"slot rates average to {float(a):.4f}% and {float(b):.4f}%",
         abs(a - Fraction(683, 100)) <= tol and abs(b - Fraction(603, 100)) <= tol),
        (f"aggregate_metrics over 1000 games gives {float(ga):.4f}% and {float(gb):.4f}%",
         abs(ga - Fraction(683, 100)) <= tol and abs(gb - Fraction(603, 100)) <= tol),
    ])


def test_criterion_5_memory(verdict, tmp_path):
    worst = 0.0
    for n, gamma0, alpha in itertools.product(range(0, 61, 3), (0.0, 0.25, 0.5, 0.9, 1.0), (0.1, 0.3, 0.7)):
        table = CredibilityTable(alpha=alpha, initial=gamma0)
        table.reset(["X"])
        for _ in range(n):
            update_credibility(table, "X", 0)
        expected = (1 - alpha) ** n * gamma0
        worst = max(worst, abs(table.get("X") - expected), abs(credibility_closed_form(n, gamma0, alpha) - expected))
    verdict(5, [
        (f"EMA closed form, max error {worst:.1e}", worst <= 1e-12),
        ("planted-corpus diversity and ordering", holds(test_memory.test_retrieval_is_diverse_and_ordered)
         and holds(test_memory.test_retrieval_invariants_hold_for_any_query)),
        ("lambda freeze survives persist/load",
         holds(test_memory.test_lambda_freezes_when_goal_changes_and_survives_reload, tmp_path)),
    ])


def test_criterion_6_determinism(verdict, tmp_path):
    cfg = tmp_path / "game.toml"
    cfg.write_text('[game]\nmax_year = 1910\n\n[agents.default]\nkind = "richelieu"\nbackend = "heuristic"\n')
    start = time.perf_counter()
    codes = []
    for run in ("p1", "p2"):
        codes.append(main(["play", "--config", str(cfg), "--seed", "7", "--out", str(tmp_path / run)]))
    for run in ("e1", "e2"):
        codes.append(main(["eval", "--a", "richelieu", "--b", "random", "-n", "5", "--seed", "7",
                           "--out", str(tmp_path / run)]))
    elapsed = time.perf_counter() - start

    def same(a, b):
        files = sorted(p.name for p in (tmp_path / a).iterdir())
        return files == sorted(p.name for p in (tmp_path / b).iterdir()) and all(
            (tmp_path / a / f).read_bytes() == (tmp_path / b / f).read_bytes() for f in files)

    verdict(6, [
        (f"exit codes {codes}", codes == [0, 0, 0, 0]),
        ("play artifacts byte-identical", same("p1", "p2")),
        ("eval -n 5 artifacts byte-identical", same("e1", "e2")),
        (f"runtime {elapsed:.1f}s", elapsed < 120),
    ])


def test_criterion_7_beats_random(verdict):
    report = run_evaluation(AgentSpec("richelieu"), AgentSpec("random"), 100, seed=0, max_year=1910)
    scores = report.mean_scores
    margin = scores["richelieu"] - scores["random"]
    verdict(7, [
        (f"mean score {float(scores['richelieu']):.2f} vs {float(scores['random']):.2f} over "
         f"{len(report.results)} games, margin {float(margin):.2f}", len(report.results) == 100 and margin > 0),
        (f"margin at or above the recorded floor {float(BASELINE_MARGIN):.2f}", margin >= BASELINE_MARGIN),
    ])


def test_criterion_8_ablation(verdict):
    rows = run_ablation(30, seed=0, max_year=1910)
    table = ablation_table(rows)
    off, on = rows[0].rates.defeated, rows[-1].rates.defeated
    sums_ok = all(abs(sum(Decimal(c.rstrip("%")) for c in r[-4:]) - 100) <= Decimal("0.02") for r in table[1:])
    verdict(8, [
        (f"{len(rows)} rows", len(rows) == 6 and len(table) == 7),
        ("rows partition to 100%", sums_ok),
        (f"defeated all-on {float(on) * 100:.2f}% <= all-off {float(off) * 100:.2f}%", on <= off),
    ])


def test_criterion_9_failing_backend(verdict):
    run = run_game(GameConfig(seed=3, max_year=1910, default=AgentSpec(backend="failing")))
    moves = [o for ph in run.replay.phases if ph["phase"].endswith("Move") for os in ph["orders"].values() for o in os]
    verdict(9, [
        (f"{len(moves)} movement orders, all Hold", bool(moves) and all(o.endswith(" H") for o in moves)),
        (f"{len(run.replay.messages)} messages", run.replay.messages == []),
        (f"ended {run.result.year} with max_year 1910", run.result.year == 1911),
    ])
