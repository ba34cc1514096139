"""Command-line entry point: ``richelieu play|selfplay|eval|ablate|inspect|merge``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from collections import Counter, defaultdict
from dataclasses import replace
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import tomli

from .maps import load_standard_map
from .memory import CredibilityTable, MemoryError_, MemoryStore, load, merge_shards, persist, update_credibility
from .replay import ReplayError, canonical, digest_of, read_replay, write_replay
from .scoring import round_half_up, to_csv, to_markdown
from .selfplay import (AgentSpec, ConfigError, GameConfig, RunReport, ablation_table, run_ablation, run_evaluation,
                       run_game, run_selfplay)

__all__ = ["main", "build_parser", "EXIT_OK", "EXIT_FAILURE", "EXIT_USAGE"]

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2
PARTIAL_MARKER = "MANIFEST.partial"

log = logging.getLogger("richelieu")


class UsageError(Exception):
    pass


# ------------------------------------------------------------------ config

def load_config(path: str | None) -> GameConfig:
    if path is None:
        return GameConfig()
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {path}")
    try:
        data = tomli.loads(p.read_text(encoding="utf-8"))
    except tomli.TOMLDecodeError as exc:
        raise UsageError(f"{path}: {exc}") from exc
    try:
        return GameConfig.from_mapping(data)
    except (ConfigError, ValueError, TypeError) as exc:
        raise UsageError(f"{path}: {exc}") from exc


def parse_spec(text: str) -> AgentSpec:
    """``kind[:backend]``, e.g. ``richelieu``, ``richelieu:failing``, ``random``."""
    kind, _, backend = text.partition(":")
    try:
        return AgentSpec(kind=kind, backend=backend or "heuristic")
    except ConfigError as exc:
        raise UsageError(str(exc)) from exc


# ---------------------------------------------------------------- artifacts

class Artifacts:
    """Output directory bound to one command invocation's seed and settings."""

    def __init__(self, out: str, seed: int, settings: dict):
        self.dir = Path(out)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.seed = seed
        self.settings = settings
        self.digest = digest_of(settings)
        (self.dir / PARTIAL_MARKER).unlink(missing_ok=True)

    def stamp(self) -> str:
        return f"seed={self.seed} config_digest={self.digest}"

    def write_manifest(self, command: str) -> None:
        manifest = {"command": command, "seed": self.seed, "config_digest": self.digest, "settings": self.settings}
        (self.dir / "manifest.json").write_text(canonical(manifest) + "\n", encoding="utf-8")

    def write_table(self, stem: str, rows: list[list[str]], title: str = "") -> None:
        (self.dir / f"{stem}.csv").write_text(f"# {self.stamp()}\n" + to_csv(rows), encoding="utf-8")
        head = f"<!-- {self.stamp()} -->\n" + (f"## {title}\n\n" if title else "")
        (self.dir / f"{stem}.md").write_text(head + to_markdown(rows), encoding="utf-8")

    def mark_partial(self, reason: str) -> None:
        (self.dir / PARTIAL_MARKER).write_text(f"{self.stamp()}\n{reason}\n", encoding="utf-8")


def _write_report(art: Artifacts, stem: str, report: RunReport) -> None:
    art.write_table(f"{stem}_rates", report.rate_rows(), "Outcome rates")
    art.write_table(f"{stem}_scores", report.score_rows(), "Mean scores")


def _print_rows(rows: list[list[str]]) -> None:
    print(to_markdown(rows), end="")


# ----------------------------------------------------------------- commands

def cmd_play(args) -> int:
    if not args.config:
        raise UsageError("play needs --config")
    config = load_config(args.config)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    if args.no_press:
        config = replace(config, press=False)
    if args.max_year is not None:
        config = replace(config, max_year=args.max_year)
    art = Artifacts(args.out, config.seed, {"command": "play", **config.to_dict(_powers())})
    art.write_manifest("play")
    run = run_game(config)
    write_replay(art.dir / f"replay-{config.seed}.jsonl", run.replay)
    (art.dir / f"result-{config.seed}.json").write_text(
        canonical({"seed": config.seed, "config_digest": run.replay.config_digest, "result": run.result.to_dict(),
                   "scores": run.replay.scores}) + "\n", encoding="utf-8")
    rows = [["Power", "Agent", "Centers", "Outcome", "Score"]]
    for p in run.result.powers:
        rows.append([p, run.result.labels.get(p, ""), str(run.result.sc_counts[p]), run.result.outcomes[p].value,
                     str(round_half_up(Fraction(run.replay.scores[p])))])
    _print_rows(rows)
    for note in run.degraded:
        log.warning("degraded: %s", note)
    return EXIT_OK


def _powers() -> tuple[str, ...]:
    return load_standard_map().powers


def cmd_selfplay(args) -> int:
    config = load_config(args.config)
    seed = config.seed if args.seed is None else args.seed
    config = replace(config, seed=seed, **({"max_year": args.max_year} if args.max_year is not None else {}))
    memory_path = Path(args.memory) if args.memory else Path(args.out) / "memory.jsonl"
    art = Artifacts(args.out, seed, {"command": "selfplay", "n": args.n, "workers": args.workers,
                                     **config.to_dict(_powers())})
    art.write_manifest("selfplay")
    try:
        report, memory = run_selfplay(args.n, config, memory_path, workers=args.workers)
    except (OSError, MemoryError_) as exc:
        art.mark_partial(f"selfplay aborted: {exc}")
        raise
    if report.results:
        _write_report(art, "selfplay", report)
    art.write_table("selfplay_growth", report.growth_rows(), "Records added per game")
    print(f"{len(report.results)} games, {sum(report.records_added)} records added, {len(memory)} in {memory_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    config = load_config(args.config)
    a, b = parse_spec(args.a), parse_spec(args.b)
    settings = {"command": "eval", "a": a.to_dict(), "b": b.to_dict(), "n": args.n, "max_year": args.max_year,
                "press": not args.no_press, "backends": {k: vars(v) for k, v in sorted(config.backends.items())}}
    art = Artifacts(args.out, args.seed, settings)
    art.write_manifest("eval")
    memory = None
    if args.memory:
        memory = {a.name: load(args.memory)}
    done = []
    try:
        report = run_evaluation(a, b, args.n, args.seed, max_year=args.max_year, press=not args.no_press,
                                backends=config.backends, memory=memory, workers=args.workers,
                                on_game=lambda i, run: done.append(run))
    except Exception as exc:
        if done:
            partial = RunReport()
            for run in done:
                partial.add(run)
            _write_report(art, "eval", partial)
        art.mark_partial(f"eval stopped after {len(done)} of {args.n} games: {exc}")
        raise
    _write_report(art, "eval", report)
    _print_rows(report.rate_rows())
    _print_rows(report.score_rows())
    return EXIT_OK


def cmd_ablate(args) -> int:
    config = load_config(args.config)
    memory = load(args.memory) if args.memory else None
    settings = {"command": "ablate", "n": args.n, "max_year": args.max_year, "backend": args.backend,
                "opponent": args.opponent, "selfplay_games": args.selfplay_games,
                "backends": {k: vars(v) for k, v in sorted(config.backends.items())}}
    art = Artifacts(args.out, args.seed, settings)
    art.write_manifest("ablate")
    try:
        rows = run_ablation(args.n, args.seed, opponent=parse_spec(args.opponent), backend=args.backend,
                            max_year=args.max_year, selfplay_games=args.selfplay_games, memory=memory,
                            backends=config.backends, workers=args.workers)
    except Exception as exc:
        art.mark_partial(f"ablation stopped: {exc}")
        raise
    table = ablation_table(rows)
    art.write_table("ablation", table, "Ablation")
    _print_rows(table)
    return EXIT_OK


def _inspect_replay(path: str) -> int:
    replay = read_replay(path)
    print(f"seed {replay.seed}, config {replay.config_digest}, {len(replay.phases)} phases")
    for ph in replay.phases:
        print(f"\n== {ph['phase']} {ph['year']}")
        for m in ph.get("messages", ()):
            print(f"  [{m['sender']} -> {m['recipient']}, round {m.get('round', 0)}] {m['text']}")
        for power, order, outcome in ph["outcomes"]:
            print(f"  {power:<8} {order:<24} {outcome}")
        for power, order, why in ph.get("rejected", ()):
            print(f"  {power:<8} {order:<24} rejected: {why}")
    if replay.result is not None:
        print("\nResult:")
        for p in replay.result.powers:
            print(f"  {p:<8} {replay.result.sc_counts[p]:>2} {replay.result.outcomes[p].value}")
    return EXIT_OK


def _inspect_memory(path: str) -> int:
    store = load(path)
    records = list(store.records())
    print(f"{len(records)} records")
    if not records:
        return EXIT_OK
    owners = Counter(r.owner for r in records)
    games = {r.game_id for r in records}
    print(f"{len(games)} games; per owner: " + ", ".join(f"{p} {n}" for p, n in sorted(owners.items())))
    lams = [r.lam for r in records if r.lam is not None]
    frozen = sum(r.frozen for r in records)
    print(f"evaluated {len(lams)}, frozen {frozen}")
    if lams:
        bins = Counter(min(int(x // 2), 4) for x in lams)
        for b in range(5):
            lo, hi = 2 * b, 2 * b + 2
            label = f"[{lo}, {hi})" if b < 4 else f"[{lo}, {hi}]"
            print(f"  lambda {label:<8} {bins.get(b, 0)}")
    # credibility as each owner would have accumulated it, game by game
    tables: dict[tuple[str, str], CredibilityTable] = defaultdict(CredibilityTable)
    for r in sorted(records, key=lambda r: r.id):
        for opp, tau in sorted(r.truthfulness.items()):
            update_credibility(tables[(r.game_id, r.owner)], opp, tau)
    final: dict[str, list[float]] = defaultdict(list)
    for (_, _owner), table in tables.items():
        for opp, hist in table.history.items():
            final[opp].append(hist[-1])
    if final:
        print("final credibility by opponent (mean over games and observers):")
        for opp, vals in sorted(final.items()):
            print(f"  {opp:<8} {sum(vals) / len(vals):.3f} over {len(vals)} histories")
    return EXIT_OK


def cmd_inspect(args) -> int:
    if not Path(args.path).is_file():
        raise UsageError(f"no such file: {args.path}")
    if args.target == "replay":
        return _inspect_replay(args.path)
    return _inspect_memory(args.path)


def cmd_merge(args) -> int:
    base_path = Path(args.base)
    base = load(base_path) if base_path.exists() else MemoryStore()
    shards = []
    for s in args.shards:
        if not Path(s).is_file():
            raise UsageError(f"no such shard: {s}")
        shards.append(load(s))
    added = merge_shards(base, shards)
    persist(base, base_path)
    print(f"merged {added} records from {len(shards)} shards into {base_path} ({len(base)} total)")
    return EXIT_OK


# ------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="richelieu", description="Diplomacy engine and negotiating agents.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed_default: int | None = 0):
        p.add_argument("--config", help="TOML game configuration")
        p.add_argument("--seed", type=int, default=seed_default)
        p.add_argument("--out", default="runs", help="output directory (default: runs)")
        p.add_argument("--workers", type=int, default=1, help="games run concurrently")
        p.add_argument("--max-year", type=int, default=None)

    p = sub.add_parser("play", help="play one game and write its replay")
    common(p, seed_default=None)
    p.add_argument("--no-press", action="store_true", help="disable negotiation")
    p.set_defaults(func=cmd_play)

    p = sub.add_parser("selfplay", help="grow the experience memory by self-play")
    common(p, seed_default=None)
    p.add_argument("-n", type=int, default=1, help="number of games")
    p.add_argument("--memory", help="memory file (default: OUT/memory.jsonl)")
    p.set_defaults(func=cmd_selfplay)

    p = sub.add_parser("eval", help="three-versus-four evaluation of two agent specs")
    common(p)
    p.set_defaults(max_year=1910)
    p.add_argument("--a", required=True, help="agent spec, kind[:backend]")
    p.add_argument("--b", required=True, help="agent spec, kind[:backend]")
    p.add_argument("-n", type=int, default=10)
    p.add_argument("--no-press", action="store_true")
    p.add_argument("--memory", help="memory file model A recalls from")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="six-row module ablation against a baseline")
    common(p)
    p.set_defaults(max_year=1910)
    p.add_argument("-n", type=int, default=10)
    p.add_argument("--backend", default="heuristic")
    p.add_argument("--opponent", default="heuristic")
    p.add_argument("--selfplay-games", type=int, default=2)
    p.add_argument("--memory", help="memory for the self-play row (default: grown on the fly)")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("inspect", help="print a replay or memory summary")
    p.add_argument("target", choices=("replay", "memory"))
    p.add_argument("path")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("merge", help="merge memory shards into a base store")
    p.add_argument("base")
    p.add_argument("shards", nargs="+")
    p.set_defaults(func=cmd_merge)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    level = logging.ERROR if args.verbose == 0 else logging.WARNING if args.verbose == 1 else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "n", 0) is not None and getattr(args, "n", 0) < 0:
        parser.print_usage(sys.stderr)
        print("richelieu: error: -n must be non-negative", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"richelieu: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ReplayError, MemoryError_) as exc:
        print(f"richelieu: error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except Exception as exc:  # runtime failure: report, never traceback at the user
        log.debug("failure", exc_info=True)
        print(f"richelieu: failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
