"""Game loop, self-play runs, two-model evaluation and the ablation table."""

from __future__ import annotations

import logging
import random
import shutil
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

from .adjudicator import adjudicate_adjustments, adjudicate_movement, adjudicate_retreats
from .agent import HeuristicAgent, Player, RandomAgent, RichelieuAgent, Toggles
from .llm import Backend, BackendConfig, FailingBackend, make_backend
from .maps import MapGraph, load_standard_map
from .memory import MemoryStore, load, merge_shards, persist
from .orders import format_order
from .replay import Replay, phase_record
from .scoring import GameResult, ModelReport, aggregate_metrics, rates_table, score_cdiplo, score_table
from .scripted import HeuristicResponder
from .state import initial_state, is_finished, step_phase, terminate_game

__all__ = [
    "AgentSpec",
    "GameConfig",
    "GameRun",
    "RunReport",
    "ConfigError",
    "ABLATION_ROWS",
    "run_game",
    "run_selfplay",
    "run_evaluation",
    "run_ablation",
    "assign_powers",
    "make_backend_for",
    "ablation_table",
]

log = logging.getLogger(__name__)

AGENT_KINDS = ("richelieu", "random", "heuristic")
BUILTIN_BACKENDS = ("heuristic", "failing")
DEFAULT_ROUNDS = 3


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class AgentSpec:
    """Who plays a power: agent kind, backend id and pipeline toggles."""

    kind: str = "richelieu"
    backend: str = "heuristic"
    toggles: Toggles = Toggles()
    label: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in AGENT_KINDS:
            raise ConfigError(f"unknown agent kind {self.kind!r} (expected one of {', '.join(AGENT_KINDS)})")

    @property
    def name(self) -> str:
        return self.label or self.kind

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"kind": self.kind, "label": self.name}
        if self.kind == "richelieu":
            out["backend"] = self.backend
            out["toggles"] = self.toggles.to_dict()
        return out

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any] | str) -> "AgentSpec":
        if isinstance(data, str):
            return cls(kind=data)
        unknown = set(data) - {"kind", "backend", "toggles", "label"}
        if unknown:
            raise ConfigError(f"unknown agent settings: {', '.join(sorted(unknown))}")
        toggles = dict(data.get("toggles", {}))
        bad = set(toggles) - set(Toggles.NAMES)
        if bad:
            raise ConfigError(f"unknown toggles: {', '.join(sorted(bad))}")
        return cls(
            kind=data.get("kind", "richelieu"),
            backend=data.get("backend", "heuristic"),
            toggles=Toggles(**{k: bool(v) for k, v in toggles.items()}),
            label=data.get("label"),
        )


@dataclass(frozen=True)
class GameConfig:
    seed: int = 0
    max_year: int = 1910
    rounds: int = DEFAULT_ROUNDS
    press: bool = True
    agents: Mapping[str, AgentSpec] = field(default_factory=dict)
    default: AgentSpec = AgentSpec()
    backends: Mapping[str, BackendConfig] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.press:
            object.__setattr__(self, "rounds", 0)
        if self.rounds < 0:
            raise ConfigError("negotiation rounds must be non-negative")
        if self.max_year < 1901:
            raise ConfigError("max_year must be 1901 or later")
        for spec in [self.default, *self.agents.values()]:
            if spec.kind == "richelieu" and spec.backend not in BUILTIN_BACKENDS and spec.backend not in self.backends:
                raise ConfigError(f"backend {spec.backend!r} is not defined")

    def spec_for(self, power: str) -> AgentSpec:
        return self.agents.get(power, self.default)

    def to_dict(self, powers: Sequence[str]) -> dict:
        """Canonical description for replay headers; credentials are referenced by name only."""
        return {
            "seed": self.seed,
            "max_year": self.max_year,
            "rounds": self.rounds,
            "press": self.press,
            "agents": {p: self.spec_for(p).to_dict() for p in powers},
            "backends": {k: {**vars(v)} for k, v in sorted(self.backends.items())},
        }

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "GameConfig":
        """Build from parsed TOML: ``[game]``, ``[agents]`` / ``[agents.POWER]`` and ``[backends.ID]``."""
        known = {"game", "agents", "backends"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config sections: {', '.join(sorted(unknown))}")
        game = dict(data.get("game", {}))
        bad = set(game) - {"seed", "max_year", "rounds", "press"}
        if bad:
            raise ConfigError(f"unknown [game] settings: {', '.join(sorted(bad))}")
        try:
            backends = {k: BackendConfig.from_mapping(v) for k, v in data.get("backends", {}).items()}
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad backend config: {exc}") from exc
        agents_raw = dict(data.get("agents", {}))
        default = AgentSpec.from_mapping(agents_raw.pop("default", {}))
        agents = {p.upper(): AgentSpec.from_mapping(v) for p, v in agents_raw.items()}
        press = game.get("press", True)
        if isinstance(press, str):
            if press not in ("press", "no_press"):
                raise ConfigError(f"press must be 'press' or 'no_press', not {press!r}")
            press = press == "press"
        return cls(seed=int(game.get("seed", 0)), max_year=int(game.get("max_year", 1910)),
                   rounds=int(game.get("rounds", DEFAULT_ROUNDS)), press=bool(press),
                   agents=agents, default=default, backends=backends)


def make_backend_for(spec: AgentSpec, config: GameConfig) -> Backend:
    if spec.backend == "heuristic":
        return make_backend(BackendConfig(kind="scripted"), HeuristicResponder())
    if spec.backend == "failing":
        return FailingBackend()
    cfg = config.backends[spec.backend]
    return make_backend(cfg, HeuristicResponder() if cfg.kind == "scripted" else None)


def _make_player(spec: AgentSpec, power: str, config: GameConfig, memory: MemoryStore,
                 backends: dict[str, Backend]) -> Player:
    if spec.kind == "random":
        return RandomAgent(power, config.seed)
    if spec.kind == "heuristic":
        return HeuristicAgent(power, config.seed)
    if spec.backend not in backends:
        backends[spec.backend] = make_backend_for(spec, config)
    return RichelieuAgent(power, backends[spec.backend], memory=memory, toggles=spec.toggles, seed=config.seed)


@dataclass
class GameRun:
    result: GameResult
    replay: Replay
    shards: dict[str, MemoryStore]
    degraded: list[str]
    retrievals: int = 0
    retrieval_hits: int = 0

    @property
    def records_added(self) -> int:
        return sum(len(s.own_records) for s in self.shards.values())


def _outcome_rows(result) -> list[list[str]]:
    return [[o.power or "", format_order(o), result.outcomes[o].value] for o in result.orders]


def run_game(config: GameConfig, memory: Mapping[str, MemoryStore] | MemoryStore | None = None,
             graph: MapGraph | None = None, game_id: str | None = None) -> GameRun:
    """Play one game to victory or ``config.max_year``.

    Richelieu players with the same label share one memory shard layered on
    ``memory`` (a store, or a mapping from label to store); the shards come
    back in the :class:`GameRun` for merging.
    """
    graph = graph or load_standard_map()
    state = initial_state(graph, config.seed)
    game_id = game_id or f"game-{config.seed}"
    bases = memory if isinstance(memory, Mapping) else {}
    shards: dict[str, MemoryStore] = {}
    backends: dict[str, Backend] = {}
    players: dict[str, Player] = {}
    for p in state.powers:
        spec = config.spec_for(p)
        if spec.kind == "richelieu" and spec.name not in shards:
            base = bases.get(spec.name) if bases else memory if isinstance(memory, MemoryStore) else None
            shards[spec.name] = base.overlay() if base is not None else MemoryStore()
        players[p] = _make_player(spec, p, config, shards.get(spec.name, MemoryStore()), backends)
    for p, pl in players.items():
        pl.start_game(game_id, state)

    replay = Replay(seed=config.seed, config=config.to_dict(state.powers))
    while not is_finished(state, config.max_year):
        active = [p for p in state.powers if not state.is_eliminated(p)]
        messages = []
        if state.phase.is_movement:
            for p in active:
                players[p].begin_turn(state)
            inbox: dict[str, list] = {p: [] for p in active}
            for r in range(config.rounds):
                sent = [m for p in active for m in players[p].negotiate(state, inbox[p], r)]
                inbox = {p: [m for m in sent if m.recipient == p] for p in active}
                messages.extend(sent)
            orders = {p: players[p].decide(state) for p in active}
            result = adjudicate_movement(state, [o for p in active for o in orders[p]])
        elif state.phase.is_retreat:
            movers = {d.unit.power for d in state.dislodged}
            orders = {p: players[p].decide(state) for p in active if p in movers}
            result = adjudicate_retreats(state, [o for os in orders.values() for o in os])
        else:
            orders = {p: players[p].decide(state) for p in active}
            result = adjudicate_adjustments(state, [o for os in orders.values() for o in os])
        nxt = step_phase(state, result)
        if state.phase.is_movement:
            for p in active:
                players[p].end_turn(state, nxt, orders, messages)
        extra = {}
        if getattr(result, "rejected", None):
            extra["rejected"] = [[o.power or "", format_order(o), why] for o, why in result.rejected.items()]
        replay.phases.append(phase_record(
            state.year, state.phase.value,
            {p: [format_order(o) for o in os] for p, os in orders.items()},
            _outcome_rows(result),
            [m.to_dict() for m in messages],
            nxt.digest(),
            extra,
        ))
        state = nxt

    labels = {p: config.spec_for(p).name for p in state.powers}
    result = terminate_game(state, config.max_year, labels)
    replay.result = result
    replay.scores = {p: str(s) for p, s in score_cdiplo(result).items()}
    degraded = [f"{p} {d}" for p, pl in players.items() for d in pl.degraded]
    rich = [pl for pl in players.values() if isinstance(pl, RichelieuAgent)]
    return GameRun(result, replay, shards, degraded,
                   sum(pl.retrievals for pl in rich), sum(pl.retrieval_hits for pl in rich))


# ----------------------------------------------------------------- reports

@dataclass
class RunReport:
    results: list[GameResult] = field(default_factory=list)
    records_added: list[int] = field(default_factory=list)
    retrievals: int = 0
    retrieval_hits: int = 0
    degraded: list[str] = field(default_factory=list)
    title: str = ""

    @property
    def reports(self) -> dict[str, ModelReport]:
        return aggregate_metrics(self.results) if self.results else {}

    @property
    def mean_scores(self) -> dict[str, Fraction]:
        return {k: r.mean_score for k, r in self.reports.items()}

    @property
    def retrieval_hit_rate(self) -> float | None:
        return self.retrieval_hits / self.retrievals if self.retrievals else None

    def add(self, run: GameRun) -> None:
        self.results.append(run.result)
        self.records_added.append(run.records_added)
        self.retrievals += run.retrievals
        self.retrieval_hits += run.retrieval_hits
        self.degraded.extend(run.degraded)

    def rate_rows(self) -> list[list[str]]:
        return rates_table(self.reports) if self.results else [["Model", "Win", "Most SC", "Survived", "Defeated"]]

    def score_rows(self) -> list[list[str]]:
        return score_table(self.reports) if self.results else [["Model", "Mean score", "Slots", "Games"]]

    def growth_rows(self) -> list[list[str]]:
        rows = [["Game", "Records added"]]
        rows += [[str(i + 1), str(n)] for i, n in enumerate(self.records_added)]
        return rows


def _run_many(configs: Sequence[GameConfig], memory, workers: int, ids: Sequence[str]) -> list[GameRun]:
    if workers <= 1 or len(configs) <= 1:
        return [run_game(c, memory, game_id=i) for c, i in zip(configs, ids)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda ci: run_game(ci[0], memory, game_id=ci[1]), zip(configs, ids)))


def run_selfplay(n_games: int, config: GameConfig, memory_path: str | Path | None = None,
                 workers: int = 1, memory: MemoryStore | None = None,
                 on_game: Callable[[int, GameRun], None] | None = None) -> tuple[RunReport, MemoryStore]:
    """Seven Richelieu agents per game, sharing one growing memory.

    Games run in batches of ``workers``; every game of a batch writes its own
    shard over the same base and the batch's shards are merged in game order
    before the next batch starts. With ``memory_path`` the shards are written
    to ``<memory_path>.shards/`` as they finish and removed after the merged
    store is saved.
    """
    if n_games < 0:
        raise ValueError("n_games must be non-negative")
    config = replace(config, agents={}, default=replace(config.default, kind="richelieu"))
    path = Path(memory_path) if memory_path else None
    if memory is None:
        memory = load(path) if path is not None and path.exists() else MemoryStore()
    report = RunReport(title="selfplay")
    if n_games == 0:
        return report, memory
    shard_dir = path.with_name(path.name + ".shards") if path else None
    label = config.default.name
    for start in range(0, n_games, max(1, workers)):
        idx = list(range(start, min(n_games, start + max(1, workers))))
        configs = [replace(config, seed=config.seed + i) for i in idx]
        runs = _run_many(configs, {label: memory}, workers, [f"selfplay-{config.seed}-{i}" for i in idx])
        for i, run in zip(idx, runs):
            if shard_dir is not None:
                shard_dir.mkdir(parents=True, exist_ok=True)
                persist(run.shards[label], shard_dir / f"game-{i:05d}.jsonl")
            report.add(run)
            if on_game:
                on_game(i, run)
        merge_shards(memory, [r.shards[label] for r in runs])
        if path is not None:
            persist(memory, path)
    if shard_dir is not None and shard_dir.exists():
        shutil.rmtree(shard_dir)
    return report, memory


def assign_powers(rng: random.Random, powers: Sequence[str], fixed_three: str | None = None) -> tuple[set[str], str]:
    """Pick the three-power side and which model plays it (``"a"`` or ``"b"``)."""
    three = set(rng.sample(list(powers), 3))
    who = fixed_three or ("a" if rng.random() < 0.5 else "b")
    return three, who


def run_evaluation(model_a: AgentSpec, model_b: AgentSpec, n_games: int, seed: int = 0, *,
                   max_year: int = 1910, rounds: int = DEFAULT_ROUNDS, press: bool = True,
                   backends: Mapping[str, BackendConfig] | None = None,
                   memory: Mapping[str, MemoryStore] | None = None, workers: int = 1,
                   fixed_three: str | None = None, graph: MapGraph | None = None,
                   on_game: Callable[[int, GameRun], None] | None = None) -> RunReport:
    """Three powers to one model, four to the other, both choices seeded per game.

    ``fixed_three`` (``"a"`` or ``"b"``) pins which model gets three powers.
    Memory shards are discarded: evaluation never grows the store.
    """
    if model_a.name == model_b.name:
        model_a, model_b = replace(model_a, label=f"{model_a.name}_a"), replace(model_b, label=f"{model_b.name}_b")
    graph = graph or load_standard_map()
    rng = random.Random(seed)
    configs, ids = [], []
    for g in range(n_games):
        three, who = assign_powers(rng, graph.powers, fixed_three)
        side_three, side_four = (model_a, model_b) if who == "a" else (model_b, model_a)
        agents = {p: side_three if p in three else side_four for p in graph.powers}
        configs.append(GameConfig(seed=seed * 100_003 + g, max_year=max_year, rounds=rounds, press=press,
                                  agents=agents, backends=dict(backends or {})))
        ids.append(f"eval-{seed}-{g}")
    report = RunReport(title=f"{model_a.name} vs {model_b.name}")
    for start in range(0, n_games, max(1, workers)):
        chunk = slice(start, start + max(1, workers))
        runs = _run_many(configs[chunk], memory or {}, workers, ids[chunk])
        for k, run in enumerate(runs):
            run.shards.clear()
            report.add(run)
            if on_game:
                on_game(start + k, run)
    return report


ABLATION_ROWS = (
    "none",
    "+ modeling others",
    "+ sub-goals",
    "+ negotiation pipeline",
    "+ reflection with memory",
    "+ self-play",
)


@dataclass
class AblationRow:
    name: str
    toggles: Toggles
    report: RunReport

    @property
    def rates(self):
        return self.report.reports[self.name].rates


def run_ablation(n_games: int, seed: int = 0, *, opponent: AgentSpec = AgentSpec("heuristic"),
                 backend: str = "heuristic", max_year: int = 1910, selfplay_games: int = 2,
                 memory: MemoryStore | None = None, backends: Mapping[str, BackendConfig] | None = None,
                 workers: int = 1) -> list[AblationRow]:
    """Six cumulative toggle rows, each three Richelieu powers against four ``opponent`` powers.

    The last row draws on a memory grown by ``selfplay_games`` self-play
    games (or on ``memory`` when given); earlier rows only recall the game in
    progress.
    """
    rows = []
    for i, name in enumerate(ABLATION_ROWS):
        toggles = Toggles.first(i)
        spec = AgentSpec("richelieu", backend=backend, toggles=toggles, label=name)
        mem = None
        if toggles.use_selfplay_memory:
            if memory is None:
                sp_cfg = GameConfig(seed=seed, max_year=max_year, default=spec, backends=dict(backends or {}))
                _, memory = run_selfplay(selfplay_games, sp_cfg)
            mem = {name: memory}
        report = run_evaluation(spec, opponent, n_games, seed, max_year=max_year, backends=backends, memory=mem,
                                workers=workers, fixed_three="a")
        rows.append(AblationRow(name, toggles, report))
    return rows


def ablation_table(rows: Sequence[AblationRow]) -> list[list[str]]:
    out = [["Configuration", *Toggles.NAMES, "Win", "Most SC", "Survived", "Defeated"]]
    for row in rows:
        flags = ["x" if getattr(row.toggles, n) else "" for n in Toggles.NAMES]
        out.append([row.name, *flags, *(f"{p}%" for p in row.rates.percentages())])
    return out
