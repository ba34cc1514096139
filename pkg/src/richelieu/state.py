"""Game lifecycle: phase sequencing, ownership, elimination and victory."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Mapping

from .maps import MapGraph, load_standard_map
from .orders import Unit
from .scoring import WINNING_CENTERS, GameResult, classify_outcomes

__all__ = [
    "Phase",
    "PowerStatus",
    "Dislodgement",
    "GameState",
    "SequencingError",
    "initial_state",
    "step_phase",
    "check_victory",
    "terminate_game",
    "DEFAULT_MAX_YEAR",
]

DEFAULT_MAX_YEAR = 1935
START_YEAR = 1901


class SequencingError(RuntimeError):
    """A result was applied to the wrong phase, or the game ended too early."""


class Phase(str, enum.Enum):
    SPRING_MOVE = "SpringMove"
    SPRING_RETREAT = "SpringRetreat"
    FALL_MOVE = "FallMove"
    FALL_RETREAT = "FallRetreat"
    WINTER_ADJUST = "WinterAdjust"

    @property
    def is_movement(self) -> bool:
        return self in (Phase.SPRING_MOVE, Phase.FALL_MOVE)

    @property
    def is_retreat(self) -> bool:
        return self in (Phase.SPRING_RETREAT, Phase.FALL_RETREAT)

    @property
    def is_adjustment(self) -> bool:
        return self is Phase.WINTER_ADJUST


class PowerStatus(str, enum.Enum):
    ACTIVE = "active"
    ELIMINATED = "eliminated"
    WINNER = "winner"


@dataclass(frozen=True)
class Dislodgement:
    unit: Unit
    attacker_origin: str


@dataclass(frozen=True)
class GameState:
    """Immutable board snapshot. ``ownership`` maps every supply centre to its owner or ``None``."""

    year: int
    phase: Phase
    ownership: Mapping[str, str | None]
    units: tuple[Unit, ...]
    status: Mapping[str, PowerStatus]
    rng_seed: int = 0
    dislodged: tuple[Dislodgement, ...] = ()
    contested: frozenset[str] = frozenset()
    graph: MapGraph = field(default_factory=load_standard_map, compare=False, repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "units", tuple(sorted(self.units, key=lambda u: (u.province, u.power or ""))))

    @cached_property
    def _by_province(self) -> dict[str, Unit]:
        return {u.province: u for u in self.units}

    @property
    def powers(self) -> tuple[str, ...]:
        return self.graph.powers

    @property
    def turn(self) -> int:
        """Movement-turn index: 0 for Spring 1901, 1 for Fall 1901, ..."""
        half = 0 if self.phase in (Phase.SPRING_MOVE, Phase.SPRING_RETREAT) else 1
        return (self.year - START_YEAR) * 2 + half

    def unit_at(self, province: str) -> Unit | None:
        return self._by_province.get(province)

    def units_of(self, power: str) -> tuple[Unit, ...]:
        return tuple(u for u in self.units if u.power == power)

    def centers_of(self, power: str) -> tuple[str, ...]:
        return tuple(sorted(sc for sc, owner in self.ownership.items() if owner == power))

    def sc_count(self, power: str) -> int:
        return sum(1 for owner in self.ownership.values() if owner == power)

    def is_eliminated(self, power: str) -> bool:
        return self.status.get(power) is PowerStatus.ELIMINATED

    def active_powers(self) -> tuple[str, ...]:
        return tuple(p for p in self.powers if not self.is_eliminated(p))

    def digest(self) -> dict:
        """Plain-data summary used by replays and memory records."""
        return {
            "year": self.year,
            "phase": self.phase.value,
            "ownership": {p: list(self.centers_of(p)) for p in self.powers if self.sc_count(p)},
            "units": [[u.power, u.kind.value, u.location] for u in self.units],
            "status": {p: self.status[p].value for p in self.powers},
        }


def initial_state(graph: MapGraph | None = None, seed: int = 0) -> GameState:
    graph = graph or load_standard_map()
    ownership = {sc: graph.provinces[sc].home_power for sc in graph.supply_centers}
    units = tuple(Unit(p, k, loc) for p, k, loc in graph.opening)
    return GameState(
        year=START_YEAR,
        phase=Phase.SPRING_MOVE,
        ownership=ownership,
        units=units,
        status={p: PowerStatus.ACTIVE for p in graph.powers},
        rng_seed=seed,
        graph=graph,
    )


def check_victory(state: GameState, threshold: int = WINNING_CENTERS) -> str | None:
    for power in state.powers:
        if state.sc_count(power) >= threshold:
            return power
    return None


def _update_ownership(state: GameState) -> GameState:
    ownership = dict(state.ownership)
    for unit in state.units:
        if unit.province in ownership:
            ownership[unit.province] = unit.power
    counts = {p: 0 for p in state.powers}
    for owner in ownership.values():
        if owner is not None:
            counts[owner] += 1
    status = dict(state.status)
    for p in state.powers:
        if counts[p] == 0:
            status[p] = PowerStatus.ELIMINATED
    units = tuple(u for u in state.units if status[u.power] is not PowerStatus.ELIMINATED)
    updated = replace(state, ownership=ownership, units=units, status=status)
    winner = check_victory(updated)
    if winner is not None:
        status[winner] = PowerStatus.WINNER
        updated = replace(updated, status=status)
    return updated


def step_phase(state: GameState, result) -> GameState:
    """Apply an adjudication result and advance to the next phase.

    Spring move -> spring retreat -> fall move -> fall retreat -> winter
    adjustment -> next spring. Retreat phases are skipped when nothing was
    dislodged. Centre ownership changes only when entering the winter phase.
    """
    from .adjudicator import AdjustmentResult, Resolution, RetreatResult

    phase = state.phase
    if phase.is_movement:
        if not isinstance(result, Resolution):
            raise SequencingError(f"{phase.value} needs a movement resolution, got {type(result).__name__}")
        moved = replace(state, units=result.units, dislodged=result.dislodged, contested=result.contested)
        if result.dislodged:
            nxt = Phase.SPRING_RETREAT if phase is Phase.SPRING_MOVE else Phase.FALL_RETREAT
            return replace(moved, phase=nxt)
        moved = replace(moved, dislodged=(), contested=frozenset())
        if phase is Phase.SPRING_MOVE:
            return replace(moved, phase=Phase.FALL_MOVE)
        return replace(_update_ownership(moved), phase=Phase.WINTER_ADJUST)

    if phase.is_retreat:
        if not isinstance(result, RetreatResult):
            raise SequencingError(f"{phase.value} needs a retreat result, got {type(result).__name__}")
        cleared = replace(state, units=result.units, dislodged=(), contested=frozenset())
        if phase is Phase.SPRING_RETREAT:
            return replace(cleared, phase=Phase.FALL_MOVE)
        return replace(_update_ownership(cleared), phase=Phase.WINTER_ADJUST)

    if not isinstance(result, AdjustmentResult):
        raise SequencingError(f"{phase.value} needs an adjustment result, got {type(result).__name__}")
    return replace(state, units=result.units, phase=Phase.SPRING_MOVE, year=state.year + 1)


def is_finished(state: GameState, max_year: int = DEFAULT_MAX_YEAR) -> bool:
    return check_victory(state) is not None or state.year > max_year


def terminate_game(state: GameState, max_year: int = DEFAULT_MAX_YEAR,
                   labels: Mapping[str, str] | None = None) -> GameResult:
    """Final four-way outcomes and centre counts for a finished game."""
    if not is_finished(state, max_year):
        raise SequencingError(f"game not finished in {state.year} {state.phase.value} (max_year={max_year})")
    counts = {p: state.sc_count(p) for p in state.powers}
    eliminated = [p for p in state.powers if state.is_eliminated(p)]
    return GameResult(
        sc_counts=counts,
        outcomes=classify_outcomes(counts, eliminated),
        labels=dict(labels or {}),
        year=state.year,
    )
