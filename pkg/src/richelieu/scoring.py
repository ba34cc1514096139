"""C-Diplo scoring and outcome-rate aggregation across games.

Scores are exact :class:`fractions.Fraction` values so that tie splitting never
breaks the 99-point total. Percentages are rounded half-up for display only.
"""

from __future__ import annotations

import csv
import enum
import io
from collections import defaultdict
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

__all__ = [
    "Outcome",
    "GameResult",
    "ScoringError",
    "OutcomeRates",
    "ModelReport",
    "classify_outcomes",
    "score_cdiplo",
    "weighted_average",
    "combine_slot_rates",
    "aggregate_metrics",
    "rates_table",
    "score_table",
    "to_csv",
    "to_markdown",
    "round_half_up",
]

WIN_POINTS = 93
LOSER_POINTS = 1
RANK_BONUS = (37, 14, 7)
TOTAL_CENTERS = 34
WINNING_CENTERS = 18


class Outcome(str, enum.Enum):
    WIN = "win"
    MOST_SC = "most_sc"
    SURVIVED = "survived"
    DEFEATED = "defeated"


class ScoringError(ValueError):
    pass


@dataclass(frozen=True)
class GameResult:
    """Final standing of one game: outcome and centre count per power, plus who played it."""

    sc_counts: Mapping[str, int]
    outcomes: Mapping[str, Outcome]
    labels: Mapping[str, str] = field(default_factory=dict)
    year: int | None = None

    @property
    def powers(self) -> tuple[str, ...]:
        return tuple(self.sc_counts)

    def validate(self, total_centers: int = TOTAL_CENTERS) -> None:
        if set(self.sc_counts) != set(self.outcomes):
            raise ScoringError("sc_counts and outcomes cover different powers")
        if any(n < 0 for n in self.sc_counts.values()):
            raise ScoringError("negative supply-centre count")
        if sum(self.sc_counts.values()) > total_centers:
            raise ScoringError(f"more than {total_centers} supply centres owned")
        wins = [p for p, o in self.outcomes.items() if Outcome(o) is Outcome.WIN]
        if len(wins) > 1:
            raise ScoringError("more than one winner")

    def to_dict(self) -> dict:
        return {
            "year": self.year,
            "powers": {
                p: {"outcome": Outcome(self.outcomes[p]).value, "sc": self.sc_counts[p],
                    "label": self.labels.get(p)}
                for p in self.powers
            },
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "GameResult":
        powers = data["powers"]
        return cls(
            sc_counts={p: int(v["sc"]) for p, v in powers.items()},
            outcomes={p: Outcome(v["outcome"]) for p, v in powers.items()},
            labels={p: v["label"] for p, v in powers.items() if v.get("label") is not None},
            year=data.get("year"),
        )


def classify_outcomes(
    sc_counts: Mapping[str, int],
    eliminated: Iterable[str] = (),
    winning_centers: int = WINNING_CENTERS,
) -> dict[str, Outcome]:
    """Assign the four-way outcome to every power.

    A power at or above ``winning_centers`` wins and every other power is
    defeated. Otherwise eliminated powers are defeated, the survivors with the
    most centres (all of them, on a tie) get ``MOST_SC`` and the rest survive.
    """
    gone = set(eliminated) | {p for p, n in sc_counts.items() if n == 0}
    winners = [p for p, n in sc_counts.items() if n >= winning_centers]
    if len(winners) > 1:
        raise ScoringError("two powers over the winning threshold")
    if winners:
        return {p: Outcome.WIN if p == winners[0] else Outcome.DEFEATED for p in sc_counts}
    alive = [p for p in sc_counts if p not in gone]
    top = max((sc_counts[p] for p in alive), default=None)
    out = {}
    for p, n in sc_counts.items():
        if p in gone:
            out[p] = Outcome.DEFEATED
        elif n == top:
            out[p] = Outcome.MOST_SC
        else:
            out[p] = Outcome.SURVIVED
    return out


def score_cdiplo(result: GameResult) -> dict[str, Fraction]:
    """C-Diplo points per power.

    Solo: 93 to the winner, 1 to everyone else. Draw: 37/14/7 to the three
    largest centre counts, one point per centre and one for taking part. Tied
    ranks share the bonuses of the positions they span. The total is 99 whenever
    all 34 centres are owned.
    """
    result.validate()
    outcomes = {p: Outcome(o) for p, o in result.outcomes.items()}
    winner = next((p for p, o in outcomes.items() if o is Outcome.WIN), None)
    if winner is not None:
        return {p: Fraction(WIN_POINTS if p == winner else LOSER_POINTS) for p in result.powers}

    ranked = sorted(result.powers, key=lambda p: -result.sc_counts[p])
    bonus = list(RANK_BONUS) + [0] * max(0, len(ranked) - len(RANK_BONUS))
    scores: dict[str, Fraction] = {}
    i = 0
    while i < len(ranked):
        j = i
        while j < len(ranked) and result.sc_counts[ranked[j]] == result.sc_counts[ranked[i]]:
            j += 1
        share = Fraction(sum(bonus[i:j]), j - i)
        for p in ranked[i:j]:
            scores[p] = share + result.sc_counts[p] + 1
        i = j
    return {p: scores[p] for p in result.powers}


# ---------------------------------------------------------------- aggregation

def _exact(value) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, float):
        return Fraction(str(value))
    return Fraction(value)


def round_half_up(value, places: int = 2) -> Decimal:
    exact = _exact(value)
    d = Decimal(exact.numerator) / Decimal(exact.denominator)
    return d.quantize(Decimal(1).scaleb(-places), rounding=ROUND_HALF_UP)


def weighted_average(values: Sequence, weights: Sequence | None = None) -> Fraction:
    """Exact weighted mean; equal weights when ``weights`` is omitted."""
    if not values:
        raise ValueError("no values to average")
    ws = [Fraction(1)] * len(values) if weights is None else [_exact(w) for w in weights]
    if len(ws) != len(values):
        raise ValueError("values and weights differ in length")
    total = sum(ws)
    if total <= 0:
        raise ValueError("weights must sum to a positive number")
    return sum(_exact(v) * w for v, w in zip(values, ws)) / total


@dataclass(frozen=True)
class OutcomeRates:
    win: Fraction
    most_sc: Fraction
    survived: Fraction
    defeated: Fraction
    slots: int = 0

    FIELDS = ("win", "most_sc", "survived", "defeated")

    @classmethod
    def from_counts(cls, counts: Mapping[Outcome, int]) -> "OutcomeRates":
        n = sum(counts.values())
        if n == 0:
            raise ValueError("no slots to rate")
        return cls(*(Fraction(counts.get(Outcome(f), 0), n) for f in cls.FIELDS), slots=n)

    @classmethod
    def from_percentages(cls, win, most_sc, survived, defeated, slots: int = 0) -> "OutcomeRates":
        return cls(*(_exact(v) / 100 for v in (win, most_sc, survived, defeated)), slots=slots)

    def percentages(self) -> tuple[Decimal, ...]:
        return tuple(round_half_up(getattr(self, f) * 100) for f in self.FIELDS)

    def total(self) -> Fraction:
        return self.win + self.most_sc + self.survived + self.defeated


def combine_slot_rates(slots: Sequence[OutcomeRates], weights: Sequence | None = None) -> OutcomeRates:
    """Weighted average of per-slot rates (equal weights by default)."""
    fields = [weighted_average([getattr(s, f) for s in slots], weights) for f in OutcomeRates.FIELDS]
    return OutcomeRates(*fields, slots=sum(s.slots for s in slots))


@dataclass
class ModelReport:
    label: str
    rates: OutcomeRates
    mean_score: Fraction
    per_slot: dict[int, OutcomeRates]
    per_slot_score: dict[int, Fraction]
    games: int


def aggregate_metrics(results: Sequence[GameResult]) -> dict[str, ModelReport]:
    """Outcome rates and mean C-Diplo score per model label.

    Every power a model controls in a game is one slot. Slots are numbered
    1..k inside each game in board power order; a model's overall rate is the
    slot-count weighted average of its per-slot rates, which equals the pooled
    fraction over all its slots.
    """
    if not results:
        raise ValueError("no results to aggregate")
    slot_counts: dict[str, dict[int, dict[Outcome, int]]] = defaultdict(lambda: defaultdict(lambda: defaultdict(int)))
    slot_scores: dict[str, dict[int, list[Fraction]]] = defaultdict(lambda: defaultdict(list))
    games: dict[str, int] = defaultdict(int)
    for res in results:
        scores = score_cdiplo(res)
        seen: dict[str, int] = defaultdict(int)
        for power in res.powers:
            label = res.labels.get(power)
            if not label:
                raise ScoringError(f"power {power} has no model label")
            seen[label] += 1
            slot = seen[label]
            slot_counts[label][slot][Outcome(res.outcomes[power])] += 1
            slot_scores[label][slot].append(scores[power])
        for label in seen:
            games[label] += 1

    reports = {}
    for label in sorted(slot_counts):
        per_slot = {s: OutcomeRates.from_counts(c) for s, c in sorted(slot_counts[label].items())}
        overall = combine_slot_rates(list(per_slot.values()), [r.slots for r in per_slot.values()])
        all_scores = [x for s in sorted(slot_scores[label]) for x in slot_scores[label][s]]
        reports[label] = ModelReport(
            label=label,
            rates=overall,
            mean_score=sum(all_scores, Fraction(0)) / len(all_scores),
            per_slot=per_slot,
            per_slot_score={s: sum(v, Fraction(0)) / len(v) for s, v in sorted(slot_scores[label].items())},
            games=games[label],
        )
    return reports


RATE_COLUMNS = ("Model", "Win", "Most SC", "Survived", "Defeated")


def rates_table(reports: Mapping[str, ModelReport], per_slot: bool = True) -> list[list[str]]:
    """Rows laid out like the win-rate tables: per-slot rows, then one aggregate row per model."""
    rows = [list(RATE_COLUMNS)]
    if per_slot:
        for label, rep in reports.items():
            for slot, rates in rep.per_slot.items():
                rows.append([f"{label}_{slot}", *(f"{p}%" for p in rates.percentages())])
    for label, rep in reports.items():
        rows.append([label, *(f"{p}%" for p in rep.rates.percentages())])
    return rows


def score_table(reports: Mapping[str, ModelReport]) -> list[list[str]]:
    rows = [["Model", "Mean score", "Slots", "Games"]]
    for label, rep in reports.items():
        rows.append([label, str(round_half_up(rep.mean_score)), str(rep.rates.slots), str(rep.games)])
    return rows


def to_csv(rows: Sequence[Sequence[str]]) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def to_markdown(rows: Sequence[Sequence[str]]) -> str:
    head, *body = rows
    lines = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
    lines += ["| " + " | ".join(r) + " |" for r in body]
    return "\n".join(lines) + "\n"
