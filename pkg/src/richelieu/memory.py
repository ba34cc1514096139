"""Experience memory: archived turns, sub-goal evaluation, honesty bookkeeping, retrieval.

The store is append-only. Only three things change after a record is logged:
its evaluation ``lam`` (until ``frozen`` is set) and its per-opponent
truthfulness flags. Credibility is a separate per-game table.

File format (JSON lines, UTF-8, keys sorted)::

    {"format": "richelieu-memory", "next_id": 3, "version": 1}
    {"actions": {...}, "frozen": false, "game_id": "g0", "id": 1, ...}
    ...
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping, Sequence

from .domain import Commitment, CommitmentType, LongTermGoal, NegotiationMessage, SubGoal
from .llm import BackendError, ChatSession, ExtractionError, extract_structured, load_template, render_template
from .maps import load_standard_map, province_of
from .orders import Order, OrderError, OrderKind, format_order, parse_order

__all__ = [
    "MemoryRecord",
    "MemoryStore",
    "CredibilityTable",
    "Retrieval",
    "MemoryError_",
    "MemoryInputError",
    "MemoryLoadError",
    "MigrationError",
    "PersistenceError",
    "log_turn",
    "evaluate_subgoal",
    "update_truthfulness",
    "commitment_honored",
    "update_credibility",
    "retrieve_planning",
    "retrieve_negotiation",
    "persist",
    "load",
    "merge_shards",
    "ALPHA",
    "GAMMA0",
]

log = logging.getLogger(__name__)

FORMAT = "richelieu-memory"
VERSION = 1
ALPHA = 0.3
GAMMA0 = 0.5
PLANNING_WEIGHTS = (0.5, 0.3, 0.2)
NEGOTIATION_WEIGHTS = (0.6, 0.4)
DIVERSITY_THRESHOLD = 0.95


class MemoryError_(Exception):
    """Base class for memory-store failures (underscore avoids the builtin)."""


class MemoryInputError(MemoryError_, ValueError):
    pass


class PersistenceError(MemoryError_, OSError):
    pass


class MemoryLoadError(MemoryError_, ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class MigrationError(MemoryError_, ValueError):
    pass


@dataclass
class MemoryRecord:
    """One archived turn from one agent's point of view.

    ``state`` is a :meth:`GameState.digest`; ``actions`` maps each power to its
    orders in the order language; ``truthfulness`` maps an opponent who sent
    messages that turn to 1 (kept its word), 0 (did not) or ``None`` (unknown).
    """

    game_id: str
    turn: int
    owner: str
    state: Mapping[str, Any]
    subgoal: SubGoal
    messages: tuple[NegotiationMessage, ...]
    actions: Mapping[str, Sequence[str]]
    lam: float | None = None
    frozen: bool = False
    truthfulness: dict[str, int | None] = field(default_factory=dict)
    id: int | None = None

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "game_id": self.game_id,
            "turn": self.turn,
            "owner": self.owner,
            "state": self.state,
            "subgoal": self.subgoal.to_dict(),
            "messages": [m.to_dict() for m in self.messages],
            "actions": {p: list(v) for p, v in self.actions.items()},
            "lam": self.lam,
            "frozen": self.frozen,
            "truthfulness": dict(self.truthfulness),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "MemoryRecord":
        return cls(
            id=data["id"],
            game_id=data["game_id"],
            turn=int(data["turn"]),
            owner=data["owner"],
            state=data["state"],
            subgoal=SubGoal.from_dict(data["subgoal"]),
            messages=tuple(NegotiationMessage.from_dict(m) for m in data["messages"]),
            actions={p: list(v) for p, v in data["actions"].items()},
            lam=data["lam"],
            frozen=bool(data["frozen"]),
            truthfulness=dict(data["truthfulness"]),
        )


# ----------------------------------------------------------------- similarity

_WORD = re.compile(r"[a-z0-9]+")


def tokens(text: str) -> frozenset[str]:
    return frozenset(_WORD.findall(text.lower()))


def jaccard(a: frozenset, b: frozenset) -> float:
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


def state_features(digest: Mapping[str, Any]) -> tuple[frozenset, frozenset]:
    owned = frozenset((p, sc) for p, scs in digest.get("ownership", {}).items() for sc in scs)
    units = frozenset((p, k, province_of(loc)) for p, k, loc in digest.get("units", ()))
    return owned, units


@dataclass(frozen=True)
class _Features:
    owned: frozenset
    units: frozenset
    goal: frozenset


def _features(record: MemoryRecord) -> _Features:
    owned, units = state_features(record.state)
    return _Features(owned, units, tokens(record.subgoal.text))


def _planning_sim(a: _Features, b: _Features, weights=PLANNING_WEIGHTS) -> float:
    ws, wu, wg = weights
    return ws * jaccard(a.owned, b.owned) + wu * jaccard(a.units, b.units) + wg * jaccard(a.goal, b.goal)


# ---------------------------------------------------------------------- store

class MemoryStore:
    """Append-only record sequence.

    A store may sit on top of a read-only ``base``: retrieval sees both, new
    ids continue after the base's ``next_id``, and only the store's own
    records are persisted. Self-play games write to such overlays (shards)
    that are merged back into the base afterwards.
    """

    def __init__(self, records: Iterable[MemoryRecord] = (), next_id: int = 1, base: "MemoryStore | None" = None):
        self.base = base
        self.next_id = max(next_id, base.next_id if base is not None else 1)
        self.first_id = self.next_id
        self._records: list[MemoryRecord] = []
        self._by_id: dict[int, MemoryRecord] = {}
        self._features: dict[int, _Features] = {}
        for rec in records:
            self._insert(rec)

    def _insert(self, rec: MemoryRecord) -> None:
        if rec.id is None or rec.id in self._by_id:
            raise MemoryInputError(f"record id {rec.id!r} missing or duplicated")
        self._records.append(rec)
        self._by_id[rec.id] = rec
        self._features[rec.id] = _features(rec)
        self.next_id = max(self.next_id, rec.id + 1)

    @property
    def own_records(self) -> tuple[MemoryRecord, ...]:
        return tuple(self._records)

    def records(self) -> Iterator[MemoryRecord]:
        if self.base is not None:
            yield from self.base.records()
        yield from self._records

    def __len__(self) -> int:
        return len(self._records) + (len(self.base) if self.base is not None else 0)

    def get(self, record_id: int) -> MemoryRecord:
        if record_id in self._by_id:
            return self._by_id[record_id]
        if self.base is not None:
            return self.base.get(record_id)
        raise KeyError(f"no memory record {record_id}")

    def features(self, record_id: int) -> _Features:
        if record_id in self._features:
            return self._features[record_id]
        if self.base is not None:
            return self.base.features(record_id)
        raise KeyError(f"no memory record {record_id}")

    def append(self, record: MemoryRecord) -> int:
        return log_turn(self, record)

    def overlay(self) -> "MemoryStore":
        return MemoryStore(base=self)


def log_turn(store: MemoryStore, record: MemoryRecord) -> int:
    """Append ``record`` and return its new id."""
    if not record.actions:
        raise MemoryInputError("record has no actions")
    for name in ("game_id", "owner", "state", "subgoal"):
        if not getattr(record, name):
            raise MemoryInputError(f"record is missing {name}")
    if record.id is not None:
        raise MemoryInputError("record already has an id")
    record.id = store.next_id
    store._insert(record)
    return record.id


# ----------------------------------------------------------------- persistence

def _dump(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False)


def persist(store: MemoryStore, path: str | Path) -> None:
    """Write the store's own records (never the base) to ``path``."""
    lines = [_dump({"format": FORMAT, "version": VERSION, "next_id": store.next_id})]
    lines += [_dump(r.to_dict()) for r in store.own_records]
    try:
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as exc:
        raise PersistenceError(f"cannot write memory file {path}: {exc}") from exc


def load(path: str | Path) -> MemoryStore:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise MemoryLoadError(f"cannot read memory file {path}: {exc}") from None
    lines = text.splitlines()
    if not lines:
        raise MemoryLoadError("empty file, expected a header", 1)
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise MemoryLoadError(f"bad header: {exc}", 1) from None
    if not isinstance(header, dict) or header.get("format") != FORMAT:
        raise MemoryLoadError("not a memory file", 1)
    if header.get("version") != VERSION:
        raise MigrationError(f"memory file version {header.get('version')} needs migration to {VERSION}")
    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            records.append(MemoryRecord.from_dict(json.loads(line)))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise MemoryLoadError(f"corrupt record ({type(exc).__name__}: {exc})", lineno) from None
    try:
        return MemoryStore(records, next_id=int(header.get("next_id", 1)))
    except MemoryInputError as exc:
        raise MemoryLoadError(str(exc)) from None


def merge_shards(base: MemoryStore, shards: Sequence[MemoryStore]) -> int:
    """Append every shard's records to ``base`` in shard order; returns records added.

    Shards get fresh ids in the base; each shard's own numbering is discarded.
    """
    added = 0
    for shard in shards:
        for rec in shard.own_records:
            copy = MemoryRecord.from_dict({**rec.to_dict(), "id": base.next_id})
            base._insert(copy)
            added += 1
    return added


# ------------------------------------------------------------------ credibility

@dataclass
class CredibilityTable:
    """Per-opponent honesty score, reset at the start of every game."""

    alpha: float = ALPHA
    initial: float = GAMMA0
    values: dict[str, float] = field(default_factory=dict)
    history: dict[str, list[float]] = field(default_factory=dict)

    def reset(self, opponents: Iterable[str]) -> None:
        self.values = {p: self.initial for p in opponents}
        self.history = {p: [self.initial] for p in self.values}

    def get(self, opponent: str) -> float:
        return self.values.get(opponent, self.initial)


def update_credibility(table: CredibilityTable, opponent: str, tau: int | None) -> float:
    """EMA update ``gamma <- (1 - alpha) * gamma + alpha * tau``; unknown tau leaves gamma alone."""
    gamma = table.get(opponent)
    if tau is None:
        return gamma
    if tau not in (0, 1):
        raise ValueError(f"truthfulness must be 0, 1 or None, got {tau!r}")
    new = min(1.0, max(0.0, (1 - table.alpha) * gamma + table.alpha * tau))
    table.values[opponent] = new
    table.history.setdefault(opponent, [gamma]).append(new)
    return new


# ----------------------------------------------------------------- evaluation

def _sc_count(digest: Mapping[str, Any], power: str) -> int:
    return len(digest.get("ownership", {}).get(power, ()))


def _digest(state: Any) -> Mapping[str, Any]:
    return state.digest() if hasattr(state, "digest") else state


def objective_signal(delta: int) -> float:
    return float(min(10, max(0, 5 + delta)))


def describe_digest(digest: Mapping[str, Any]) -> str:
    own = digest.get("ownership", {})
    parts = [f"{p} holds {len(scs)}" for p, scs in sorted(own.items())]
    return f"{digest.get('phase', '?')} {digest.get('year', '?')} ({', '.join(parts)})"


def evaluate_subgoal(
    store: MemoryStore,
    record_id: int,
    long_term: LongTermGoal,
    trajectory: Sequence[Any],
    backend=None,
    current_subgoal: SubGoal | None = None,
) -> float | None:
    """Re-score an archived sub-goal against what happened since.

    ``lam = 0.5 * judge + 0.5 * clamp(5 + delta, 0, 10)`` with ``delta`` the
    owner's centre change from the record's turn to the end of ``trajectory``.
    Without a working judge the objective half alone is used. Once the
    owner's current sub-goal fundamentally differs from the archived one the
    record is frozen and its score never changes again.
    """
    rec = store.get(record_id)
    if rec.frozen:
        return rec.lam
    digests = [_digest(s) for s in trajectory] or [rec.state]
    delta = _sc_count(digests[-1], rec.owner) - _sc_count(rec.state, rec.owner)
    objective = objective_signal(delta)
    changed = current_subgoal is not None and current_subgoal.fundamentally_differs(rec.subgoal)
    if changed and rec.lam is not None:
        rec.frozen = True
        return rec.lam

    judge = None
    if backend is not None:
        prompt = render_template(load_template("memory_eval"), {
            "country": rec.owner,
            "subgoal": rec.subgoal.text,
            "state": describe_digest(rec.state),
            "long_term": long_term.text,
            "trajectory": "\n".join(describe_digest(d) for d in digests),
        })
        context = {"task": "memory_eval", "record": rec, "trajectory": digests, "delta": delta,
                   "long_term": long_term}
        session = ChatSession(backend)
        try:
            judge = float(extract_structured(session.complete(prompt, context), "evaluation", session, context)["score"])
        except (BackendError, ExtractionError) as exc:
            log.info("sub-goal evaluation degraded to objective signal: %s", exc)
    lam = objective if judge is None else 0.5 * judge + 0.5 * objective
    rec.lam = lam
    if changed:
        rec.frozen = True
    return lam


# --------------------------------------------------------------- truthfulness

def _as_orders(actions: Iterable[Order | str], power: str, graph) -> list[Order]:
    out = []
    for a in actions:
        if isinstance(a, Order):
            out.append(a)
            continue
        try:
            out.append(parse_order(a, power=power, graph=graph))
        except OrderError:
            log.info("ignoring unreadable order %r", a)
    return out


def _targets(order: Order) -> set[str]:
    """Provinces an order moves or supports into."""
    if order.kind is OrderKind.MOVE:
        return {province_of(order.target)}
    if order.kind is OrderKind.SUPPORT_MOVE:
        return {province_of(order.aux_to)}
    return set()


def _power_footprint(digest: Mapping[str, Any], power: str) -> set[str]:
    scs = set(digest.get("ownership", {}).get(power, ()))
    units = {province_of(loc) for p, _, loc in digest.get("units", ()) if p == power}
    return scs | units


def commitment_honored(commitment: Commitment, orders: Sequence[Order], before: Mapping[str, Any],
                       recipient: str) -> bool:
    """Deterministic check of one commitment against the sender's orders."""
    t = commitment.type
    if t is CommitmentType.NON_AGGRESSION:
        return not any(_targets(o) & commitment.provinces for o in orders)
    if t is CommitmentType.SUPPORT_ORDER:
        try:
            wanted = format_order(parse_order(commitment.order))
        except OrderError:
            return False
        return any(format_order(o) == wanted for o in orders)
    if t is CommitmentType.CEASEFIRE:
        protected = _power_footprint(before, commitment.power or recipient)
        return not any(_targets(o) & protected for o in orders)
    footprint = _power_footprint(before, commitment.power)
    return any(_targets(o) & footprint for o in orders)


def update_truthfulness(
    store: MemoryStore,
    record_id: int,
    opponent: str,
    before: Any,
    after: Any,
    actions: Iterable[Order | str],
    message: NegotiationMessage,
    backend=None,
) -> int | None:
    """Judge whether ``opponent`` kept ``message`` and record it.

    Commitments are checked mechanically. A message without commitments goes
    to the backend; no backend or a failed judgement yields ``None``. Several
    messages from one opponent in a turn combine to the minimum.
    """
    rec = store.get(record_id)
    before_d, after_d = _digest(before), _digest(after)
    graph = getattr(before, "graph", None) or load_standard_map()
    orders = _as_orders(actions, opponent, graph)
    tau: int | None
    if message.commitments:
        ok = all(commitment_honored(c, orders, before_d, message.recipient) for c in message.commitments)
        tau = int(ok)
    elif backend is not None:
        prompt = render_template(load_template("truthfulness"), {
            "sender": opponent,
            "recipient": message.recipient,
            "message": message.text,
            "orders": ", ".join(format_order(o) for o in orders) or "none",
            "before": describe_digest(before_d),
            "after": describe_digest(after_d),
        })
        context = {"task": "truthfulness", "message": message, "orders": orders, "before": before_d,
                   "after": after_d}
        session = ChatSession(backend)
        try:
            tau = int(bool(extract_structured(session.complete(prompt, context), "truthfulness", session,
                                              context)["honest"]))
        except (BackendError, ExtractionError) as exc:
            log.info("truthfulness judgement unavailable: %s", exc)
            tau = None
    else:
        tau = None
    prev = rec.truthfulness.get(opponent)
    if tau is not None and prev is not None:
        tau = min(prev, tau)
    elif tau is None:
        tau = prev
    rec.truthfulness[opponent] = tau
    return tau


# ------------------------------------------------------------------ retrieval

@dataclass(frozen=True)
class Retrieval:
    record: MemoryRecord
    similarity: float
    truthfulness: int | None = None


def retrieve_planning(
    store: MemoryStore,
    state: Any,
    subgoal: SubGoal,
    m: int = 5,
    *,
    owner: str | None = None,
    weights: tuple[float, float, float] = PLANNING_WEIGHTS,
    threshold: float = DIVERSITY_THRESHOLD,
) -> list[Retrieval]:
    """Top-``m`` similar past turns, skipping near-duplicates of anything already chosen.

    Similarity is ``0.5 * centre-ownership Jaccard + 0.3 * unit Jaccard +
    0.2 * goal-word Jaccard``. Equal scores go to the newer record.
    """
    if m < 0:
        raise ValueError("m must be non-negative")
    if m == 0:
        return []
    owned, units = state_features(_digest(state))
    query = _Features(owned, units, tokens(subgoal.text))
    scored = []
    for rec in store.records():
        if owner is not None and rec.owner != owner:
            continue
        scored.append((_planning_sim(query, store.features(rec.id), weights), rec))
    scored.sort(key=lambda x: (-x[0], -x[1].id))
    chosen: list[Retrieval] = []
    for sim, rec in scored:
        f = store.features(rec.id)
        if any(_planning_sim(f, store.features(c.record.id), weights) > threshold for c in chosen):
            continue
        chosen.append(Retrieval(rec, sim))
        if len(chosen) == m:
            break
    return chosen


def _message_sim(a: NegotiationMessage, b: NegotiationMessage) -> float:
    text = jaccard(tokens(a.text), tokens(b.text))
    kinds = jaccard(frozenset(c.type for c in a.commitments), frozenset(c.type for c in b.commitments))
    return (text + kinds) / 2


def retrieve_negotiation(
    store: MemoryStore,
    state: Any,
    message: NegotiationMessage,
    k: int = 3,
    *,
    weights: tuple[float, float] = NEGOTIATION_WEIGHTS,
) -> list[Retrieval]:
    """Past turns in which the same sender wrote something similar, with what it was worth.

    Score is ``0.6 * message similarity + 0.4 * centre-ownership Jaccard``,
    message similarity being the mean of word Jaccard and commitment-type
    Jaccard. Each hit carries the record's truthfulness flag for the sender.
    """
    if k <= 0:
        return []
    owned, _ = state_features(_digest(state))
    wm, ws = weights
    scored = []
    for rec in store.records():
        past = [m for m in rec.messages if m.sender == message.sender and m.recipient == rec.owner]
        if not past:
            continue
        msg_sim = max(_message_sim(message, m) for m in past)
        score = wm * msg_sim + ws * jaccard(owned, store.features(rec.id).owned)
        scored.append((score, rec))
    scored.sort(key=lambda x: (-x[0], -x[1].id))
    return [Retrieval(rec, s, rec.truthfulness.get(message.sender)) for s, rec in scored[:k]]


def credibility_closed_form(n: int, gamma0: float = GAMMA0, alpha: float = ALPHA, tau: int = 0) -> float:
    """Credibility after ``n`` identical updates, for checking the EMA."""
    return tau + (gamma0 - tau) * (1 - alpha) ** n

