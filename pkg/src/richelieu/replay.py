"""Replay files: a header line, one line per resolved phase, and a result line.

All lines are canonical JSON (sorted keys, compact separators), so equal
games give byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

from .scoring import GameResult

__all__ = ["FORMAT", "VERSION", "ReplayError", "Replay", "canonical", "digest_of", "write_replay", "read_replay",
           "phase_record"]

FORMAT = "richelieu-replay"
VERSION = 1


class ReplayError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


def canonical(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def digest_of(obj: Any) -> str:
    return hashlib.sha256(canonical(obj).encode()).hexdigest()[:16]


@dataclass
class Replay:
    seed: int
    config: dict
    phases: list[dict] = field(default_factory=list)
    result: GameResult | None = None
    scores: dict[str, str] = field(default_factory=dict)

    @property
    def config_digest(self) -> str:
        return digest_of(self.config)

    def header(self) -> dict:
        return {"format": FORMAT, "version": VERSION, "seed": self.seed, "config_digest": self.config_digest,
                "config": self.config}

    def lines(self) -> list[str]:
        out = [canonical(self.header())]
        out += [canonical({"phase": p}) for p in self.phases]
        if self.result is not None:
            out.append(canonical({"result": self.result.to_dict(), "scores": self.scores}))
        return out

    def dumps(self) -> str:
        return "\n".join(self.lines()) + "\n"

    @property
    def messages(self) -> list[dict]:
        return [m for p in self.phases for m in p.get("messages", ())]


def write_replay(path: str | Path, replay: Replay) -> None:
    Path(path).write_text(replay.dumps(), encoding="utf-8")


def read_replay(path: str | Path) -> Replay:
    """Parse and sanity-check a replay; defects raise :class:`ReplayError` with a line number."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ReplayError(f"cannot read {path}: {exc.strerror or exc}") from exc
    rows = text.splitlines()
    if not rows:
        raise ReplayError("empty replay file")
    parsed: list[Mapping] = []
    for i, raw in enumerate(rows, start=1):
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ReplayError(f"invalid JSON ({exc.msg})", i) from exc
        if not isinstance(obj, dict):
            raise ReplayError("expected a JSON object", i)
        parsed.append(obj)
    head = parsed[0]
    if head.get("format") != FORMAT:
        raise ReplayError(f"not a replay file (format {head.get('format')!r})", 1)
    if head.get("version") != VERSION:
        raise ReplayError(f"unsupported replay version {head.get('version')!r}", 1)
    replay = Replay(seed=head["seed"], config=head["config"])
    if replay.config_digest != head.get("config_digest"):
        raise ReplayError("config digest does not match the embedded config", 1)
    for i, obj in enumerate(parsed[1:], start=2):
        if "phase" in obj:
            if replay.result is not None:
                raise ReplayError("phase after the result line", i)
            for key in ("year", "phase", "orders", "outcomes", "state"):
                if key not in obj["phase"]:
                    raise ReplayError(f"phase record lacks {key!r}", i)
            replay.phases.append(obj["phase"])
        elif "result" in obj:
            try:
                replay.result = GameResult.from_dict(obj["result"])
            except (KeyError, TypeError, ValueError) as exc:
                raise ReplayError(f"malformed result ({exc})", i) from exc
            replay.scores = dict(obj.get("scores", {}))
        else:
            raise ReplayError("unknown record type", i)
    return replay


def phase_record(year: int, phase: str, orders: Mapping[str, Sequence[str]], outcomes: Sequence[Sequence[str]],
                 messages: Sequence[Mapping], state: Mapping, extra: Mapping | None = None) -> dict:
    """``outcomes`` holds ``[power, order, outcome]`` triples in adjudication order."""
    rec = {"year": year, "phase": phase, "orders": {p: list(o) for p, o in orders.items()},
           "outcomes": [list(t) for t in outcomes], "messages": list(messages), "state": dict(state)}
    if extra:
        rec.update(extra)
    return rec
