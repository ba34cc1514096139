"""Plain value types shared by the agent and memory layers."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Any, Mapping

__all__ = [
    "SubGoal",
    "LongTermGoal",
    "LONG_TERM_GOAL",
    "DEFAULT_SUBGOAL",
    "CommitmentType",
    "Commitment",
    "NegotiationMessage",
]


@dataclass(frozen=True)
class SubGoal:
    text: str
    focus_powers: frozenset[str] = frozenset()
    focus_provinces: frozenset[str] = frozenset()
    horizon: int = 2

    def fundamentally_differs(self, other: "SubGoal") -> bool:
        """True when the two goals share no focus power and no focus province.

        Identical text is never a change, even when both focus sets are empty.
        """
        if self.text == other.text:
            return False
        return not (self.focus_powers & other.focus_powers) and not (self.focus_provinces & other.focus_provinces)

    def to_dict(self) -> dict:
        return {
            "text": self.text,
            "focus_powers": sorted(self.focus_powers),
            "focus_provinces": sorted(self.focus_provinces),
            "horizon": self.horizon,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "SubGoal":
        return cls(
            text=str(data["text"]),
            focus_powers=frozenset(str(p).upper() for p in data.get("focus_powers", ())),
            focus_provinces=frozenset(str(p).upper() for p in data.get("focus_provinces", ())),
            horizon=int(data.get("horizon", 2)),
        )


@dataclass(frozen=True)
class LongTermGoal:
    text: str = "Control at least 18 supply centers and survive until then."
    centers: int = 18


LONG_TERM_GOAL = LongTermGoal()
DEFAULT_SUBGOAL = SubGoal("secure adjacent neutral supply centers")


class CommitmentType(str, enum.Enum):
    NON_AGGRESSION = "non_aggression"
    SUPPORT_ORDER = "support_order"
    CEASEFIRE = "ceasefire"
    JOINT_ATTACK = "joint_attack"


@dataclass(frozen=True)
class Commitment:
    """A checkable promise by the sender about its own orders this turn.

    ``non_aggression`` lists provinces the sender will not move or support
    into; ``support_order`` is one exact order; ``ceasefire`` names a power
    whose units and centres the sender will leave alone; ``joint_attack``
    names a power the sender will attack.
    """

    type: CommitmentType
    provinces: frozenset[str] = frozenset()
    order: str | None = None
    power: str | None = None

    def __post_init__(self) -> None:
        t = CommitmentType(self.type)
        object.__setattr__(self, "type", t)
        if t is CommitmentType.NON_AGGRESSION and not self.provinces:
            raise ValueError("non_aggression needs provinces")
        if t is CommitmentType.SUPPORT_ORDER and not self.order:
            raise ValueError("support_order needs an order")
        if t in (CommitmentType.CEASEFIRE, CommitmentType.JOINT_ATTACK) and not self.power:
            raise ValueError(f"{t.value} needs a power")

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"type": self.type.value}
        if self.provinces:
            out["provinces"] = sorted(self.provinces)
        if self.order is not None:
            out["order"] = self.order
        if self.power is not None:
            out["power"] = self.power
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Commitment":
        return cls(
            type=CommitmentType(data["type"]),
            provinces=frozenset(str(p).upper() for p in data.get("provinces", ())),
            order=data.get("order"),
            power=str(data["power"]).upper() if data.get("power") else None,
        )


@dataclass(frozen=True)
class NegotiationMessage:
    sender: str
    recipient: str
    text: str
    commitments: tuple[Commitment, ...] = ()
    turn: int = 0
    round: int = 0

    def __post_init__(self) -> None:
        if self.sender == self.recipient:
            raise ValueError("a power cannot message itself")

    def to_dict(self) -> dict:
        return {
            "sender": self.sender,
            "recipient": self.recipient,
            "text": self.text,
            "commitments": [c.to_dict() for c in self.commitments],
            "turn": self.turn,
            "round": self.round,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "NegotiationMessage":
        return cls(
            sender=data["sender"],
            recipient=data["recipient"],
            text=data["text"],
            commitments=tuple(Commitment.from_dict(c) for c in data.get("commitments", ())),
            turn=int(data.get("turn", 0)),
            round=int(data.get("round", 0)),
        )

