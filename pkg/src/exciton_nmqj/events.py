"""Jump events emitted by the ensemble engine."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, List


class JumpDirection(str, Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"


@dataclass(frozen=True)
class JumpEvent:
    """Members moved between two groups through one channel during one step.

    `source_group` indexes the registry at the start of the step and
    `target_group` the registry after it. For negative events the source
    group is the image of the target under the channel generator.
    """

    step: int
    time: float
    site: int
    frequency: float
    direction: JumpDirection
    source_group: int
    target_group: int
    count: int

    def __post_init__(self) -> None:
        if self.count < 1:
            raise ValueError(f"count must be at least 1; got {self.count}.")

    def to_dict(self) -> Dict[str, Any]:
        """Convert event to dictionary."""
        return {
            "step": self.step,
            "time_ps": self.time,
            "site": self.site + 1,
            "omega_cm": self.frequency,
            "direction": self.direction.value,
            "source_group": self.source_group,
            "target_group": self.target_group,
            "count": self.count,
        }


@dataclass
class JumpLog:
    """Append-only record of jump events for one run."""

    events: List[JumpEvent] = field(default_factory=list)

    def extend(self, events: Iterable[JumpEvent]) -> None:
        self.events.extend(events)

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self) -> Iterator[JumpEvent]:
        return iter(self.events)

    def totals(self) -> Dict[str, int]:
        """Members moved per direction."""

        counts: Counter[str] = Counter({direction.value: 0 for direction in JumpDirection})
        for event in self.events:
            counts[event.direction.value] += event.count
        return dict(counts)

    def lines(self) -> Iterator[str]:
        for event in self.events:
            yield json.dumps(event.to_dict(), sort_keys=True)

    def write_jsonl(self, path: Path) -> Path:
        """Write one JSON object per line."""

        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8") as handle:
            for line in self.lines():
                handle.write(line + "\n")
        return path
