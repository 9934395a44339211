from __future__ import annotations

import logging
import sys
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional, TypeVar

from tqdm import tqdm

logger = logging.getLogger(__name__)

T = TypeVar("T")


def track(items: Iterable[T], total: int | None, desc: str, enabled: bool) -> Iterator[T]:
    """Wrap an iterable in a tqdm bar when enabled."""
    if not enabled:
        yield from items
        return
    with tqdm(items, total=total, desc=desc, leave=False) as bar:
        yield from bar


@dataclass
class LatticeStats:
    w_max: int = 0
    levels_done: int = 0
    classes_evaluated: int = 0
    classes_stored: int = 0
    classes_pruned: int = 0
    classes_divergent: int = 0
    stored_per_level: dict[int, int] = field(default_factory=dict)


class LatticeProgress:
    def __init__(self, w_max: int, no_progress: bool = False) -> None:
        self.stats = LatticeStats(w_max=w_max)
        self._no_progress = no_progress
        self._level_bar: Optional[tqdm] = None
        self._class_bar: Optional[tqdm] = None

        if not no_progress:
            self._level_bar = tqdm(
                total=w_max,
                desc="Levels",
                unit="level",
                position=0,
                leave=True,
            )

    def start_level(self, weight: int, n_candidates: int) -> None:
        self.stats.stored_per_level.setdefault(weight, 0)
        if self._level_bar:
            self._level_bar.set_postfix_str(f"w={weight} candidates={n_candidates}", refresh=False)
        if not self._no_progress and n_candidates > 0:
            if self._class_bar:
                self._class_bar.close()
            self._class_bar = tqdm(
                total=n_candidates,
                desc=f"  Classes w={weight}",
                unit="class",
                position=1,
                leave=False,
            )

    def record_class(self, weight: int, stored: bool, divergent: bool = False) -> None:
        self.stats.classes_evaluated += 1
        if stored:
            self.stats.classes_stored += 1
            self.stats.stored_per_level[weight] = self.stats.stored_per_level.get(weight, 0) + 1
        else:
            self.stats.classes_pruned += 1
            if divergent:
                self.stats.classes_divergent += 1
        if self._class_bar:
            self._class_bar.update(1)

    def finish_level(self) -> None:
        self.stats.levels_done += 1
        if self._level_bar:
            self._level_bar.update(1)

    def close(self) -> None:
        if self._class_bar:
            self._class_bar.close()
        if self._level_bar:
            self._level_bar.close()
        if not self._no_progress:
            self._print_summary()

    def _print_summary(self) -> None:
        s = self.stats
        per_level = ", ".join(f"w{w}={n}" for w, n in sorted(s.stored_per_level.items()))
        print(
            f"\n--- Lattice summary ---\n"
            f"  Levels searched : {s.levels_done}/{s.w_max}\n"
            f"  Classes tested  : {s.classes_evaluated}\n"
            f"  Stored          : {s.classes_stored} ({per_level})\n"
            f"  Pruned          : {s.classes_pruned}\n"
            f"  Divergent       : {s.classes_divergent}\n",
            file=sys.stderr,
        )
