"""Event and scene vocabularies with a fixed, persisted ordering.

Class indices are meaningful across runs (saved models, cached targets),
so a vocabulary is an ordered list that can be written to and reloaded
from a manifest file.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ConfigError


class Vocabulary:
    """An ordered, duplicate-free list of class names."""

    def __init__(self, names: Sequence[str]):
        names = list(names)
        if len(set(names)) != len(names):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise ConfigError(f"duplicate vocabulary entries: {dupes}")
        if not names:
            raise ConfigError("vocabulary must not be empty")
        self._names = names
        self._index = {name: i for i, name in enumerate(names)}

    @classmethod
    def from_unordered(cls, names: Iterable[str]) -> "Vocabulary":
        """Build with the default alphabetical ordering."""
        return cls(sorted(set(names)))

    @property
    def names(self) -> list[str]:
        return list(self._names)

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise ConfigError(
                f"unknown label {name!r}; vocabulary is {self._names}"
            ) from None

    def __contains__(self, name: str) -> bool:
        return name in self._index

    def __len__(self) -> int:
        return len(self._names)

    def __iter__(self):
        return iter(self._names)

    def __getitem__(self, i: int) -> str:
        return self._names[i]

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self._names == other._names

    def __repr__(self) -> str:
        return f"Vocabulary({self._names!r})"


def save_vocab(path: str | Path, events: Vocabulary, scenes: Vocabulary) -> None:
    payload = {"events": events.names, "scenes": scenes.names}
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def load_vocab(path: str | Path) -> tuple[Vocabulary, Vocabulary]:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    return Vocabulary(payload["events"]), Vocabulary(payload["scenes"])
