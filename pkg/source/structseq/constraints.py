import collections
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterator, List, Sequence, Tuple, Union

import numpy as np

from .core import DataError, FORMAT_VERSION, Serialization, StateKey, StructureBackend
from .misc import atomic_write

logger = logging.getLogger(__name__)

DEFAULT_DENSE_BUDGET = 10_000_000

Entry = Tuple[int, int, int]


class DenseBudgetExceeded(DataError):
    pass


@dataclass(frozen=True)
class ConstraintMatrix:
    """
    Sparse binary relation C[j, k, t]: serializations j < k of a batch share a state after t elements.  Entries are
    sorted by t then (j, k).
    """
    entries: Tuple[Entry, ...]
    batch_size: int
    max_t: int

    def __len__(self):
        return len(self.entries)

    def __iter__(self) -> Iterator[Entry]:
        return iter(self.entries)

    def __contains__(self, item) -> bool:
        j, k, t = item
        if j > k:
            j, k = k, j
        return (j, k, t) in self._entry_set

    @property
    def _entry_set(self):
        cached = self.__dict__.get('_cached_entry_set')
        if cached is None:
            cached = frozenset(self.entries)
            object.__setattr__(self, '_cached_entry_set', cached)
        return cached

    def as_arrays(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(j, k, t) columns as integer arrays"""
        if not self.entries:
            empty = np.zeros(0, dtype=np.int64)
            return empty, empty, empty
        array = np.array(self.entries, dtype=np.int64)
        return array[:, 0], array[:, 1], array[:, 2]

    def to_dense(self, budget: int = DEFAULT_DENSE_BUDGET) -> np.ndarray:
        """
        Boolean array indexed [t, j, k], symmetric in j and k.
        """
        size = (self.max_t + 1) * self.batch_size * self.batch_size
        if size > budget:
            raise DenseBudgetExceeded(f"Dense constraint matrix needs {size} cells, budget is {budget}")
        dense = np.zeros((self.max_t + 1, self.batch_size, self.batch_size), dtype=bool)
        j, k, t = self.as_arrays()
        dense[t, j, k] = True
        dense[t, k, j] = True
        return dense

    def write_jsonl(self, path: Union[str, Path]):
        with atomic_write(path) as file:
            for j, k, t in self.entries:
                file.write(json.dumps({"version": FORMAT_VERSION, "j": j, "k": k, "t": t}))
                file.write('\n')


def constraint_matrix_from_states(states: Sequence[Sequence[StateKey]]) -> ConstraintMatrix:
    """
    Group (t, state) pairs in one hash table, then pair up the members of each group.
    """
    groups: Dict[Tuple[int, StateKey], List[int]] = collections.defaultdict(list)
    for index, trajectory in enumerate(states):
        for t, state in enumerate(trajectory):
            groups[(t, state)].append(index)

    entries = []
    for (t, _), members in groups.items():
        if len(members) < 2:
            continue
        for position, j in enumerate(members):
            for k in members[position + 1:]:
                entries.append((j, k, t))
    entries.sort(key=lambda entry: (entry[2], entry[0], entry[1]))
    max_t = max((len(trajectory) - 1 for trajectory in states), default=0)
    logger.debug(f"{len(entries)} constraint(s) from {len(groups)} distinct (step, state) pairs")
    return ConstraintMatrix(tuple(entries), len(states), max_t)


def build_constraint_matrix(batch: Sequence[Serialization], backend: StructureBackend) -> ConstraintMatrix:
    """
    Replay every serialization once and match equal states at equal steps, across instances too.
    """
    return constraint_matrix_from_states([backend.replay_states(serialization) for serialization in batch])
