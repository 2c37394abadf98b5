from typing import Dict, FrozenSet, Iterator, Set, Tuple

from structseq.core import EOS, LexiconElement, Serialization, StateKey, StructureBackend, replay_states
from structseq.structures import TreeNode


def tree(label: str, *children: TreeNode) -> TreeNode:
    return TreeNode(label, tuple(children))


def serialization(*symbols: str) -> Serialization:
    return Serialization.of(*symbols)


def walk_prefixes(backend: StructureBackend, instance) -> Iterator[Tuple[Tuple[LexiconElement, ...], object]]:
    """Every reachable (prefix, state) pair of the instance, found by following candidate_next_elements"""
    stack = [((), backend.initial_state())]
    while stack:
        prefix, state = stack.pop()
        yield prefix, state
        if prefix and prefix[-1].symbol == EOS:
            continue
        for element in backend.candidate_next_elements(instance, state, prefix):
            stack.append((prefix + (element,), backend.transition(state, element)))


def streamed_serializations(backend: StructureBackend, instance) -> Set[Tuple[LexiconElement, ...]]:
    return {prefix for prefix, _ in walk_prefixes(backend, instance) if prefix and prefix[-1].symbol == EOS}


def enumerated(backend: StructureBackend, instance, bound: int = 100_000) -> Set[Tuple[LexiconElement, ...]]:
    return {item.elements for item in backend.enumerate_serializations(instance, bound)}


def prefix_states_and_suffixes(backend: StructureBackend, instance, bound: int = 100_000
                               ) -> Tuple[Dict[tuple, StateKey], Dict[tuple, FrozenSet[tuple]]]:
    """
    For every prefix of every serialization of the instance: its state, and the set of suffixes completing it.
    """
    states: Dict[tuple, StateKey] = {}
    suffixes: Dict[tuple, Set[tuple]] = {}
    for item in backend.enumerate_serializations(instance, bound):
        replayed = replay_states(backend, item)
        for t in range(len(item) + 1):
            prefix = item.elements[:t]
            states[prefix] = replayed[t]
            suffixes.setdefault(prefix, set()).add(item.elements[t:])
    return states, {prefix: frozenset(items) for prefix, items in suffixes.items()}


def equal_states_have_equal_suffixes(backend: StructureBackend, instance) -> bool:
    states, suffixes = prefix_states_and_suffixes(backend, instance)
    by_state: Dict[StateKey, Set[FrozenSet[tuple]]] = {}
    for prefix, state in states.items():
        by_state.setdefault(state, set()).add(suffixes[prefix])
    return all(len(groups) == 1 for groups in by_state.values())


def equal_suffixes_have_equal_states(backend: StructureBackend, instance) -> bool:
    states, suffixes = prefix_states_and_suffixes(backend, instance)
    by_suffixes: Dict[FrozenSet[tuple], Set[StateKey]] = {}
    for prefix, state in states.items():
        by_suffixes.setdefault(suffixes[prefix], set()).add(state)
    return all(len(groups) == 1 for groups in by_suffixes.values())
