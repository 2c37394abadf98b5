import collections
import itertools
import math
from dataclasses import dataclass, field
from typing import Any, Counter, FrozenSet, Iterator, List, NamedTuple, Optional, Sequence, Set, Tuple

from ..core import Alphabet, DeadEnd, DuplicateName, EOS, EOS_ELEMENT, LexiconElement, MalformedSerialization, \
    StateKey, UnknownSymbol
from .base import BaseBackend
from .spec import BackendSpec

ORDERED_TREE_TAG = "ordered-tree"
UNORDERED_TREE_TAG = "unordered-tree"

OPEN = "("
CLOSE = ")"

# (label, children) with children recursively canonical: sorted for unordered trees.
CanonicalTree = Tuple[str, tuple]


@dataclass(frozen=True, eq=False)
class TreeNode:
    label: str
    children: Tuple["TreeNode", ...] = ()

    def canonical(self, ordered: bool) -> CanonicalTree:
        children = tuple(child.canonical(ordered) for child in self.children)
        if not ordered:
            children = tuple(sorted(children))
        return self.label, children

    @classmethod
    def from_canonical(cls, canonical: CanonicalTree) -> "TreeNode":
        label, children = canonical
        return cls(label, tuple(cls.from_canonical(child) for child in children))

    def node_count(self) -> int:
        return 1 + sum(child.node_count() for child in self.children)

    def labels(self) -> Iterator[str]:
        yield self.label
        for child in self.children:
            yield from child.labels()

    def __str__(self):
        if not self.children:
            return self.label
        return f"{self.label}({','.join(str(child) for child in self.children)})"


@dataclass(frozen=True, eq=False)
class TreeInstance:
    """
    Root labeled tree.  An unordered tree compares equal to any tree differing only in sibling order.  A root of
    None is the explicitly empty tree.
    """
    root: Optional[TreeNode]
    ordered: bool = False
    _key: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        canonical = None if self.root is None else self.root.canonical(self.ordered)
        object.__setattr__(self, '_key', (self.ordered, canonical))

    def canonical(self) -> Optional[CanonicalTree]:
        return self._key[1]

    def __eq__(self, other):
        return isinstance(other, TreeInstance) and other._key == self._key

    def __hash__(self):
        return hash(self._key)

    def node_count(self) -> int:
        return 0 if self.root is None else self.root.node_count()

    def __str__(self):
        return "<empty>" if self.root is None else str(self.root)


class Frame(NamedTuple):
    """A node on the open path: its label, completed children, and whether its '(' has been read"""
    label: str
    closed: tuple
    opened: bool


class TreeBackend(BaseBackend):
    """
    Depth first parenthesised serialization: a node label, then optionally '(' children ')'.  Leaves carry no
    parentheses, so A(B,C) serializes as [A, (, B, C, )].

    The state holds the open path from the root, each frame with its already completed children, so it records the
    parent nodes of the next element and its so far seen siblings.  For unordered trees completed siblings are kept
    sorted, making sibling orderings that build the same sub-structure state-equal.
    """

    def __init__(self, labels: Sequence[str], ordered: bool):
        labels = list(labels)
        reserved = {OPEN, CLOSE, EOS}.intersection(labels)
        if reserved:
            raise DuplicateName(f"Tree labels may not use reserved symbols {sorted(reserved)}")
        super().__init__(ORDERED_TREE_TAG if ordered else UNORDERED_TREE_TAG, Alphabet(labels + [OPEN, CLOSE]))
        self._labels = tuple(labels)
        self._ordered = ordered

    @property
    def ordered(self) -> bool:
        return self._ordered

    @property
    def labels(self) -> Tuple[str, ...]:
        return self._labels

    @property
    def spec(self) -> BackendSpec:
        return BackendSpec(kind=self.tag, symbols=list(self._labels))

    def initial_state_value(self) -> Any:
        return (), None, False

    def _complete(self, label: str, children: tuple) -> CanonicalTree:
        return label, children if self._ordered else tuple(sorted(children))

    def _attach(self, frames: List[Frame], node: CanonicalTree) -> List[Frame]:
        parent = frames[-1]
        closed = parent.closed + (node,)
        if not self._ordered:
            closed = tuple(sorted(closed))
        frames[-1] = parent._replace(closed=closed)
        return frames

    def advance(self, state: Any, element: LexiconElement) -> Any:
        frames, root, ended = state
        frames = [Frame(*frame) for frame in frames]
        symbol = element.symbol
        if ended:
            raise MalformedSerialization("element after eos")

        if symbol == EOS:
            if frames and not frames[-1].opened and len(frames) == 1:
                root = self._complete(frames[0].label, ())
                frames = []
            if frames:
                raise MalformedSerialization(f"eos with {len(frames)} unclosed node(s)")
            return (), root, True

        if root is not None:
            raise MalformedSerialization(f"'{symbol}' after the root was closed")

        if symbol == OPEN:
            if not frames or frames[-1].opened:
                raise MalformedSerialization("'(' must follow a node label")
            frames[-1] = frames[-1]._replace(opened=True)

        elif symbol == CLOSE:
            if len(frames) == 1 and not frames[0].opened:
                raise MalformedSerialization("unbalanced ')'")
            if frames and not frames[-1].opened:
                frames = self._close_leaf(frames)
            if not frames:
                raise MalformedSerialization("unbalanced ')'")
            if not frames[-1].closed:
                raise MalformedSerialization("empty children list")
            node = self._complete(frames[-1].label, frames[-1].closed)
            frames.pop()
            if frames:
                frames = self._attach(frames, node)
            else:
                root = node

        else:
            if frames and not frames[-1].opened:
                frames = self._close_leaf(frames)
            frames.append(Frame(symbol, (), False))

        return tuple(tuple(frame) for frame in frames), root, False

    def _close_leaf(self, frames: List[Frame]) -> List[Frame]:
        leaf = frames.pop()
        if not frames:
            raise MalformedSerialization(f"second root after leaf '{leaf.label}'")
        return self._attach(frames, self._complete(leaf.label, ()))

    def instance_from_state(self, state: Any) -> TreeInstance:
        _, root, _ = state
        return TreeInstance(None if root is None else TreeNode.from_canonical(root), ordered=self._ordered)

    def validate_instance(self, instance: Any) -> TreeInstance:
        if not isinstance(instance, TreeInstance):
            raise TypeError(f"Expected TreeInstance, got {type(instance).__name__}")
        if instance.ordered != self._ordered:
            raise ValueError(f"{'Ordered' if instance.ordered else 'Unordered'} tree given to {self.tag} backend")
        if instance.root is not None:
            for label in instance.root.labels():
                if label not in self._labels:
                    raise UnknownSymbol(f"Unknown tree label '{label}'")
        return instance

    def count_serializations(self, instance: Any) -> int:
        instance = self.validate_instance(instance)
        if instance.root is None or self._ordered:
            return 1
        return _count_unordered(instance.canonical())

    def _orderings(self, instance: TreeInstance) -> Iterator[Tuple[LexiconElement, ...]]:
        if instance.root is None:
            yield ()
            return
        seen = set()
        for tokens in self._node_orderings(instance.canonical()):
            if tokens not in seen:
                seen.add(tokens)
                yield tuple(LexiconElement(token) for token in tokens)

    def _node_orderings(self, node: CanonicalTree) -> Iterator[Tuple[str, ...]]:
        label, children = node
        if not children:
            yield (label,)
            return
        sibling_orders = [children] if self._ordered else _distinct_permutations(children)
        for order in sibling_orders:
            for parts in itertools.product(*(list(self._node_orderings(child)) for child in order)):
                yield (label, OPEN) + tuple(itertools.chain.from_iterable(parts)) + (CLOSE,)

    def candidate_next_elements(self, instance: Any, state: StateKey, prefix: Sequence[LexiconElement]
                                ) -> FrozenSet[LexiconElement]:
        frames, root, ended = self.decode_state(state)
        frames = [Frame(*frame) for frame in frames]
        target = instance.canonical()
        if ended:
            raise DeadEnd("nothing follows eos")
        if root is not None:
            if root != target:
                raise DeadEnd(f"Completed tree differs from {instance}")
            return frozenset((EOS_ELEMENT,))
        if not frames:
            if target is None:
                return frozenset((EOS_ELEMENT,))
            return frozenset((LexiconElement(target[0]),))
        if target is None or frames[0].label != target[0]:
            raise DeadEnd(f"Prefix root does not match {instance}")
        tokens, completes = self._next_tokens(target, frames, 0)
        if completes:
            tokens.add(EOS)
        if not tokens:
            raise DeadEnd(f"Prefix {[str(item) for item in prefix]} does not extend to a serialization of {instance}")
        return frozenset(LexiconElement(token) for token in tokens)

    def _remaining(self, children: tuple, closed: tuple) -> Optional[tuple]:
        if self._ordered:
            if children[:len(closed)] != closed:
                return None
            return children[len(closed):]
        remaining: Counter = collections.Counter(children)
        remaining.subtract(closed)
        if any(count < 0 for count in remaining.values()):
            return None
        return tuple(sorted(remaining.elements()))

    def _next_labels(self, remaining: tuple) -> Set[str]:
        if not remaining:
            return {CLOSE}
        if self._ordered:
            return {remaining[0][0]}
        return {child[0] for child in remaining}

    def _next_tokens(self, node: CanonicalTree, frames: List[Frame], depth: int) -> Tuple[Set[str], bool]:
        """
        Tokens that can follow when frames[depth] is matched against node.  The flag is True when the node may be
        complete at this point, leaving its parent to decide what comes next.
        """
        label, children = node
        frame = frames[depth]
        if frame.label != label:
            return set(), False
        if depth == len(frames) - 1:
            if not frame.opened:
                return ({OPEN}, False) if children else (set(), True)
            remaining = self._remaining(children, frame.closed)
            if remaining is None or not children:
                return set(), False
            return self._next_labels(remaining), False

        remaining = self._remaining(children, frame.closed)
        if not remaining:
            return set(), False
        child_label = frames[depth + 1].label
        options = remaining[:1] if self._ordered else tuple(sorted(set(remaining)))
        tokens: Set[str] = set()
        for child in options:
            if child[0] != child_label:
                continue
            child_tokens, child_completes = self._next_tokens(child, frames, depth + 1)
            tokens.update(child_tokens)
            if child_completes:
                after = list(remaining)
                after.remove(child)
                tokens.update(self._next_labels(tuple(after)))
        return tokens, False


def describe_state(backend: TreeBackend, state: StateKey) -> Tuple[List[str], List[str]]:
    """
    The parent path and so far seen siblings of the next element.  A node whose label was read but whose children
    are not yet decided is listed last.  It stays apart from the closed siblings in the state, so prefixes that leave
    different nodes undecided have different states.
    """
    frames, root, _ = backend.decode_state(state)
    frames = [Frame(*frame) for frame in frames]
    if root is not None:
        return [], [root[0]]
    if frames and not frames[-1].opened:
        pending = frames.pop()
        parents = [frame.label for frame in frames]
        siblings = [child[0] for child in frames[-1].closed] if frames else []
        return parents, siblings + [pending.label]
    parents = [frame.label for frame in frames]
    siblings = [child[0] for child in frames[-1].closed] if frames else []
    return parents, siblings


def _distinct_permutations(items: tuple) -> List[tuple]:
    counts = collections.Counter(items)
    ordered_items = sorted(counts)
    result = []

    def _extend(prefix):
        if len(prefix) == len(items):
            result.append(tuple(prefix))
            return
        for item in ordered_items:
            if counts[item]:
                counts[item] -= 1
                prefix.append(item)
                _extend(prefix)
                prefix.pop()
                counts[item] += 1

    _extend([])
    return result


def _count_unordered(node: CanonicalTree) -> int:
    _, children = node
    if not children:
        return 1
    groups = collections.Counter(children)
    total = math.factorial(len(children))
    for child, multiplicity in groups.items():
        total //= math.factorial(multiplicity)
    for child, multiplicity in groups.items():
        total *= _count_unordered(child) ** multiplicity
    return total
