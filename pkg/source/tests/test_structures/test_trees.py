import pytest

from structseq.core import DuplicateName, EOS, LexiconElement, MalformedSerialization, Serialization, UnknownSymbol, \
    replay_states
from structseq.structures import CLOSE, OPEN, TreeBackend, TreeInstance, describe_state

from ..helpers import enumerated, equal_states_have_equal_suffixes, prefix_states_and_suffixes, serialization, \
    streamed_serializations, tree

UNORDERED_TREES = [
    tree('A'),
    tree('A', tree('B'), tree('C')),
    tree('A', tree('B'), tree('B')),
    tree('A', tree('B'), tree('C', tree('D'))),
    tree('A', tree('B', tree('C')), tree('B', tree('D'))),
    tree('A', tree('B', tree('C')), tree('B', tree('C')), tree('D')),
    tree('A', tree('A', tree('A'), tree('B')), tree('A', tree('B'), tree('A'))),
    tree('D', tree('C', tree('B', tree('A'), tree('A')), tree('A')), tree('C'), tree('B')),
]


def _candidates(backend, instance, *symbols):
    prefix = tuple(LexiconElement(symbol) for symbol in symbols)
    return {element.symbol for element in
            backend.candidate_next_elements(instance, replay_states(backend, prefix)[-1], prefix)}


def test_leaf_carries_no_parentheses(unordered_backend):
    instance = TreeInstance(tree('A'))
    assert [item.symbols for item in unordered_backend.enumerate_serializations(instance, 10)] == [('A', EOS)]


def test_unordered_sibling_orders(unordered_backend, tree_instance):
    assert unordered_backend.count_serializations(tree_instance) == 2
    assert {item.symbols for item in unordered_backend.enumerate_serializations(tree_instance, 10)} == {
        ('A', OPEN, 'B', 'C', OPEN, 'D', CLOSE, CLOSE, EOS),
        ('A', OPEN, 'C', OPEN, 'D', CLOSE, 'B', CLOSE, EOS),
    }


@pytest.mark.parametrize('root, count', [
    (tree('A', tree('B'), tree('B')), 1),
    (tree('A', tree('B'), tree('C'), tree('D')), 6),
    (tree('A', tree('B', tree('C')), tree('B', tree('C')), tree('D')), 3),
    (tree('A', tree('B', tree('C'), tree('D')), tree('B')), 4),
])
def test_unordered_count_divides_identical_siblings(unordered_backend, root, count):
    instance = TreeInstance(root)
    assert unordered_backend.count_serializations(instance) == count
    assert len(unordered_backend.enumerate_serializations(instance, 100)) == count


def test_ordered_tree_has_one_serialization(ordered_backend):
    instance = TreeInstance(tree('A', tree('C'), tree('B', tree('D'))), ordered=True)
    assert ordered_backend.count_serializations(instance) == 1
    assert [item.symbols for item in ordered_backend.enumerate_serializations(instance, 10)] == [
        ('A', OPEN, 'C', 'B', OPEN, 'D', CLOSE, CLOSE, EOS)]


def test_ordered_trees_differ_by_sibling_order():
    left = TreeInstance(tree('A', tree('B'), tree('C')), ordered=True)
    right = TreeInstance(tree('A', tree('C'), tree('B')), ordered=True)
    assert left != right
    assert TreeInstance(left.root) == TreeInstance(right.root)


def test_empty_tree(unordered_backend):
    empty = TreeInstance(None)
    assert unordered_backend.count_serializations(empty) == 1
    assert unordered_backend.deserialize(Serialization.of(EOS)) == empty
    assert _candidates(unordered_backend, empty) == {EOS}


def test_unordered_candidates():
    backend = TreeBackend(['A', 'B', 'C'], ordered=False)
    instance = TreeInstance(tree('A', tree('B'), tree('C')))
    assert _candidates(backend, instance) == {'A'}
    assert _candidates(backend, instance, 'A') == {OPEN}
    assert _candidates(backend, instance, 'A', OPEN) == {'B', 'C'}
    assert _candidates(backend, instance, 'A', OPEN, 'B') == {'C'}
    assert _candidates(backend, instance, 'A', OPEN, 'B', 'C') == {CLOSE}
    assert _candidates(backend, instance, 'A', OPEN, 'B', 'C', CLOSE) == {EOS}


def test_candidates_with_same_label_leaf_and_subtree(unordered_backend):
    instance = TreeInstance(tree('A', tree('B'), tree('B', tree('C'))))
    assert _candidates(unordered_backend, instance, 'A', OPEN, 'B') == {'B', OPEN}
    assert _candidates(unordered_backend, instance, 'A', OPEN, 'B', OPEN) == {'C'}
    assert _candidates(unordered_backend, instance, 'A', OPEN, 'B', OPEN, 'C', CLOSE) == {'B'}


def test_ordered_candidates(ordered_backend):
    instance = TreeInstance(tree('A', tree('C'), tree('B')), ordered=True)
    assert _candidates(ordered_backend, instance, 'A', OPEN) == {'C'}
    assert _candidates(ordered_backend, instance, 'A', OPEN, 'C') == {'B'}


@pytest.mark.parametrize('root', UNORDERED_TREES)
def test_streaming_candidates_match_enumeration(unordered_backend, root):
    instance = TreeInstance(root)
    assert streamed_serializations(unordered_backend, instance) == enumerated(unordered_backend, instance)


@pytest.mark.parametrize('root', UNORDERED_TREES)
def test_ordered_streaming_candidates_match_enumeration(ordered_backend, root):
    instance = TreeInstance(root, ordered=True)
    assert streamed_serializations(ordered_backend, instance) == enumerated(ordered_backend, instance)


@pytest.mark.parametrize('root', UNORDERED_TREES)
def test_equal_states_have_equal_suffixes(unordered_backend, root):
    assert equal_states_have_equal_suffixes(unordered_backend, TreeInstance(root))


def test_identical_subtrees_in_either_order_are_state_equal(unordered_backend):
    first = ('A', OPEN, 'B', OPEN, 'C', CLOSE, 'B', OPEN, 'D', CLOSE)
    second = ('A', OPEN, 'B', OPEN, 'D', CLOSE, 'B', OPEN, 'C', CLOSE)
    assert replay_states(unordered_backend, [LexiconElement(symbol) for symbol in first])[-1] == \
        replay_states(unordered_backend, [LexiconElement(symbol) for symbol in second])[-1]


def test_ordered_sibling_order_changes_the_state(ordered_backend):
    first = [LexiconElement(symbol) for symbol in ('A', OPEN, 'B', 'C')]
    second = [LexiconElement(symbol) for symbol in ('A', OPEN, 'C', 'B')]
    assert replay_states(ordered_backend, first)[-1] != replay_states(ordered_backend, second)[-1]


@pytest.mark.parametrize('root', UNORDERED_TREES)
def test_deserialize_every_serialization(unordered_backend, root):
    instance = TreeInstance(root)
    for item in unordered_backend.enumerate_serializations(instance, 1000):
        assert unordered_backend.deserialize(item) == instance


@pytest.mark.parametrize('symbols, position', [
    (('A', 'B', EOS), 1),
    ((OPEN, 'A', EOS), 0),
    (('A', OPEN, CLOSE, EOS), 2),
    (('A', OPEN, 'B', EOS), 3),
    (('A', CLOSE, EOS), 1),
    (('A', OPEN, 'B', CLOSE, 'C', EOS), 4),
])
def test_deserialize_malformed(unordered_backend, symbols, position):
    with pytest.raises(MalformedSerialization) as exc_info:
        unordered_backend.deserialize(serialization(*symbols))
    assert exc_info.value.position == position


def test_describe_state(unordered_backend):
    states = replay_states(unordered_backend, [LexiconElement(symbol) for symbol in ('A', OPEN, 'B', 'C', OPEN)])
    assert describe_state(unordered_backend, states[0]) == ([], [])
    assert describe_state(unordered_backend, states[3]) == (['A'], ['B'])
    assert describe_state(unordered_backend, states[4]) == (['A'], ['B', 'C'])
    assert describe_state(unordered_backend, states[5]) == (['A', 'C'], [])


def test_reserved_labels():
    with pytest.raises(DuplicateName):
        TreeBackend(['A', OPEN], ordered=False)


def test_validate_instance(unordered_backend, ordered_backend):
    with pytest.raises(UnknownSymbol):
        unordered_backend.validate_instance(TreeInstance(tree('A', tree('Z'))))
    with pytest.raises(ValueError):
        ordered_backend.validate_instance(TreeInstance(tree('A')))


def _elements(*symbols):
    return tuple(LexiconElement(symbol) for symbol in symbols)


def test_undecided_sibling_is_part_of_the_state(unordered_backend):
    first = _elements('A', OPEN, 'B', 'C')
    second = _elements('A', OPEN, 'C', 'B')
    assert replay_states(unordered_backend, first)[-1] != replay_states(unordered_backend, second)[-1]

    # Both complete A(B, C) the same way ...
    _, suffixes = prefix_states_and_suffixes(unordered_backend, TreeInstance(tree('A', tree('B'), tree('C'))))
    assert suffixes[first] == suffixes[second] == {_elements(CLOSE, EOS)}

    # ... but in A(B, C, C(D)) only the undecided C can still take children.
    instance = TreeInstance(tree('A', tree('B'), tree('C'), tree('C', tree('D'))))
    _, suffixes = prefix_states_and_suffixes(unordered_backend, instance)
    assert _elements(OPEN, 'D', CLOSE, 'C', CLOSE, EOS) in suffixes[first]
    assert all(suffix[0].symbol != OPEN for suffix in suffixes[second])


def test_describe_state_lists_the_undecided_node_last(unordered_backend):
    first = replay_states(unordered_backend, _elements('A', OPEN, 'B', 'C'))[-1]
    second = replay_states(unordered_backend, _elements('A', OPEN, 'C', 'B'))[-1]
    assert describe_state(unordered_backend, first) == (['A'], ['B', 'C'])
    assert describe_state(unordered_backend, second) == (['A'], ['C', 'B'])
