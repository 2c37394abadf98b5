import pytest

from structseq.core import DuplicateName, EOS, LexiconElement, MalformedSerialization, Serialization, UnknownSymbol, \
    replay_states
from structseq.structures import LABEL, PropositionalBackend, PropositionalInstance

from ..helpers import enumerated, equal_states_have_equal_suffixes, equal_suffixes_have_equal_states, \
    streamed_serializations


def _candidates(backend, instance, *elements):
    return backend.candidate_next_elements(instance, replay_states(backend, elements)[-1], elements)


def test_alphabet(propositional_backend):
    assert propositional_backend.alphabet.symbols == ('x1', 'color', LABEL, 'color=red', 'color=blue', 'label=1',
                                                      'label=2', EOS)
    assert propositional_backend.alphabet.value_symbols == {'x1'}


def test_categorical_name_is_followed_by_its_value(propositional_backend, record):
    assert propositional_backend.count_serializations(record) == 6
    for item in propositional_backend.enumerate_serializations(record, 100):
        assert len(item) == 6
        for position, element in enumerate(item):
            if element.symbol in ('color', LABEL):
                assert item[position + 1].symbol.startswith(element.symbol + '=')


def test_candidates(propositional_backend, record):
    x1 = LexiconElement('x1', 0.5)
    assert _candidates(propositional_backend, record) == {x1, LexiconElement('color'), LexiconElement(LABEL)}
    assert _candidates(propositional_backend, record, LexiconElement('color')) == {LexiconElement('color=red')}
    assert _candidates(propositional_backend, record, LexiconElement(LABEL), LexiconElement('label=1'), x1) == {
        LexiconElement('color')}


def test_streaming_candidates_match_enumeration(propositional_backend, record):
    assert streamed_serializations(propositional_backend, record) == enumerated(propositional_backend, record)


def test_state_is_exactly_the_remaining_suffixes(propositional_backend, record):
    assert equal_states_have_equal_suffixes(propositional_backend, record)
    assert equal_suffixes_have_equal_states(propositional_backend, record)


def test_item_order_does_not_change_the_state(propositional_backend):
    first = [LexiconElement('x1', 0.5), LexiconElement('color'), LexiconElement('color=red')]
    second = [LexiconElement('color'), LexiconElement('color=red'), LexiconElement('x1', 0.5)]
    assert replay_states(propositional_backend, first)[-1] == replay_states(propositional_backend, second)[-1]


def test_deserialize_every_serialization(propositional_backend, record):
    for item in propositional_backend.enumerate_serializations(record, 100):
        assert propositional_backend.deserialize(item) == record


@pytest.mark.parametrize('elements, position', [
    (['color', LABEL, 'label=1', EOS], 1),
    (['color', 'label=1', EOS], 1),
    (['color=red', EOS], 0),
    ([('x1', 1.0), ('x1', 2.0), EOS], 1),
    (['color', EOS], 1),
])
def test_deserialize_malformed(propositional_backend, elements, position):
    with pytest.raises(MalformedSerialization) as exc_info:
        propositional_backend.deserialize(Serialization.of(*elements))
    assert exc_info.value.position == position


def test_conditioning(propositional_backend, record):
    assert propositional_backend.is_conditioning('x1')
    assert propositional_backend.is_conditioning('color')
    assert not propositional_backend.is_conditioning(LABEL)
    assert not propositional_backend.is_conditioning('color=red')
    assert propositional_backend.conditioning_names(record) == ['x1', 'color']
    dropped = propositional_backend.without_conditioning(record, {'x1': False})
    assert dropped == PropositionalInstance(categorical={'color': 'red'}, label='1')
    assert record.without_label() == PropositionalInstance(numeric={'x1': 0.5}, categorical={'color': 'red'})


def test_validate_instance(propositional_backend):
    with pytest.raises(UnknownSymbol):
        propositional_backend.validate_instance(PropositionalInstance(categorical={'color': 'green'}))
    with pytest.raises(UnknownSymbol):
        propositional_backend.validate_instance(PropositionalInstance(label='3'))
    with pytest.raises(UnknownSymbol):
        propositional_backend.validate_instance(PropositionalInstance(numeric={'color': 1.0}))


def test_reserved_names():
    with pytest.raises(DuplicateName):
        PropositionalBackend(numeric=[LABEL])
    with pytest.raises(DuplicateName):
        PropositionalInstance(numeric={'a': 1.0}, categorical={'a': 'b'})
