# pylint: disable=redefined-outer-name
import itertools
import math

import numpy as np
import pytest

from structseq.core import DivisionUndefined, EOS, LexiconElement, SamplingMeasure, Serialization, \
    UnrealizableProperty
from structseq.density import PropertyView, RecoveryResult, TabularSeqModel, build_tabular_oracle, frac_prob, \
    property_normalizer, pushforward_prob, recover_density, recovery_terms
from structseq.random import make_rng
from structseq.sampler import Sampler, SamplerConfig
from structseq.structures import LABEL, SetBackend, SetInstance, TreeBackend, TreeInstance

from .helpers import tree


@pytest.fixture()
def backend() -> SetBackend:
    return SetBackend(['A', 'B', 'C'])


@pytest.fixture()
def sampler(backend) -> Sampler:
    return Sampler(backend)


def _mass_model(masses):
    """A tabular model from plain (sequence, mass) pairs"""
    return TabularSeqModel.from_log_masses({
        tuple(LexiconElement(symbol) for symbol in sequence): math.log(mass) for sequence, mass in masses
    })


def _orderings(members):
    return [''.join(order) for order in itertools.permutations(members)]


def test_oracle_of_a_single_set(backend, sampler):
    oracle = build_tabular_oracle([SetInstance.of('AB')], backend, sampler, 100)
    assert oracle.prob(Serialization.of('A', 'B', EOS)) == pytest.approx(0.5)
    assert oracle.prob(Serialization.of('B', 'A', EOS)) == pytest.approx(0.5)
    assert oracle.prob(Serialization.of('A', EOS)) == 0.0


def test_oracle_conditionals_follow_the_measure(backend, sampler):
    oracle = build_tabular_oracle([SetInstance.of('ABC')], backend, sampler, 100)
    after_a = oracle.conditional([LexiconElement('A')])
    assert after_a == pytest.approx({LexiconElement('B'): 0.5, LexiconElement('C'): 0.5})
    assert oracle.conditional([LexiconElement('D')]) == {}


def test_pushforward_on_two_instances(backend, sampler):
    oracle = build_tabular_oracle([SetInstance.of('ABC'), SetInstance.of('AB')], backend, sampler, 100)
    assert pushforward_prob(SetInstance.of('ABC'), oracle, backend, 100) == pytest.approx(0.5, abs=1e-12)
    assert pushforward_prob(SetInstance.of('AB'), oracle, backend, 100) == pytest.approx(0.5, abs=1e-12)
    assert pushforward_prob(SetInstance.of('C'), oracle, backend, 100) == 0.0


def test_pushforward_counts_duplicates(backend, sampler):
    oracle = build_tabular_oracle([SetInstance.of('A'), SetInstance.of('A'), SetInstance.of('B')], backend, sampler,
                                  100)
    assert pushforward_prob(SetInstance.of('A'), oracle, backend, 100) == pytest.approx(2.0 / 3.0)


def test_pushforward_sums_to_one_over_a_closed_universe(backend, sampler):
    universe = [SetInstance.of(''.join(members)) for size in range(4)
                for members in itertools.combinations('ABC', size)]
    oracle = build_tabular_oracle(universe, backend, sampler, 100)
    total = math.fsum(pushforward_prob(instance, oracle, backend, 100) for instance in universe)
    assert total == pytest.approx(1.0, abs=1e-10)


def test_property_normalizer(backend, sampler):
    assert property_normalizer(SetInstance.of('ABC'), Serialization.of('B', 'A', 'C', EOS), sampler) == \
        pytest.approx(1.0 / 6.0)
    assert property_normalizer(SetInstance.of('AB'), Serialization.of('A', 'B', EOS), sampler) == pytest.approx(0.5)

    ordered = TreeBackend(['A', 'B'], ordered=True)
    instance = TreeInstance(tree('A', tree('B'), tree('A')), ordered=True)
    serialization, = ordered.enumerate_serializations(instance, 10)
    assert property_normalizer(instance, serialization, Sampler(ordered)) == pytest.approx(1.0)


def test_frac_prob_is_the_same_for_every_ordering(backend, sampler):
    instance = SetInstance.of('ABC')
    oracle = build_tabular_oracle([instance, SetInstance.of('B')], backend, sampler, 100)
    exact = pushforward_prob(instance, oracle, backend, 100)
    for order in _orderings('ABC'):
        assert frac_prob(instance, Serialization.of(*order, EOS), oracle, sampler) == pytest.approx(exact, abs=1e-12)


def test_frac_prob_under_a_biased_measure(propositional_backend, record):
    sampler = Sampler(propositional_backend, SamplerConfig(measure=SamplingMeasure.biased_front(0.5)))
    oracle = build_tabular_oracle([record], propositional_backend, sampler, 100)
    for serialization in propositional_backend.enumerate_serializations(record, 100):
        assert frac_prob(record, serialization, oracle, sampler) == pytest.approx(1.0, abs=1e-12)


def test_frac_prob_of_one_ordering(backend, sampler):
    model = _mass_model([([*order, EOS], 1.0 / 6.0) for order in _orderings('ABC')])
    assert frac_prob(SetInstance.of('ABC'), Serialization.of('B', 'A', 'C', EOS), model, sampler) == \
        pytest.approx(1.0)


def test_zero_normalizer(propositional_backend, record):
    sampler = Sampler(propositional_backend, SamplerConfig(measure=SamplingMeasure.biased_front(1.0)))
    model = build_tabular_oracle([record], propositional_backend, sampler, 100)
    label_first = next(item for item in propositional_backend.enumerate_serializations(record, 100)
                       if item.symbols[0] == LABEL)
    with pytest.raises(DivisionUndefined):
        frac_prob(record, label_first, model, sampler)


@pytest.mark.parametrize('prop', [
    Serialization.of('A', 'B', EOS),
    Serialization.of('A', 'A', 'B', 'C', EOS),
    ['not', 'a', 'serialization'],
])
def test_unrealizable_property(backend, sampler, prop):
    with pytest.raises(UnrealizableProperty):
        property_normalizer(SetInstance.of('ABC'), prop, sampler)


def test_custom_property_view(backend, sampler):
    first_symbol = PropertyView.custom(lambda serialization: serialization.symbols[0])
    instance = SetInstance.of('ABC')
    assert property_normalizer(instance, 'A', sampler, first_symbol) == pytest.approx(1.0 / 3.0)
    oracle = build_tabular_oracle([instance], backend, sampler, 100)
    for symbol in 'ABC':
        assert frac_prob(instance, symbol, oracle, sampler, first_symbol) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(UnrealizableProperty):
        property_normalizer(instance, 'D', sampler, first_symbol)

    supplied = PropertyView.custom(first_symbol.property_of, normalizer=lambda _, __: 0.25)
    assert property_normalizer(instance, 'A', sampler, supplied) == 0.25
    with pytest.raises(ValueError):
        PropertyView('custom')


def test_recovery_with_the_oracle_has_no_variance(backend, sampler):
    instance = SetInstance.of('ABC')
    oracle = build_tabular_oracle([instance, SetInstance.of('AC')], backend, sampler, 100)
    terms = recovery_terms(instance, oracle, 20, sampler, make_rng(0))
    np.testing.assert_allclose(terms, 0.5, atol=1e-12)
    result = recover_density(instance, oracle, 20, sampler, make_rng(1))
    assert result.estimate == pytest.approx(pushforward_prob(instance, oracle, backend, 100), abs=1e-12)
    assert result.stderr == pytest.approx(0.0, abs=1e-12)


def test_recovery_of_a_uniform_model(backend, sampler):
    masses = [([*order, EOS], 0.1) for order in _orderings('ABC')] + [(['A', EOS], 0.4)]
    result = recover_density(SetInstance.of('ABC'), _mass_model(masses), 10, sampler, make_rng(2))
    assert result.estimate == pytest.approx(0.6)
    assert result.stderr == pytest.approx(0.0, abs=1e-12)
    assert result.m == 10


def test_single_draw_has_no_stderr(backend, sampler):
    result = recover_density(SetInstance.of('AB'), build_tabular_oracle([SetInstance.of('AB')], backend, sampler,
                                                                       10), 1, sampler, make_rng(0))
    assert math.isnan(result.stderr)
    assert result.report('x')['stderr'] is None
    with pytest.raises(ValueError):
        recover_density(SetInstance.of('AB'), None, 0, sampler, make_rng(0))


def test_report_fields():
    report = RecoveryResult(0.25, 0.01, 50).report('a', exact=0.3, exact_available=True)
    assert report == {'instance_id': 'a', 'estimate': 0.25, 'stderr': 0.01, 'm': 50, 'mode': 'singleton',
                      'exact': 0.3, 'exact_status': 'ok'}
    unavailable = RecoveryResult(0.25, 0.01, 50).report('a', exact_available=False)
    assert unavailable['exact'] is None
    assert unavailable['exact_status'] == 'unavailable'


def _skewed_model():
    weights = np.arange(1.0, 7.0)
    weights = 0.6 * weights / weights.sum()
    return _mass_model([([*order, EOS], weight) for order, weight in zip(_orderings('ABC'), weights)] +
                       [(['A', EOS], 0.4)])


def test_recovery_is_unbiased(backend, sampler):
    model = _skewed_model()
    instance = SetInstance.of('ABC')
    estimates = np.array([recover_density(instance, model, 5, sampler, make_rng(7, run)).estimate
                          for run in range(200)])
    spread = estimates.std(ddof=1) / math.sqrt(len(estimates))
    assert abs(estimates.mean() - 0.6) < 3.0 * spread


@pytest.mark.slow
def test_stderr_shrinks_with_more_draws(backend, sampler):
    model = _skewed_model()
    instance = SetInstance.of('ABC')
    small = recover_density(instance, model, 100, sampler, make_rng(3)).stderr
    large = recover_density(instance, model, 10_000, sampler, make_rng(4)).stderr
    assert 5.0 < small / large < 20.0
