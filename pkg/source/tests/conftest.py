# pylint: disable=redefined-outer-name
import pytest

from structseq.structures import PropositionalBackend, PropositionalInstance, SeriesBackend, SeriesInstance, \
    SetBackend, SetInstance, TreeBackend, TreeInstance

from .helpers import tree


@pytest.fixture()
def set_backend() -> SetBackend:
    return SetBackend(['A', 'B', 'C', 'D', 'E', 'F'])


@pytest.fixture()
def abc() -> SetInstance:
    return SetInstance.of('ABC')


@pytest.fixture()
def unordered_backend() -> TreeBackend:
    return TreeBackend(['A', 'B', 'C', 'D'], ordered=False)


@pytest.fixture()
def ordered_backend() -> TreeBackend:
    return TreeBackend(['A', 'B', 'C', 'D'], ordered=True)


@pytest.fixture()
def series_backend() -> SeriesBackend:
    return SeriesBackend(['v1', 'v2'], ['f1'])


@pytest.fixture()
def small_series() -> SeriesInstance:
    return SeriesInstance(variables=('v1', 'v2'), values=((0.5, 1.5), (-0.25, 2.0)), features={'f1': 0.75})


@pytest.fixture()
def propositional_backend() -> PropositionalBackend:
    return PropositionalBackend(numeric=['x1'], categorical={'color': ['red', 'blue']}, classes=['1', '2'])


@pytest.fixture()
def record() -> PropositionalInstance:
    return PropositionalInstance(numeric={'x1': 0.5}, categorical={'color': 'red'}, label='1')


@pytest.fixture()
def tree_instance() -> TreeInstance:
    return TreeInstance(tree('A', tree('B'), tree('C', tree('D'))), ordered=False)
