"""
Constrained random serializations of structured data, recurrent sequence models over them and density recovery on
the original structures.
"""
from .core import Alphabet, EOS, LexiconElement, SamplingMeasure, Serialization, StateKey, StructSeqError, \
    StructureBackend, replay_states, transition
from .sampler import Sampler, SamplerConfig, SamplerMode, path_log_prob, sample_serialization

__all__ = [
    'Alphabet', 'EOS', 'LexiconElement', 'SamplingMeasure', 'Sampler', 'SamplerConfig', 'SamplerMode',
    'Serialization', 'StateKey', 'StructSeqError', 'StructureBackend', 'path_log_prob', 'replay_states',
    'sample_serialization', 'transition',
]
