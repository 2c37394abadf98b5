from .cells import GRUCell, VanillaCell, make_cell
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .generation import Generated, conditional_nll, conditioning_prefix, generate, generate_conditional, step_nll
from .model import RecurrentScorer, discriminative_loss, encode_batch, forward, loss, loss_and_grad, loss_grad, \
    predict_class_probabilities, predict_regression, regularizer, regularizer_grad, sequence_nll
from .params import ModelParams, ModelSpec, ValueScaler
from .training import Adam, MetricRow, MissingTarget, TrainConfig, TrainResult, TrainingExample, model_spec_for, \
    train, training_examples, write_metrics

__all__ = [
    'Adam', 'Checkpoint', 'GRUCell', 'Generated', 'MetricRow', 'MissingTarget', 'ModelParams', 'ModelSpec',
    'RecurrentScorer', 'TrainConfig', 'TrainResult', 'TrainingExample', 'ValueScaler', 'VanillaCell',
    'conditional_nll', 'conditioning_prefix', 'discriminative_loss', 'encode_batch', 'forward', 'generate',
    'generate_conditional', 'load_checkpoint', 'loss', 'loss_and_grad', 'loss_grad', 'make_cell', 'model_spec_for',
    'predict_class_probabilities', 'predict_regression', 'regularizer', 'regularizer_grad', 'save_checkpoint',
    'sequence_nll', 'step_nll', 'train', 'training_examples', 'write_metrics',
]
