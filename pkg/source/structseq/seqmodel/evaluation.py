"""
Discriminative evaluation.  Each instance is serialized r times and the predictions are averaged over those
serializations before the decision is taken.
"""
import logging
from typing import List, NamedTuple, Optional, Sequence

import numpy as np

from ..core import MissingHead
from ..random import STREAM_EVAL, make_rng
from ..sampler import Sampler
from .model import discriminative_loss, predict_class_probabilities, predict_regression
from .params import ModelParams
from .training import TrainingExample

logger = logging.getLogger(__name__)


class Prediction(NamedTuple):
    index: int
    target: object
    predicted: object
    correct: Optional[bool]
    nll: float


class EvaluationReport(NamedTuple):
    predictions: List[Prediction]
    accuracy: Optional[float]
    mean_nll: float
    correlation: Optional[float]


def evaluate(params: ModelParams, sampler: Sampler, examples: Sequence[TrainingExample], repeats: int = 1,
             seed: int = 0) -> EvaluationReport:
    spec = params.spec
    if spec.generative:
        raise MissingHead("Evaluation needs a model with a discriminative head")
    if repeats < 1:
        raise ValueError(f"repeats must be >= 1, got {repeats}")

    predictions = []
    for index, example in enumerate(examples):
        rng = make_rng(seed, STREAM_EVAL, index)
        serializations = [sampler.sample(example.instance, rng) for _ in range(repeats)]
        nll = float(np.mean([discriminative_loss(params, serialization, example.target)
                             for serialization in serializations]))
        if spec.objective == 'classification':
            probabilities = predict_class_probabilities(params, serializations).mean(axis=0)
            predicted = int(np.argmax(probabilities))
            predictions.append(Prediction(index, example.target, predicted, predicted == int(example.target), nll))
        else:
            predicted = predict_regression(params, serializations).mean(axis=0).tolist()
            predictions.append(Prediction(index, example.target, predicted, None, nll))

    accuracy = correlation = None
    if spec.objective == 'classification':
        accuracy = float(np.mean([prediction.correct for prediction in predictions])) if predictions else None
    elif len(predictions) > 1:
        actual = np.array([prediction.target for prediction in predictions], dtype=np.float64).ravel()
        predicted = np.array([prediction.predicted for prediction in predictions], dtype=np.float64).ravel()
        if actual.std() > 0.0 and predicted.std() > 0.0:
            correlation = float(np.corrcoef(actual, predicted)[0, 1])
    mean_nll = float(np.mean([prediction.nll for prediction in predictions])) if predictions else float('nan')
    logger.info(f"Evaluated {len(predictions)} instance(s) with {repeats} serialization(s) each: "
                f"accuracy={accuracy} mean_nll={mean_nll:.6f}")
    return EvaluationReport(predictions, accuracy, mean_nll, correlation)
