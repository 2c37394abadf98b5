import collections
import csv
import functools
import json
import logging
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple

import click
import pydantic
from pydantic import BaseSettings

from .core import ConfigError, DataError, EnumerationTooLarge, MissingHead, StructSeqError
from .datagen import LETTERS, as_dataset, generate_propositional, generate_random_sets, generate_random_trees, \
    generate_vdp_dataset
from .density import build_tabular_oracle, pushforward_prob, recover_density
from .log_config import LogConfig, setup_early_logging
from .misc import SettingsConfig, atomic_write, drop_none, merge, parse_overrides, register_clean_shutdown, \
    str_exception, write_manifest
from .random import STREAM_DATAGEN, STREAM_GENERATE, STREAM_RECOVER, make_rng
from .sampler import Sampler, SamplerConfig, SamplerMode, write_corpus
from .seqmodel import RecurrentScorer, load_checkpoint, model_spec_for, save_checkpoint, train, training_examples, \
    write_metrics
from .seqmodel.evaluation import evaluate
from .seqmodel.generation import DEFAULT_MAX_LENGTH, generate, generate_conditional
from .seqmodel.params import ModelSpec, Objective
from .seqmodel.training import TrainConfig
from .structures import BaseBackend, MeasureMode, build_backend, default_measure, infer_backend_spec
from .structures.instances import DatasetItem, read_instances, write_instances

logger = logging.getLogger(__name__)


class MissingInput(DataError):
    pass


class PathsConfig(pydantic.BaseModel):
    dataset: Optional[Path] = None
    test_dataset: Optional[Path] = None
    output: Optional[Path] = None
    checkpoint: Optional[Path] = None
    metrics: Optional[Path] = None

    class Config:
        extra = pydantic.Extra.forbid


class GenConfig(pydantic.BaseModel):
    kind: Literal['vdp', 'tree', 'set', 'propositional'] = 'set'
    count: int = 100
    # set
    symbols: List[str] = ['A', 'B', 'C']
    min_size: int = 1
    max_size: Optional[int] = None
    # tree
    labels: List[str] = list(LETTERS)
    max_nodes: int = 10
    ordered: bool = False
    # vdp
    length: int = 21
    step_size: float = 0.1
    substeps: int = 10

    class Config:
        extra = pydantic.Extra.forbid

    @pydantic.validator('count')
    def _count(cls, value):  # pylint: disable=no-self-argument
        if value < 1:
            raise ValueError(f"count must be >= 1, got {value}")
        return value


class SamplerSettings(pydantic.BaseModel):
    mode: Literal['enumerating', 'streaming', 'canonical'] = 'streaming'
    measure: MeasureMode = 'unconditional'
    front_fraction: float = 0.5
    feature_drop_probability: float = 0.0
    enumeration_bound: int = 100_000
    serializations_per_instance: int = 1

    class Config:
        extra = pydantic.Extra.forbid

    def sampler_config(self, backend: BaseBackend, seed: int) -> SamplerConfig:
        measure = default_measure(backend, self.measure, self.feature_drop_probability, self.front_fraction)
        return SamplerConfig(SamplerMode(self.mode), measure, self.enumeration_bound, seed)


class ModelSettings(pydantic.BaseModel):
    objective: Objective = 'generative'
    hidden_dim: int = 16
    mixture_components: int = 2
    cell: Literal['vanilla', 'gru'] = 'vanilla'
    activation: Literal['logistic', 'tanh'] = 'logistic'
    layers: int = 1

    class Config:
        extra = pydantic.Extra.forbid

    def architecture(self) -> Dict[str, Any]:
        return self.dict(exclude={'objective'})


class RecoverSettings(pydantic.BaseModel):
    m: int = 100
    model_source: Literal['checkpoint', 'oracle'] = 'checkpoint'
    # Also report the exact push-forward probability when the fiber is within the enumeration bound.
    exact: bool = True

    class Config:
        extra = pydantic.Extra.forbid


class EvalSettings(pydantic.BaseModel):
    repeats: int = 1

    class Config:
        extra = pydantic.Extra.forbid


class GenerateSettings(pydantic.BaseModel):
    # Draws in total, or per conditioning instance when a dataset is given.
    count: int = 10
    max_length: int = DEFAULT_MAX_LENGTH
    # Restrict every step to the symbols the structure grammar accepts.
    constrained: bool = True

    class Config:
        extra = pydantic.Extra.forbid

    @pydantic.validator('count', 'max_length')
    def _positive(cls, value, field):  # pylint: disable=no-self-argument
        if value < 1:
            raise ValueError(f"{field.name} must be >= 1, got {value}")
        return value


class RunConfig(BaseSettings):
    seed: int = 0
    paths: PathsConfig = PathsConfig()
    gen: GenConfig = GenConfig()
    sampler: SamplerSettings = SamplerSettings()
    model: ModelSettings = ModelSettings()
    train: TrainConfig = TrainConfig()
    recover: RecoverSettings = RecoverSettings()
    eval: EvalSettings = EvalSettings()
    generate: GenerateSettings = GenerateSettings()
    logging: LogConfig = LogConfig()

    class Config(SettingsConfig):
        env_prefix = 'STRUCTSEQ_'
        env_nested_delimiter = '__'
        extra = pydantic.Extra.forbid

    @pydantic.validator('seed')
    def _seed(cls, value):  # pylint: disable=no-self-argument
        if not 0 <= value < 2 ** 64:
            raise ValueError(f"seed must be a 64 bit unsigned integer, got {value}")
        return value


class CommandError(click.ClickException):
    """
    Printed as one machine readable line: error=<name> exit=<code> message=<text>
    """

    def __init__(self, name: str, exit_code: int, message: str):
        super().__init__(message)
        self.name = name
        self.exit_code = exit_code

    def format_message(self) -> str:
        message = ' '.join(self.message.split())
        return f"error={self.name} exit={self.exit_code} message={message}"

    def show(self, file=None):
        click.echo(self.format_message(), file=file, err=True)


def _validation_message(ex: pydantic.ValidationError) -> str:
    return '; '.join(f"{'.'.join(str(part) for part in error['loc'])}: {error['msg']}" for error in ex.errors())


def reported(func):
    """
    Turn package errors into CommandError with the error's exit code.
    """
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except pydantic.ValidationError as ex:
            raise CommandError(ConfigError.__name__, ConfigError.exit_code, _validation_message(ex)) from ex
        except StructSeqError as ex:
            raise CommandError(type(ex).__name__, ex.exit_code, str_exception(ex)) from ex
        except OSError as ex:
            raise CommandError(type(ex).__name__, DataError.exit_code, str_exception(ex)) from ex
    return wrapper


def _load_settings(**flags) -> RunConfig:
    context = click.get_current_context()
    config_path, overrides = context.find_root().obj
    values = merge(parse_overrides(overrides), drop_none(flags))
    settings = RunConfig(config_path=config_path, **values)
    settings.logging.apply()
    logger.debug(f"Effective configuration: {settings.json(by_alias=True)}")
    return settings


def _required(value: Optional[Path], name: str) -> Path:
    if value is None:
        raise ConfigError(f"{name} is required")
    return value


def _existing(value: Optional[Path], name: str) -> Path:
    path = _required(value, name)
    if not path.is_file():
        raise MissingInput(f"{name} '{path}' does not exist")
    return path


def _manifest(command: str, settings: RunConfig, **details) -> Dict[str, Any]:
    return {
        'command': command,
        'config': json.loads(settings.json(by_alias=True)),
        'created': datetime.now(timezone.utc).isoformat(),
        **details,
    }


def _backend_of(spec: ModelSpec) -> BaseBackend:
    if spec.backend is None:
        raise ConfigError("The checkpoint does not record its structure backend")
    return build_backend(spec.backend)


def _instances(items: Sequence[DatasetItem]) -> List[Any]:
    return [item.instance for item in items]


@click.group()
@click.option("--config", type=click.Path(path_type=Path, dir_okay=False),
              help=f"A configuration file of 'section.key = value' lines\n\n"
                   f"Defaults to {RunConfig.Config.user_config_path()} if it exists")
@click.option("--set", "overrides", multiple=True, metavar="SECTION.KEY=VALUE",
              help="Override one configuration key, eg: --set train.lambda=1")
def main(config: Optional[Path], overrides: Tuple[str, ...]):
    """
    Serialize structured instances, learn sequence models of them and recover densities on the structures.
    """
    setup_early_logging()
    register_clean_shutdown()
    click.get_current_context().obj = (config, overrides)


def generate_dataset(settings: RunConfig) -> List[DatasetItem]:
    gen = settings.gen
    if gen.kind == 'vdp':
        return generate_vdp_dataset(gen.count, settings.seed, gen.length, gen.step_size, gen.substeps)
    rng = make_rng(settings.seed, STREAM_DATAGEN)
    if gen.kind == 'tree':
        return as_dataset(generate_random_trees(gen.labels, gen.count, gen.max_nodes, rng, gen.ordered))
    if gen.kind == 'set':
        return as_dataset(generate_random_sets(gen.symbols, gen.count, rng, gen.min_size, gen.max_size))
    return as_dataset(generate_propositional(gen.count, rng))


@main.command()
@click.option("--kind", help="One of vdp, tree, set, propositional")
@click.option("--count", type=int, help="Number of instances")
@click.option("--max-nodes", type=int, help="Largest tree to generate")
@click.option("--seed", type=int)
@click.option("--output", type=click.Path(path_type=Path, dir_okay=False))
@reported
def gen(kind: Optional[str], count: Optional[int], max_nodes: Optional[int], seed: Optional[int],
        output: Optional[Path]):
    """
    Generate a synthetic dataset
    """
    settings = _load_settings(seed=seed, gen={'kind': kind, 'count': count, 'max_nodes': max_nodes},
                              paths={'output': output})
    output = _required(settings.paths.output, 'paths.output')
    items = generate_dataset(settings)
    write_instances(output, items)
    write_manifest(output, _manifest('gen', settings, instances=len(items)))


@main.command()
@click.option("--dataset", type=click.Path(path_type=Path, dir_okay=False))
@click.option("--output", type=click.Path(path_type=Path, dir_okay=False))
@click.option("--per-instance", type=int, help="Serializations to sample per instance")
@click.option("--mode", help="Sampler mode: enumerating, streaming or canonical")
@click.option("--seed", type=int)
@reported
def serialize(dataset: Optional[Path], output: Optional[Path], per_instance: Optional[int], mode: Optional[str],
              seed: Optional[int]):
    """
    Sample serializations of every instance of a dataset
    """
    settings = _load_settings(seed=seed, paths={'dataset': dataset, 'output': output},
                              sampler={'serializations_per_instance': per_instance, 'mode': mode})
    items = read_instances(_existing(settings.paths.dataset, 'paths.dataset'))
    output = _required(settings.paths.output, 'paths.output')
    backend = build_backend(infer_backend_spec(_instances(items)))
    sampler = Sampler(backend, settings.sampler.sampler_config(backend, settings.seed))
    corpus = sampler.sample_corpus(_instances(items), settings.sampler.serializations_per_instance)
    write_corpus(output, ((index, items[index].instance_id, serialization) for index, serialization in corpus))

    lengths = collections.Counter(len(serialization) for _, serialization in corpus)
    states = set()
    for _, serialization in corpus:
        states.update(backend.replay_states(serialization))
    click.echo(f"serializations={len(corpus)} distinct_states={len(states)}")
    for length, count in sorted(lengths.items()):
        click.echo(f"length={length} count={count}")
    write_manifest(output, _manifest('serialize', settings, serializations=len(corpus), distinct_states=len(states),
                                     lengths={str(length): count for length, count in sorted(lengths.items())}))


@main.command('train')
@click.option("--dataset", type=click.Path(path_type=Path, dir_okay=False))
@click.option("--checkpoint", type=click.Path(path_type=Path, dir_okay=False), help="Where to save the model")
@click.option("--metrics", type=click.Path(path_type=Path, dir_okay=False), help="Where to write the metrics CSV")
@click.option("--lambda", "lambda_", type=float, help="Regularization coefficient")
@click.option("--steps", type=int, help="Last training step")
@click.option("--hidden-dim", type=int)
@click.option("--objective", help="generative, classification or regression")
@click.option("--resume", type=click.Path(path_type=Path, dir_okay=False, exists=True),
              help="Continue from this checkpoint, appending to the metrics file")
@click.option("--seed", type=int)
@reported
def train_command(dataset: Optional[Path], checkpoint: Optional[Path], metrics: Optional[Path],
                  lambda_: Optional[float], steps: Optional[int], hidden_dim: Optional[int], objective: Optional[str],
                  resume: Optional[Path], seed: Optional[int]):
    """
    Train a sequence model on serializations sampled on the fly
    """
    settings = _load_settings(seed=seed, paths={'dataset': dataset, 'checkpoint': checkpoint, 'metrics': metrics},
                              train={'lambda': lambda_, 'max_steps': steps},
                              model={'hidden_dim': hidden_dim, 'objective': objective})
    items = read_instances(_existing(settings.paths.dataset, 'paths.dataset'))
    checkpoint_path = _required(settings.paths.checkpoint, 'paths.checkpoint')

    start = None
    if resume is not None:
        start = load_checkpoint(resume)
        spec = start.params.spec
        backend = _backend_of(spec)
        examples = training_examples(backend, items, spec.objective)
    else:
        backend = build_backend(infer_backend_spec(_instances(items)))
        examples = training_examples(backend, items, settings.model.objective)
        spec = model_spec_for(backend, examples, settings.model.objective, **settings.model.architecture())

    result = train(backend, examples, settings.train, spec, settings.sampler.sampler_config(backend, settings.seed),
                   settings.seed, resume=start)
    save_checkpoint(checkpoint_path, result.checkpoint)
    if settings.paths.metrics is not None:
        write_metrics(settings.paths.metrics, result.metrics, append=resume is not None)
    write_manifest(checkpoint_path, _manifest('train', settings, step=result.checkpoint.step,
                                              resumed_from=None if resume is None else str(resume),
                                              parameters=result.params.size))


@main.command()
@click.option("--checkpoint", type=click.Path(path_type=Path, dir_okay=False))
@click.option("--dataset", type=click.Path(path_type=Path, dir_okay=False),
              help="Training instances, for the oracle model")
@click.option("--test-dataset", type=click.Path(path_type=Path, dir_okay=False),
              help="Instances to estimate densities for.  Defaults to --dataset")
@click.option("--output", type=click.Path(path_type=Path, dir_okay=False))
@click.option("-m", "--draws", "m", type=int, help="Serializations drawn per instance")
@click.option("--model-source", help="checkpoint or oracle")
@click.option("--seed", type=int)
@reported
def recover(checkpoint: Optional[Path], dataset: Optional[Path], test_dataset: Optional[Path],
            output: Optional[Path], m: Optional[int], model_source: Optional[str], seed: Optional[int]):
    """
    Estimate the probability of structures under a sequence model
    """
    settings = _load_settings(
        seed=seed, recover={'m': m, 'model_source': model_source},
        paths={'checkpoint': checkpoint, 'dataset': dataset, 'test_dataset': test_dataset, 'output': output})
    paths = settings.paths
    output = _required(paths.output, 'paths.output')
    test_items = read_instances(_existing(paths.test_dataset or paths.dataset, 'paths.test_dataset'))

    if settings.recover.model_source == 'oracle':
        train_items = read_instances(_existing(paths.dataset, 'paths.dataset'))
        backend = build_backend(infer_backend_spec(_instances(train_items) + _instances(test_items)))
        sampler = Sampler(backend, settings.sampler.sampler_config(backend, settings.seed))
        model = build_tabular_oracle(_instances(train_items), backend, sampler, settings.sampler.enumeration_bound)
    else:
        params = load_checkpoint(_existing(paths.checkpoint, 'paths.checkpoint')).params
        backend = _backend_of(params.spec)
        sampler = Sampler(backend, settings.sampler.sampler_config(backend, settings.seed))
        model = RecurrentScorer(params)

    reports = []
    for index, item in enumerate(test_items):
        result = recover_density(item.instance, model, settings.recover.m, sampler,
                                 make_rng(settings.seed, STREAM_RECOVER, index))
        exact, available = None, None
        if settings.recover.exact:
            try:
                exact = pushforward_prob(item.instance, model, backend, settings.sampler.enumeration_bound)
                available = True
            except EnumerationTooLarge as ex:
                logger.warning(f"Exact density unavailable for instance {item.instance_id or index}: {ex}")
                available = False
        reports.append(result.report(item.instance_id if item.instance_id is not None else str(index), exact,
                                     available))

    with atomic_write(output) as file:
        for report in reports:
            file.write(json.dumps(report))
            file.write('\n')
    logger.info(f"Recovered densities of {len(reports)} instance(s)")
    write_manifest(output, _manifest('recover', settings, instances=len(reports)))


@main.command('eval')
@click.option("--checkpoint", type=click.Path(path_type=Path, dir_okay=False))
@click.option("--test-dataset", type=click.Path(path_type=Path, dir_okay=False))
@click.option("--output", type=click.Path(path_type=Path, dir_okay=False))
@click.option("--repeats", type=int, help="Serializations averaged per instance")
@click.option("--seed", type=int)
@reported
def eval_command(checkpoint: Optional[Path], test_dataset: Optional[Path], output: Optional[Path],
                 repeats: Optional[int], seed: Optional[int]):
    """
    Evaluate a discriminative model on labeled instances
    """
    settings = _load_settings(seed=seed, eval={'repeats': repeats},
                              paths={'checkpoint': checkpoint, 'test_dataset': test_dataset, 'output': output})
    paths = settings.paths
    output = _required(paths.output, 'paths.output')
    params = load_checkpoint(_existing(paths.checkpoint, 'paths.checkpoint')).params
    if params.spec.generative:
        raise MissingHead("The checkpoint holds a generative model, evaluation needs a discriminative head")
    backend = _backend_of(params.spec)
    items = read_instances(_existing(paths.test_dataset or paths.dataset, 'paths.test_dataset'))
    examples = training_examples(backend, items, params.spec.objective)
    sampler = Sampler(backend, settings.sampler.sampler_config(backend, settings.seed))
    report = evaluate(params, sampler, examples, settings.eval.repeats, settings.seed)

    with atomic_write(output) as file:
        writer = csv.writer(file, lineterminator='\n')
        writer.writerow(('instance_index', 'instance_id', 'target', 'predicted', 'correct', 'nll'))
        for prediction in report.predictions:
            writer.writerow((prediction.index, items[prediction.index].instance_id or '',
                             json.dumps(prediction.target), json.dumps(prediction.predicted),
                             '' if prediction.correct is None else int(prediction.correct), repr(prediction.nll)))
    click.echo(f"instances={len(report.predictions)} accuracy={report.accuracy} mean_nll={report.mean_nll!r} "
               f"correlation={report.correlation}")
    write_manifest(output, _manifest('eval', settings, accuracy=report.accuracy, mean_nll=report.mean_nll,
                                     correlation=report.correlation))


@main.command('generate')
@click.option("--checkpoint", type=click.Path(path_type=Path, dir_okay=False))
@click.option("--dataset", type=click.Path(path_type=Path, dir_okay=False),
              help="Condition each draw on the features of these instances")
@click.option("--output", type=click.Path(path_type=Path, dir_okay=False))
@click.option("--count", type=int, help="Draws, or draws per conditioning instance")
@click.option("--unconstrained", is_flag=True, help="Do not mask symbols the grammar rejects")
@click.option("--seed", type=int)
@reported
def generate_command(checkpoint: Optional[Path], dataset: Optional[Path], output: Optional[Path], count: Optional[int],
                     unconstrained: bool, seed: Optional[int]):
    """
    Draw new structures from a generative model
    """
    settings = _load_settings(seed=seed, paths={'checkpoint': checkpoint, 'dataset': dataset, 'output': output},
                              generate={'count': count, 'constrained': False if unconstrained else None})
    paths = settings.paths
    options = settings.generate
    output = _required(paths.output, 'paths.output')
    params = load_checkpoint(_existing(paths.checkpoint, 'paths.checkpoint')).params
    if not params.spec.generative:
        raise MissingHead("The checkpoint holds a discriminative model, generation needs a generative head")
    backend = _backend_of(params.spec)

    conditions: List[Tuple[str, Optional[Any]]] = [('', None)]
    if paths.dataset is not None:
        conditions = [(item.instance_id if item.instance_id is not None else str(index), item.instance)
                      for index, item in enumerate(read_instances(_existing(paths.dataset, 'paths.dataset')))]

    items = []
    statuses = collections.Counter()
    draw = 0
    for source_id, condition in conditions:
        for _ in range(options.count):
            rng = make_rng(settings.seed, STREAM_GENERATE, draw)
            if condition is None:
                result = generate(params, backend, rng, max_length=options.max_length,
                                  constrained=options.constrained)
            else:
                result = generate_conditional(params, backend, condition, rng, options.max_length,
                                              options.constrained)
            statuses[result.status] += 1
            if result.complete:
                instance_id = str(draw) if condition is None else f"{source_id}.{draw}"
                items.append(DatasetItem(result.instance, instance_id))
            draw += 1

    write_instances(output, items)
    click.echo(' '.join(f"{status}={statuses[status]}" for status in ('ok', 'malformed', 'truncated')))
    write_manifest(output, _manifest('generate', settings, draws=draw, instances=len(items),
                                     statuses=dict(sorted(statuses.items()))))


if __name__ == '__main__':
    main()
