import collections.abc
import contextlib
import functools
import json
import logging
import os
import signal
import tempfile
from copy import deepcopy
from pathlib import Path
from typing import Any, Collection, Dict, Iterable, Iterator, Mapping, Optional, TextIO, Union

import appdirs

from .core import ConfigError

logger = logging.getLogger(__name__)


def merge(base, update):
    base = deepcopy(base)
    for key, value in update.items():
        if isinstance(value, collections.abc.Mapping):
            base[key] = merge(base.get(key, {}), value)
        else:
            base[key] = value
    return base


def nest_dotted(flat: Mapping[str, Any]) -> Dict[str, Any]:
    """
    Turn {'train.lambda': 1} into {'train': {'lambda': 1}}.  Later keys win on conflict.
    """
    result = {}
    for dotted_key, value in flat.items():
        *parents, leaf = dotted_key.split('.')
        nested = {leaf: value}
        for parent in reversed(parents):
            nested = {parent: nested}
        result = merge(result, nested)
    return result


def drop_none(values: Mapping[str, Any]) -> Dict[str, Any]:
    """
    Recursively remove None values.  Unset command line flags arrive as None and must not override file settings.
    """
    result = {}
    for key, value in values.items():
        if isinstance(value, collections.abc.Mapping):
            value = drop_none(value)
            if value:
                result[key] = value
        elif value is not None:
            result[key] = value
    return result


def clean_shutdown(num, _):
    """
    Intended to be used as a signal handler
    """
    # pylint: disable=no-member
    logger.error(f"Caught signal '{signal.Signals(num).name}' - Shutting down")
    raise KeyboardInterrupt(f"Signal '{signal.Signals(num).name}'")


# pylint: disable=no-value-for-parameter
def register_clean_shutdown(numbers: Collection[Union[int, signal.Signals]] = (signal.SIGINT, signal.SIGTERM)):
    for num in numbers:
        signal.signal(num, clean_shutdown)


def str_exception(exception: Exception):
    return str(exception) or str(type(exception).__name__)


class ConfigFileError(ConfigError):

    def __init__(self, file_path: Path, line_number: int, reason: str):
        super().__init__(f"{file_path}:{line_number}: {reason}")
        self.file_path = file_path
        self.line_number = line_number


def parse_config_text(text: str, file_path: Path = Path('<string>')) -> Dict[str, Any]:
    """
    Parse the line oriented configuration format:

        # comment
        section.key = value

    Values are kept as strings; pydantic coerces them into the declared field types.  A value that parses as JSON
    (lists, objects, quoted strings) is decoded first so that composite values can be expressed on one line.
    """
    flat = {}
    for line_number, line in enumerate(text.splitlines(), start=1):
        line = line.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            raise ConfigFileError(file_path, line_number, f"expected 'key = value', got '{line}'")
        key, value = (part.strip() for part in line.split('=', 1))
        if not key:
            raise ConfigFileError(file_path, line_number, "missing key")
        flat[key] = _decode_value(value)
    return nest_dotted(flat)


def parse_overrides(items: Iterable[str]) -> Dict[str, Any]:
    """
    Command line overrides in the configuration file syntax: ["train.lambda=1", "model.hidden_dim=8"].
    """
    flat = {}
    for item in items:
        if '=' not in item:
            raise ConfigError(f"Override must look like section.key=value, got '{item}'")
        key, value = (part.strip() for part in item.split('=', 1))
        flat[key] = _decode_value(value)
    return nest_dotted(flat)


def _decode_value(value: str) -> Any:
    if value[:1] in ('[', '{', '"'):
        try:
            return json.loads(value)
        except json.JSONDecodeError:
            pass
    return value


class SettingsConfig:
    APP_NAME = 'structseq'
    SETTINGS_FILE_DEFAULT_NAME: str = 'structseq.conf'

    @classmethod
    def customise_sources(cls, init_settings, env_settings, file_secret_settings):
        """
        Load settings from the specified config_path or, failing that, the user config path if it exists.  Init
        arguments (command line flags) override the file, the file overrides the environment.
        """
        config_path = init_settings.init_kwargs.pop('config_path', None)
        if config_path is None:
            config_path = cls.user_config_path()
            if not config_path.is_file():
                config_path = None
        else:
            config_path = Path(config_path)
            if not config_path.is_file():
                raise ConfigFileError(config_path, 0, "configuration file does not exist")

        loaders = []
        if config_path is not None:
            logger.debug("Loading settings from '%s'", config_path)
            loaders.append(functools.partial(cls._load_settings, config_path))

        return (
            init_settings,
            *loaders,
            env_settings,
            file_secret_settings,
        )

    @classmethod
    def user_config_path(cls) -> Path:
        return Path(appdirs.user_config_dir(cls.APP_NAME), cls.SETTINGS_FILE_DEFAULT_NAME)

    @classmethod
    def _load_settings(cls, file_path: Path, context) -> Dict[str, Any]:
        with file_path.open('r', encoding='utf-8') as settings_file:
            return parse_config_text(settings_file.read(), file_path)


@contextlib.contextmanager
def atomic_write(path: Union[str, Path], mode: str = 'w', encoding: Optional[str] = 'utf-8') -> Iterator[TextIO]:
    """
    Write to a temporary file in the same directory then rename it over the target.  Nothing is left behind if the
    body raises.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if 'b' in mode:
        encoding = None
    file_descriptor, temp_name = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(file_descriptor, mode, encoding=encoding, newline='' if 'b' not in mode else None) as file:
            yield file
        os.replace(temp_name, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(temp_name)
        raise


def manifest_path(output: Union[str, Path]) -> Path:
    output = Path(output)
    return output.with_name(output.name + '.manifest.json')


def write_manifest(output: Union[str, Path], content: Mapping[str, Any]):
    with atomic_write(manifest_path(output)) as file:
        json.dump(content, file, indent=2, sort_keys=True, default=str)
        file.write('\n')
