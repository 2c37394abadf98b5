# pylint: disable=redefined-outer-name
from pathlib import Path
from typing import Optional

import click.testing
import pytest

from structseq import cmdline


@pytest.fixture(autouse=True)
def user_config_path(tmp_path, monkeypatch) -> Path:
    path = tmp_path / 'user_local' / cmdline.RunConfig.Config.SETTINGS_FILE_DEFAULT_NAME
    monkeypatch.setattr(cmdline.RunConfig.Config, 'user_config_path', lambda: path)
    return path


@pytest.fixture()
def cli_runner():
    def _cli_runner(*args: str, catch_exceptions: bool = False, exit_code: Optional[int] = 0):
        runner = click.testing.CliRunner()
        result = runner.invoke(cmdline.main, [str(arg) for arg in args], catch_exceptions=catch_exceptions)
        if exit_code is not None:
            if result.exit_code != exit_code:
                raise RuntimeError(f"Unexpected return code {result.exit_code}, expected {exit_code}. \n"
                                   f"Output was\n{result.output}")
        return result
    return _cli_runner


@pytest.fixture()
def set_dataset(tmp_path, cli_runner) -> Path:
    path = tmp_path / 'sets.jsonl'
    cli_runner('gen', '--kind', 'set', '--count', 5, '--seed', 1, '--output', path)
    return path


@pytest.fixture()
def propositional_dataset(tmp_path, cli_runner) -> Path:
    path = tmp_path / 'records.jsonl'
    cli_runner('gen', '--kind', 'propositional', '--count', 12, '--seed', 2, '--output', path)
    return path
