"""Locating and reading the bundled YAML data files."""

from __future__ import annotations

import os
from pathlib import Path

import yaml

ENV_VAR = "LPNN_FIXTURES"
PACKAGE_DATA = Path(__file__).with_name("data")


def fixture_dir() -> Path:
    override = os.environ.get(ENV_VAR)
    return Path(override) if override else PACKAGE_DATA


def fixture_path(name: str) -> Path:
    path = fixture_dir() / name
    if not path.exists() and fixture_dir() != PACKAGE_DATA:
        # overrides may supply only some files
        path = PACKAGE_DATA / name
    return path


def load_yaml(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        data = yaml.safe_load(fh)
    if not isinstance(data, dict):
        raise ValueError(f"{path}: expected a mapping at top level")
    return data


def load_fixture(name: str) -> dict:
    return load_yaml(fixture_path(name))
