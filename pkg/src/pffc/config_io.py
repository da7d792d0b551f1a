"""Flat key-value configuration files.

One ``key = value`` assignment per line, ``#`` starts a comment, blank
lines are ignored.  Keys are exactly the configuration field names, so a
written file reparses to an identical configuration.
"""

from __future__ import annotations

import dataclasses

from .experiments import ExperimentConfig


def format_config(config: ExperimentConfig) -> str:
    lines = ["# benchmark configuration"]
    for field in dataclasses.fields(config):
        value = getattr(config, field.name)
        if isinstance(value, float):
            text = repr(value)
        else:
            text = str(value)
        lines.append(f"{field.name} = {text}")
    return "\n".join(lines) + "\n"


def write_config(path: str, config: ExperimentConfig) -> None:
    with open(path, "w") as fh:
        fh.write(format_config(config))


def parse_config(text: str) -> ExperimentConfig:
    """Parse assignments into a configuration, starting from the defaults.

    Unknown keys and values that do not convert to the field's type are
    errors; later assignments override earlier ones.
    """
    types = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key = key.strip()
        value = value.strip()
        if key not in types:
            raise ValueError(f"line {lineno}: unknown configuration key {key!r}")
        kind = types[key]
        try:
            if kind in ("int", int):
                values[key] = int(value)
            elif kind in ("float", float):
                values[key] = float(value)
            else:
                values[key] = value
        except ValueError as exc:
            raise ValueError(f"line {lineno}: bad value for {key!r}: {value!r}") from exc
    return dataclasses.replace(ExperimentConfig(), **values)


def read_config(path: str) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(fh.read())
