"""Bundled six-oscillator benchmark: a ring of six estimators, each with one
relative measurement, observing a 6-state oscillator with a cube-root
sensor nonlinearity.  The block-diagonal design conditions are infeasible
for this system while the two-step synthesis succeeds, so the benchmark
exercises both paths end to end."""

from __future__ import annotations

from importlib import resources

from distobs.config import RunConfig, load_config

CONFIG_RESOURCE = "ring_oscillator6.yaml"


def config_path():
    """Filesystem path of the bundled benchmark config."""
    return resources.files("distobs").joinpath("data", CONFIG_RESOURCE)


def load() -> RunConfig:
    with resources.as_file(config_path()) as p:
        return load_config(p)
