"""Declarative run configuration.

One YAML file holds the system matrices (row-major nested arrays), the
communication graph, the synthesis parameters, and the simulation
scenarios; everything needed to reproduce a run lives in this single
artifact.  Solver tolerances are the only values that may additionally be
overridden through DISTOBS_* environment variables.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import yaml

from distobs.exceptions import ConfigError
from distobs.graph import CommGraph, complete, from_edges, ring
from distobs.model import (
    PlantModel,
    SynthesisConfig,
    make_input_signal,
    make_nonlinearity,
)
from distobs.sdp.solver import SolverOptions


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    x0: np.ndarray
    xhat0: str | list = "zero"
    disturbance: dict = field(default_factory=lambda: {"kind": "zero"})
    t_final: float = 20.0
    dt: float = 1e-3


@dataclass(frozen=True)
class RunConfig:
    name: str
    model: PlantModel
    graph: CommGraph
    synth: SynthesisConfig
    scenarios: dict
    validation: dict

    def scenario(self, name: str) -> ScenarioSpec:
        if name not in self.scenarios:
            raise ConfigError(f"scenario '{name}' not defined (have: {sorted(self.scenarios)})")
        return self.scenarios[name]

    def xhat0_vectors(self, spec: ScenarioSpec) -> tuple:
        n, N = self.model.n, self.graph.node_count
        if isinstance(spec.xhat0, str):
            if spec.xhat0 != "zero":
                raise ConfigError(f"scenario '{spec.name}': unknown xhat0 keyword '{spec.xhat0}'")
            return tuple(np.zeros(n) for _ in range(N))
        vecs = [np.asarray(v, dtype=float).reshape(n) for v in spec.xhat0]
        if len(vecs) != N:
            raise ConfigError(f"scenario '{spec.name}': xhat0 needs {N} vectors")
        return tuple(vecs)


def _need(d: dict, key: str, where: str):
    if key not in d:
        raise ConfigError(f"missing required key '{where}.{key}'")
    return d[key]


def _matrix(raw, where: str) -> np.ndarray:
    try:
        M = np.asarray(raw, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"'{where}' is not a numeric matrix: {exc}") from exc
    if M.ndim != 2:
        raise ConfigError(f"'{where}' must be a nested (row-major) 2-d array")
    return M


def _graph_from_dict(d: dict) -> CommGraph:
    nodes = int(_need(d, "nodes", "graph"))
    topology = d.get("topology")
    edges = d.get("edges")
    if (topology is None) == (edges is None):
        raise ConfigError("graph needs exactly one of 'topology' or 'edges'")
    if topology is not None:
        if topology == "ring":
            return ring(nodes)
        if topology == "complete":
            return complete(nodes)
        raise ConfigError(f"unknown graph.topology '{topology}' (ring | complete)")
    try:
        return from_edges(nodes, edges)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bad graph.edges: {exc}") from exc


def _model_from_dict(d: dict, N: int) -> PlantModel:
    A = _matrix(_need(d, "A", "system"), "system.A")
    n = A.shape[0]
    B_phi = _matrix(d["B_phi"], "system.B_phi") if d.get("B_phi") is not None else np.zeros((n, 0))
    r = B_phi.shape[1]
    H = _matrix(d["H"], "system.H") if d.get("H") is not None else np.zeros((r, n))
    B_theta = _matrix(d["B_theta"], "system.B_theta") if d.get("B_theta") is not None else np.zeros((n, 0))
    H_tilde = _matrix(d["H_tilde"], "system.H_tilde") if d.get("H_tilde") is not None else np.zeros((B_theta.shape[1], n))
    B_w = _matrix(d["B_w"], "system.B_w") if d.get("B_w") is not None else np.zeros((n, 0))
    C_raw = _need(d, "C", "system")
    if not isinstance(C_raw, (list, tuple)) or len(C_raw) != N:
        raise ConfigError(f"system.C must list {N} per-node matrices")
    C = tuple(_matrix(Ck, f"system.C[{i}]") for i, Ck in enumerate(C_raw))
    try:
        return PlantModel(
            A=A, B_phi=B_phi, H=H, B_theta=B_theta, H_tilde=H_tilde, B_w=B_w, C=C,
            tau=float(d.get("tau", 1.0)),
            phi=make_nonlinearity(d.get("phi")),
            theta=make_nonlinearity(d.get("theta")),
            g_u=make_input_signal(d.get("input"), n),
        )
    except ValueError as exc:
        raise ConfigError(f"system: {exc}") from exc


def _solver_from_dict(d: dict | None) -> SolverOptions:
    opts = SolverOptions()
    if d:
        valid = set(SolverOptions.__dataclass_fields__)
        bad = set(d) - valid
        if bad:
            raise ConfigError(f"unknown solver option(s): {sorted(bad)}")
        from dataclasses import replace

        coerced = {}
        for key, val in d.items():
            coerced[key] = int(val) if key == "max_newton" else (bool(val) if key == "verbose" else float(val))
        opts = replace(opts, **coerced)
    return opts.with_env_overrides()


def _synth_from_dict(d: dict, model: PlantModel, N: int) -> SynthesisConfig:
    if "gamma" not in d:
        raise ConfigError("missing required key 'synthesis.gamma'")
    W = d.get("W")
    w_defaulted = W is None or W == "identity"
    if w_defaulted:
        W_mats = None
    else:
        if not isinstance(W, (list, tuple)):
            raise ConfigError("synthesis.W must be 'identity' or a list of matrices")
        W_mats = tuple(_matrix(Wk, f"synthesis.W[{i}]") for i, Wk in enumerate(W))
    try:
        return SynthesisConfig(
            gamma=float(d["gamma"]),
            pi=tuple(np.atleast_1d(np.asarray(d.get("pi", 0.1), dtype=float))),
            lam=tuple(np.atleast_1d(np.asarray(d.get("lambda", 1.0), dtype=float))),
            alpha=float(d.get("alpha", 0.1)),
            epsilon=float(d.get("epsilon", 1e-3)),
            W=W_mats,
            minimize_gamma=bool(d.get("minimize_gamma", False)),
            w_defaulted=w_defaulted,
            solver=_solver_from_dict(d.get("solver")),
        )
    except ValueError as exc:
        raise ConfigError(f"synthesis: {exc}") from exc


def _scenarios_from_dict(d: dict | None, n: int) -> dict:
    out = {}
    if not d:
        return out
    for name, s in d.items():
        where = f"scenarios.{name}"
        x0 = np.asarray(_need(s, "x0", where), dtype=float)
        if x0.shape != (n,):
            raise ConfigError(f"'{where}.x0' must have {n} entries")
        out[name] = ScenarioSpec(
            name=name,
            x0=x0,
            xhat0=s.get("xhat0", "zero"),
            disturbance=s.get("disturbance", {"kind": "zero"}),
            t_final=float(s.get("t_final", 20.0)),
            dt=float(s.get("dt", 1e-3)),
        )
    return out


def from_dict(raw: dict, name: str = "config") -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("top-level config must be a mapping")
    graph = _graph_from_dict(_need(raw, "graph", "config"))
    model = _model_from_dict(_need(raw, "system", "config"), graph.node_count)
    synth = _synth_from_dict(_need(raw, "synthesis", "config"), model, graph.node_count)
    scenarios = _scenarios_from_dict(raw.get("scenarios"), model.n)
    validation = dict(raw.get("validation") or {})
    validation.setdefault("samples", 10_000)
    validation.setdefault("box", [-10.0, 10.0])
    return RunConfig(
        name=str(raw.get("name", name)),
        model=model,
        graph=graph,
        synth=synth,
        scenarios=scenarios,
        validation=validation,
    )


def load_config(path) -> RunConfig:
    """Parse and validate a YAML config file."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config '{path}': {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"YAML parse error in '{path}': {exc}") from exc
    return from_dict(raw, name=str(path))
