"""Plant description, measurement maps, nonlinearity classes, and estimator gains.

The plant is

    dx/dt = A x + B_phi * phi(H x) + B_theta * theta(Ht x) + g(t) + B_w w(t)
    y_k   = C_k x,   k = 1..N

where ``phi`` is componentwise nondecreasing and ``theta`` satisfies the
incremental quadratic constraint  |a-b|^2 >= tau^2 |theta(a)-theta(b)|^2.

Nonlinearities are named built-ins selected by a config dict so that runs
are reproducible from the config alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from distobs.exceptions import EvaluationError


# ---------------------------------------------------------------------------
# named nonlinearities
# ---------------------------------------------------------------------------

def _cube_root(y):
    # sign(y)*|y|^(1/3): real and odd on negative arguments
    return np.cbrt(y)


def _make_saturation(lo: float, hi: float):
    if not lo < hi:
        raise ValueError("saturation needs lo < hi")

    def sat(y):
        return np.clip(y, lo, hi)

    return sat


def _make_polynomial(coeffs):
    c = np.asarray(coeffs, dtype=float)
    if c.ndim != 1 or c.size == 0:
        raise ValueError("polynomial coeffs must be a non-empty 1-d list")

    def poly(y):
        # coeffs ascending: c[0] + c[1] y + c[2] y^2 + ...
        return np.polynomial.polynomial.polyval(y, c)

    return poly


@dataclass(frozen=True)
class Nonlinearity:
    """Componentwise scalar map applied to every entry of its input vector."""

    kind: str
    params: dict
    _fn: Callable = field(repr=False, compare=False)

    def __call__(self, v):
        v = np.asarray(v, dtype=float)
        out = np.asarray(self._fn(v), dtype=float)
        if not np.all(np.isfinite(out)):
            raise EvaluationError(f"nonlinearity '{self.kind}' returned non-finite values")
        return out


def make_nonlinearity(spec: dict | str | None) -> Nonlinearity:
    """Build a named nonlinearity from ``{"kind": ..., <params>}`` (or a bare kind string)."""
    if spec is None:
        spec = {"kind": "zero"}
    if isinstance(spec, str):
        spec = {"kind": spec}
    kind = spec.get("kind")
    params = {k: v for k, v in spec.items() if k != "kind"}
    if kind == "cube_root":
        fn = _cube_root
    elif kind == "identity":
        fn = lambda y: np.asarray(y, dtype=float)
    elif kind == "zero":
        fn = lambda y: np.zeros_like(np.asarray(y, dtype=float))
    elif kind == "saturation":
        fn = _make_saturation(float(params.get("lo", -1.0)), float(params.get("hi", 1.0)))
    elif kind == "polynomial":
        fn = _make_polynomial(params.get("coeffs", []))
    elif kind == "scale":
        a = float(params.get("factor", 1.0))
        fn = lambda y: a * np.asarray(y, dtype=float)
    else:
        raise ValueError(f"unknown nonlinearity kind '{kind}'")
    return Nonlinearity(kind=kind, params=params, _fn=fn)


def make_input_signal(spec: dict | str | None, n: int) -> Callable[[float], np.ndarray]:
    """Known input term g(t) as a named time signal (default zero)."""
    if spec is None:
        spec = {"kind": "zero"}
    if isinstance(spec, str):
        spec = {"kind": spec}
    kind = spec.get("kind")
    if kind == "zero":
        z = np.zeros(n)
        return lambda t: z
    if kind == "constant":
        v = np.asarray(spec.get("value"), dtype=float).reshape(n)
        return lambda t: v
    raise ValueError(f"unknown input signal kind '{kind}'")


# ---------------------------------------------------------------------------
# plant model
# ---------------------------------------------------------------------------

def _as_matrix(M, rows=None, cols=None, name="matrix") -> np.ndarray:
    A = np.asarray(M, dtype=float)
    if A.ndim != 2:
        raise ValueError(f"{name} must be 2-d, got shape {A.shape}")
    if rows is not None and A.shape[0] != rows:
        raise ValueError(f"{name} must have {rows} rows, got {A.shape[0]}")
    if cols is not None and A.shape[1] != cols:
        raise ValueError(f"{name} must have {cols} columns, got {A.shape[1]}")
    if not np.all(np.isfinite(A)):
        raise ValueError(f"{name} has non-finite entries")
    return A


@dataclass(frozen=True)
class PlantModel:
    """Plant matrices, per-node measurement maps, and nonlinearity evaluators.

    Immutable after construction; the evaluators must be pure, so N
    estimators may be simulated concurrently.
    """

    A: np.ndarray
    B_phi: np.ndarray
    H: np.ndarray
    B_theta: np.ndarray
    H_tilde: np.ndarray
    B_w: np.ndarray
    C: tuple
    tau: float
    phi: Nonlinearity
    theta: Nonlinearity
    g_u: Callable = None

    def __post_init__(self):
        n = np.asarray(self.A).shape[0]
        object.__setattr__(self, "A", _as_matrix(self.A, n, n, "A"))
        object.__setattr__(self, "B_phi", _as_matrix(self.B_phi, n, None, "B_phi"))
        r = self.B_phi.shape[1]
        object.__setattr__(self, "H", _as_matrix(self.H, r, n, "H"))
        object.__setattr__(self, "B_theta", _as_matrix(self.B_theta, n, None, "B_theta"))
        rt = self.B_theta.shape[1]
        object.__setattr__(self, "H_tilde", _as_matrix(self.H_tilde, rt, n, "H_tilde"))
        object.__setattr__(self, "B_w", _as_matrix(self.B_w, n, None, "B_w"))
        object.__setattr__(
            self, "C", tuple(_as_matrix(Ck, None, n, f"C_{k+1}") for k, Ck in enumerate(self.C))
        )
        if not len(self.C) >= 1:
            raise ValueError("at least one measurement map C_k is required")
        if not float(self.tau) > 0.0:
            raise ValueError("tau must be positive")
        object.__setattr__(self, "tau", float(self.tau))
        if self.g_u is None:
            object.__setattr__(self, "g_u", make_input_signal("zero", n))

    # dimensions
    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def r(self) -> int:
        return self.B_phi.shape[1]

    @property
    def r_tilde(self) -> int:
        return self.B_theta.shape[1]

    @property
    def l(self) -> int:
        return self.B_w.shape[1]

    @property
    def node_count(self) -> int:
        return len(self.C)

    def q(self, k: int) -> int:
        """Output dimension of node k (1-based)."""
        return self.C[k - 1].shape[0]


def zeros_plant_parts(n: int):
    """Empty B_theta/H_tilde pair for models without an IQC nonlinearity."""
    return np.zeros((n, 0)), np.zeros((0, n))


# ---------------------------------------------------------------------------
# estimator gains
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EstimatorGains:
    """Per-node injection gains and per-edge consensus gains.

    ``K`` and ``K_tilde`` are keyed by directed pairs (k, j) with j a
    neighbor of k; gains need not be symmetric across an edge.
    """

    L: tuple
    L_tilde: tuple
    K: dict
    K_tilde: dict

    def __post_init__(self):
        object.__setattr__(self, "L", tuple(np.asarray(M, dtype=float) for M in self.L))
        object.__setattr__(self, "L_tilde", tuple(np.asarray(M, dtype=float) for M in self.L_tilde))
        object.__setattr__(self, "K", {tuple(k): np.asarray(M, dtype=float) for k, M in self.K.items()})
        object.__setattr__(
            self, "K_tilde", {tuple(k): np.asarray(M, dtype=float) for k, M in self.K_tilde.items()}
        )
        for M in list(self.L) + list(self.L_tilde) + list(self.K.values()) + list(self.K_tilde.values()):
            if not np.all(np.isfinite(M)):
                raise ValueError("gain entries must be finite")

    def neighbors_of(self, k: int) -> list[int]:
        """Neighbor indices node k couples to, ascending (matches graph order)."""
        return sorted(j for (a, j) in self.K if a == k)


def zero_gains(model: PlantModel, graph) -> EstimatorGains:
    """All-zero gains over the given topology (open-loop model copies)."""
    n, r = model.n, model.r
    L = [np.zeros((n, model.q(k))) for k in range(1, graph.node_count + 1)]
    Lt = [np.zeros((r, model.q(k))) for k in range(1, graph.node_count + 1)]
    K = {}
    Kt = {}
    for k in range(1, graph.node_count + 1):
        for j in graph.neighbors(k):
            K[(k, j)] = np.zeros((n, n))
            Kt[(k, j)] = np.zeros((r, n))
    return EstimatorGains(L=tuple(L), L_tilde=tuple(Lt), K=K, K_tilde=Kt)


# ---------------------------------------------------------------------------
# synthesis configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SynthesisConfig:
    """Design parameters shared by the synthesis paths.

    ``W`` defaults to identity weights when omitted (flagged in reports);
    ``pi``/``lam`` accept scalars that broadcast over nodes.
    """

    gamma: float
    pi: tuple
    lam: tuple
    alpha: float = 0.1
    epsilon: float = 1e-3
    W: tuple = None
    minimize_gamma: bool = False
    w_defaulted: bool = False
    solver: "object" = None  # SolverOptions; late import to avoid cycles

    def __post_init__(self):
        if not float(self.gamma) > 0:
            raise ValueError("gamma must be positive")
        object.__setattr__(self, "gamma", float(self.gamma))
        pi = tuple(float(p) for p in np.atleast_1d(self.pi))
        if any(p <= 0 for p in pi):
            raise ValueError("all pi_k must be positive")
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "lam", tuple(float(v) for v in np.atleast_1d(self.lam)))
        if not float(self.alpha) > 0:
            raise ValueError("alpha must be positive")
        if not float(self.epsilon) > 0:
            raise ValueError("epsilon must be positive")
        if self.W is not None:
            W = tuple(np.asarray(Wk, dtype=float) for Wk in self.W)
            for Wk in W:
                if Wk.shape[0] != Wk.shape[1] or not np.allclose(Wk, Wk.T):
                    raise ValueError("each W_k must be square symmetric")
                if np.min(np.linalg.eigvalsh(0.5 * (Wk + Wk.T))) < -1e-10:
                    raise ValueError("each W_k must be positive semidefinite")
            object.__setattr__(self, "W", W)
        if self.solver is None:
            from distobs.sdp.solver import SolverOptions

            object.__setattr__(self, "solver", SolverOptions())

    def pi_k(self, k: int, N: int) -> float:
        return self.pi[k - 1] if len(self.pi) == N else self.pi[0]

    def lam_k(self, k: int, N: int) -> float:
        return self.lam[k - 1] if len(self.lam) == N else self.lam[0]

    def W_k(self, k: int, n: int, N: int) -> np.ndarray:
        if self.W is None:
            return np.eye(n)
        return self.W[k - 1] if len(self.W) == N else self.W[0]

    def W_bar_k(self, k: int, model: PlantModel) -> np.ndarray:
        """Effective weight W_k + Ht' Ht entering the synthesis blocks."""
        Ht = model.H_tilde
        return self.W_k(k, model.n, model.node_count) + Ht.T @ Ht


def default_config(model: PlantModel, graph, gamma: float = 4.0, **kw) -> SynthesisConfig:
    """Config with the documented defaults pi_k=0.1, lambda_k=1, W_k=I."""
    N = graph.node_count
    kw.setdefault("pi", tuple([0.1] * N))
    kw.setdefault("lam", tuple([1.0] * N))
    w_defaulted = "W" not in kw or kw.get("W") is None
    return SynthesisConfig(gamma=gamma, w_defaulted=w_defaulted, **kw)


# ---------------------------------------------------------------------------
# right-hand sides
# ---------------------------------------------------------------------------

def plant_rhs(model: PlantModel, x, w, t: float) -> np.ndarray:
    """Plant state derivative A x + B_phi phi(Hx) + B_theta theta(Ht x) + g(t) + B_w w."""
    x = np.asarray(x, dtype=float).reshape(model.n)
    w = np.asarray(w, dtype=float).reshape(model.l)
    dx = model.A @ x + model.g_u(t) + model.B_w @ w
    if model.r:
        dx = dx + model.B_phi @ model.phi(model.H @ x)
    if model.r_tilde:
        dx = dx + model.B_theta @ model.theta(model.H_tilde @ x)
    if not np.all(np.isfinite(dx)):
        raise EvaluationError("plant right-hand side is non-finite")
    return dx


def estimator_rhs(model: PlantModel, gains: EstimatorGains, k: int, xhat_k, xhat_neighbors, y_k, t: float) -> np.ndarray:
    """Estimator-k state derivative.

    ``xhat_neighbors`` must be ordered by ascending neighbor index,
    matching ``graph.neighbors(k)``.
    """
    n = model.n
    xhat_k = np.asarray(xhat_k, dtype=float).reshape(n)
    y_k = np.asarray(y_k, dtype=float).reshape(model.q(k))
    nbrs = gains.neighbors_of(k)
    if len(xhat_neighbors) != len(nbrs):
        raise ValueError(f"node {k} expects {len(nbrs)} neighbor estimates, got {len(xhat_neighbors)}")

    innov = y_k - model.C[k - 1] @ xhat_k
    consensus = np.zeros(n)
    v_consensus = np.zeros(model.r)
    for j, xhat_j in zip(nbrs, xhat_neighbors):
        diff = np.asarray(xhat_j, dtype=float).reshape(n) - xhat_k
        consensus = consensus + gains.K[(k, j)] @ diff
        v_consensus = v_consensus + gains.K_tilde[(k, j)] @ diff

    dx = model.A @ xhat_k + model.g_u(t) + gains.L[k - 1] @ innov + consensus
    if model.r:
        v_k = model.H @ xhat_k + gains.L_tilde[k - 1] @ innov + v_consensus
        dx = dx + model.B_phi @ model.phi(v_k)
    if model.r_tilde:
        dx = dx + model.B_theta @ model.theta(model.H_tilde @ xhat_k)
    if not np.all(np.isfinite(dx)):
        raise EvaluationError(f"estimator {k} right-hand side is non-finite")
    return dx


# ---------------------------------------------------------------------------
# sampling-based validation of the nonlinearity assumptions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    worst: float
    limit: float = 0.0
    detail: str = ""


def _sample_box(box, dim: int, samples: int, seed: int):
    box = np.asarray(box if box is not None else (-10.0, 10.0), dtype=float)
    if box.ndim == 1:
        box = np.tile(box, (dim, 1))
    if box.shape != (dim, 2):
        raise ValueError(f"sample box must be (lo, hi) or shape ({dim}, 2)")
    rng = np.random.default_rng(seed)
    lo, hi = box[:, 0], box[:, 1]
    a = lo + (hi - lo) * rng.random((samples, dim))
    b = lo + (hi - lo) * rng.random((samples, dim))
    return a, b


def validate_sector(model: PlantModel, sample_box=None, samples: int = 10_000, seed: int = 0) -> ValidationReport:
    """Check componentwise monotonicity of phi on sampled pairs.

    Reports the worst signed product (phi_i(a)-phi_i(b))*(a-b); negative
    values indicate a violation.
    """
    if samples < 2:
        raise ValueError("samples must be >= 2")
    if model.r == 0:
        return ValidationReport(ok=True, worst=0.0, detail="phi absent")
    a, b = _sample_box(sample_box, model.r, samples, seed)
    prods = (model.phi(a) - model.phi(b)) * (a - b)
    worst = float(np.min(prods))
    return ValidationReport(ok=worst >= -1e-12, worst=worst)


def validate_iqc(model: PlantModel, sample_box=None, samples: int = 10_000, seed: int = 0) -> ValidationReport:
    """Check |a-b| >= tau*|theta(a)-theta(b)| on sampled pairs.

    Reports the worst ratio |theta(a)-theta(b)|/|a-b| against the limit
    1/tau; the boundary ratio 1/tau counts as satisfying (non-strict).
    """
    if samples < 2:
        raise ValueError("samples must be >= 2")
    limit = 1.0 / model.tau
    if model.r_tilde == 0:
        return ValidationReport(ok=True, worst=0.0, limit=limit, detail="theta absent")
    a, b = _sample_box(sample_box, model.r_tilde, samples, seed)
    d_in = np.linalg.norm(a - b, axis=1)
    d_out = np.linalg.norm(model.theta(a) - model.theta(b), axis=1)
    mask = d_in > 0
    ratios = d_out[mask] / d_in[mask]
    worst = float(np.max(ratios)) if ratios.size else 0.0
    return ValidationReport(ok=worst <= limit * (1.0 + 1e-9), worst=worst, limit=limit)
