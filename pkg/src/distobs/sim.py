"""Coupled plant/estimator-network simulation and performance metrics.

The plant and all N estimators are integrated as one (N+1)*n-dimensional
ODE with fixed-step RK4 (adaptive stepping is rejected on purpose: runs
must be bit-reproducible from the config and seed alone).  Cost integrals
use the trapezoid rule on the same grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from distobs.exceptions import DegenerateFitError, DivergenceError
from distobs.graph import CommGraph
from distobs.model import EstimatorGains, PlantModel, SynthesisConfig


# ---------------------------------------------------------------------------
# disturbance signals
# ---------------------------------------------------------------------------

def make_disturbance(spec: dict | str | None, l: int):
    """Named disturbance signal as a callable t -> (l,) array.

    Kinds: zero | sinusoid{amp, freq} | pulse{amp, t_on, t_off} |
    seeded-noise{amp, bandwidth, seed}.  Seeded noise is a sum of 20
    random-phase sinusoids below the bandwidth, deterministic from the
    seed, so w stays in L2 on any finite horizon.
    """
    if spec is None:
        spec = {"kind": "zero"}
    if isinstance(spec, str):
        spec = {"kind": spec}
    kind = spec.get("kind")
    if kind == "zero":
        z = np.zeros(l)
        return lambda t: z
    if kind == "sinusoid":
        amp = float(spec.get("amp", 1.0))
        freq = float(spec.get("freq", 1.0))
        return lambda t: amp * np.sin(2.0 * np.pi * freq * t) * np.ones(l)
    if kind == "pulse":
        amp = float(spec.get("amp", 1.0))
        t_on = float(spec.get("t_on", 0.0))
        t_off = float(spec.get("t_off", 1.0))
        return lambda t: (amp if t_on <= t < t_off else 0.0) * np.ones(l)
    if kind == "seeded-noise":
        amp = float(spec.get("amp", 1.0))
        bw = float(spec.get("bandwidth", 1.0))
        seed = int(spec.get("seed", 0))
        n_tones = 20
        rng = np.random.default_rng(seed)
        freqs = rng.uniform(0.01 * bw, bw, size=(l, n_tones))
        phases = rng.uniform(0.0, 2.0 * np.pi, size=(l, n_tones))
        scale = amp / np.sqrt(n_tones)

        def noise(t):
            return scale * np.sum(np.sin(2.0 * np.pi * freqs * t + phases), axis=1)

        return noise
    raise ValueError(f"unknown disturbance kind '{kind}'")


def sinusoid_energy(amp: float, freq: float, t_final: float, l: int = 1) -> float:
    """Closed-form integral of |w|^2 for the sinusoid disturbance."""
    w = 2.0 * np.pi * freq
    return l * amp ** 2 * (t_final / 2.0 - np.sin(2.0 * w * t_final) / (4.0 * w))


# ---------------------------------------------------------------------------
# scenario and result containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SimScenario:
    model: PlantModel
    graph: CommGraph
    gains: EstimatorGains
    x0: np.ndarray
    xhat0: tuple
    disturbance: dict = field(default_factory=lambda: {"kind": "zero"})
    t_final: float = 20.0
    dt: float = 1e-3
    name: str = "scenario"

    def __post_init__(self):
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float).reshape(self.model.n))
        object.__setattr__(
            self, "xhat0", tuple(np.asarray(v, dtype=float).reshape(self.model.n) for v in self.xhat0)
        )
        if len(self.xhat0) != self.graph.node_count:
            raise ValueError("one initial estimate per node is required")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.t_final >= self.dt:
            raise ValueError("t_final must be at least dt")


@dataclass(frozen=True)
class SimResult:
    t: np.ndarray
    x: np.ndarray            # (T, n) plant trajectory
    xhat: np.ndarray         # (N, T, n) estimates
    err_norms: np.ndarray    # (T, N)
    cost_error: float        # sum_k int e_k' W_k e_k dt
    cost_disturbance: float  # int w' w dt
    i0: float                # e(0)' P e(0) from the certificate (0 if uncertified)
    gamma: float | None
    ratio_bound_n: float | None   # cost_error / (N gamma^2 cost_w + I0)
    ratio_bound_1: float | None   # cost_error / (gamma^2 cost_w + I0)
    bound_certified: bool

    @property
    def node_count(self) -> int:
        return self.xhat.shape[0]


# ---------------------------------------------------------------------------
# stacked right-hand side
# ---------------------------------------------------------------------------

class _CoupledRhs:
    """Precomputed linear operators of the coupled plant + estimators system.

    State layout: X = [x; xhat_1; ...; xhat_N].  The linear part is one
    matrix; the phi inputs of the plant and all estimators stack into one
    vector, as do the theta inputs, so each evaluation is a handful of
    medium matrix products plus the componentwise nonlinearities.
    """

    def __init__(self, model: PlantModel, graph: CommGraph, gains: EstimatorGains):
        n, r, rt = model.n, model.r, model.r_tilde
        N = graph.node_count
        dim = (N + 1) * n
        M = np.zeros((dim, dim))
        M[:n, :n] = model.A
        V = np.zeros(((N + 1) * r, dim))
        if r:
            V[:r, :n] = model.H
        for k in range(1, N + 1):
            sk = k * n
            LkCk = gains.L[k - 1] @ model.C[k - 1]
            Ak = model.A - LkCk
            vrow = (model.H - gains.L_tilde[k - 1] @ model.C[k - 1]) if r else None
            for j in graph.neighbors(k):
                Ak = Ak - gains.K[(k, j)]
                M[sk:sk + n, j * n:(j + 1) * n] += gains.K[(k, j)]
                if r:
                    vrow = vrow - gains.K_tilde[(k, j)]
                    V[k * r:(k + 1) * r, j * n:(j + 1) * n] += gains.K_tilde[(k, j)]
            M[sk:sk + n, sk:sk + n] = Ak
            M[sk:sk + n, :n] = LkCk
            if r:
                V[k * r:(k + 1) * r, sk:sk + n] += vrow
                V[k * r:(k + 1) * r, :n] += gains.L_tilde[k - 1] @ model.C[k - 1]
        self.M = M
        self.V = V
        self.B_phi_stack = np.kron(np.eye(N + 1), model.B_phi)
        self.Ht_stack = np.kron(np.eye(N + 1), model.H_tilde)
        self.B_theta_stack = np.kron(np.eye(N + 1), model.B_theta)
        self.B_w_row = np.zeros((dim, model.l))
        self.B_w_row[:n, :] = model.B_w
        self.model = model
        self.N = N
        self.n = n

    def __call__(self, t, X, w_t):
        model = self.model
        dX = self.M @ X + self.B_w_row @ w_t
        g = model.g_u(t)
        dX += np.tile(g, self.N + 1)
        if model.r:
            dX += self.B_phi_stack @ model.phi(self.V @ X)
        if model.r_tilde:
            dX += self.B_theta_stack @ model.theta(self.Ht_stack @ X)
        return dX


def run(scenario: SimScenario, cfg: SynthesisConfig | None = None, cert=None) -> SimResult:
    """Fixed-step RK4 integration of the coupled system with metrics.

    ``cfg`` supplies the weights W_k and the level gamma for the cost
    ratios; ``cert`` supplies the structured Lyapunov matrix for the
    initial-condition cost I0 (without it the bound is flagged as not
    certified and I0 defaults to 0).
    """
    model, graph = scenario.model, scenario.graph
    n, N = model.n, graph.node_count
    rhs = _CoupledRhs(model, graph, scenario.gains)
    w_fn = make_disturbance(scenario.disturbance, model.l)

    n_steps = int(round(scenario.t_final / scenario.dt))
    dt = scenario.dt
    t_grid = np.arange(n_steps + 1) * dt
    X = np.concatenate([scenario.x0] + [v for v in scenario.xhat0])
    traj = np.empty((n_steps + 1, X.size))
    traj[0] = X
    w_grid = np.stack([w_fn(t) for t in t_grid])

    for i in range(n_steps):
        t = t_grid[i]
        k1 = rhs(t, X, w_fn(t))
        k2 = rhs(t + dt / 2, X + dt / 2 * k1, w_fn(t + dt / 2))
        k3 = rhs(t + dt / 2, X + dt / 2 * k2, w_fn(t + dt / 2))
        k4 = rhs(t + dt, X + dt * k3, w_fn(t + dt))
        X = X + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(X)) or float(np.max(np.abs(X))) > 1e12:
            raise DivergenceError(float(t_grid[i + 1]))
        traj[i + 1] = X

    x = traj[:, :n]
    xhat = np.stack([traj[:, (k + 1) * n:(k + 2) * n] for k in range(N)])
    err = x[None, :, :] - xhat           # (N, T, n)
    err_norms = np.linalg.norm(err, axis=2).T   # (T, N)

    cost_error = 0.0
    for k in range(1, N + 1):
        Wk = cfg.W_k(k, n, N) if cfg is not None else np.eye(n)
        quad = np.einsum("ti,ij,tj->t", err[k - 1], Wk, err[k - 1])
        cost_error += float(np.trapz(quad, t_grid))
    cost_w = float(np.trapz(np.sum(w_grid ** 2, axis=1), t_grid))

    gamma = cfg.gamma if cfg is not None else None
    i0 = 0.0
    certified = False
    if cert is not None:
        from distobs.analysis import assemble_global_P

        P = assemble_global_P(cert, graph)
        e0 = err[:, 0, :].reshape(-1)
        i0 = float(e0 @ P @ e0)
        certified = True

    ratio_n = ratio_1 = None
    if gamma is not None:
        den_n = N * gamma ** 2 * cost_w + i0
        den_1 = gamma ** 2 * cost_w + i0
        ratio_n = cost_error / den_n if den_n > 0 else float("inf")
        ratio_1 = cost_error / den_1 if den_1 > 0 else float("inf")

    return SimResult(
        t=t_grid, x=x, xhat=xhat, err_norms=err_norms,
        cost_error=cost_error, cost_disturbance=cost_w,
        i0=i0, gamma=gamma, ratio_bound_n=ratio_n, ratio_bound_1=ratio_1,
        bound_certified=certified,
    )


# ---------------------------------------------------------------------------
# exponential decay fit
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExpFitReport:
    rate: float
    r_squared: float
    converged: bool
    window: tuple


def exponential_fit(t: np.ndarray, err_series: np.ndarray, floor: float = 1e-12) -> ExpFitReport:
    """Least-squares line fit of log|e(t)|.

    The window drops everything from the first sample at or below the
    numerical floor onward, then keeps the last 80% of what remains
    (discarding the initial transient).  Returns the decay rate (negative
    for convergent series) and the fit quality r^2.
    """
    t = np.asarray(t, dtype=float)
    e = np.asarray(err_series, dtype=float)
    below = np.nonzero(e <= floor)[0]
    cut = int(below[0]) if below.size else e.size
    if cut < 5:
        raise DegenerateFitError("error series hits the numerical floor immediately")
    start = cut // 5
    tw, ew = t[start:cut], e[start:cut]
    if tw.size < 3:
        raise DegenerateFitError("too few samples above the floor for a fit")
    y = np.log(ew)
    rate, intercept = np.polyfit(tw, y, 1)
    resid = y - (rate * tw + intercept)
    ss_res = float(np.sum(resid ** 2))
    ss_tot = float(np.sum((y - np.mean(y)) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0
    return ExpFitReport(rate=float(rate), r_squared=r2, converged=rate < -1e-8, window=(start, cut))
