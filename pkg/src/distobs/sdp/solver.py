"""Primal interior-point barrier solver for small dense SDPs.

Algorithm: log-det barrier path following with damped Newton steps.
A phase-1 stage minimizes the uniform slack s over the constraint set
{G_c(x) + s I >= 0}; strict feasibility is declared as soon as s drops
below a margin, infeasibility only when the certified lower bound on the
optimal slack (central-path value minus duality gap) exceeds a positive
threshold.  Linear equality constraints are eliminated upfront by
parametrizing over the nullspace of the equality system (rank-revealing
SVD), so they hold to machine precision.

To keep the analytic center / central path well defined on unbounded
feasible sets, every scalar variable carries a box bound |x_i| <= R
(``var_bound``).  A verdict that leans on an active box bound is reported
as numerical-failure, never as infeasible/optimal.

Every feasible/optimal result is re-verified independently of the solver
path with a symmetric eigensolver before it is returned.
"""

from __future__ import annotations

import os
import sys
from dataclasses import dataclass, field, fields, replace

import numpy as np
import scipy.linalg as sla

from distobs.sdp.problem import SdpProblem

STATUS_FEASIBLE = "feasible"
STATUS_OPTIMAL = "optimal"
STATUS_INFEASIBLE = "infeasible"
STATUS_NUMERICAL_FAILURE = "numerical-failure"
STATUS_ITERATION_LIMIT = "iteration-limit"

ENV_PREFIX = "DISTOBS_"

# option-name -> environment suffix; tolerances only, by design
_ENV_KEYS = {
    "tol_feas": "TOL_FEAS",
    "tol_eq": "TOL_EQ",
    "max_newton": "MAX_NEWTON",
    "infeas_threshold": "INFEAS_THRESHOLD",
    "feas_margin": "FEAS_MARGIN",
    "phase1_gap": "PHASE1_GAP",
    "gap_abs": "GAP_ABS",
    "gap_rel": "GAP_REL",
    "var_bound": "VAR_BOUND",
}


@dataclass(frozen=True)
class SolverOptions:
    """Tolerances and iteration limits; all overridable from config."""

    tol_feas: float = 1e-7        # accepted max eigenvalue of any LMI at a solution
    tol_eq: float = 1e-9          # accepted max-abs equality residual
    max_newton: int = 200         # total Newton iteration budget per solve
    infeas_threshold: float = 1e-6  # phase-1 slack beyond which infeasibility is declared
    feas_margin: float = 1e-3     # early-exit slack for strict feasibility
    phase1_gap: float = 1e-8      # duality-gap target certifying the phase-1 optimum
    gap_abs: float = 1e-9         # objective duality-gap target (absolute)
    gap_rel: float = 1e-9         # objective duality-gap target (relative)
    t_init: float = 1.0
    t_scale: float = 20.0
    var_bound: float = 1e6        # box |x_i| <= var_bound on every scalar
    newton_tol: float = 1e-10     # Newton decrement^2 / 2 stopping threshold
    verbose: bool = False

    def with_env_overrides(self, environ=None) -> "SolverOptions":
        """Apply DISTOBS_* environment overrides (solver tolerances only)."""
        env = os.environ if environ is None else environ
        updates = {}
        for name, suffix in _ENV_KEYS.items():
            raw = env.get(ENV_PREFIX + suffix)
            if raw is None:
                continue
            if name == "max_newton":
                updates[name] = int(float(raw))
            else:
                updates[name] = float(raw)
        return replace(self, **updates) if updates else self


@dataclass
class SdpSolution:
    """Solver outcome.

    For status feasible/optimal, every LMI has max eigenvalue <= tol_feas
    and every equality has max-abs residual <= tol_eq (independently
    re-verified).
    """

    status: str
    assignments: dict = field(default_factory=dict)
    residuals: dict = field(default_factory=dict)
    objective_value: float | None = None
    info: dict = field(default_factory=dict)

    @property
    def feasible(self) -> bool:
        return self.status in (STATUS_FEASIBLE, STATUS_OPTIMAL)


class _IterationLimit(Exception):
    pass


class _Budget:
    def __init__(self, limit: int):
        self.limit = limit
        self.used = 0
        self.last_u = None

    def tick(self, u):
        self.last_u = u
        self.used += 1
        if self.used > self.limit:
            raise _IterationLimit()


class _Cone:
    __slots__ = ("name", "d", "G0", "idx", "mats")

    def __init__(self, name, d, G0, idx, mats):
        self.name = name
        self.d = d
        self.G0 = G0
        self.idx = idx
        self.mats = mats


class _Barrier:
    """Log-det barrier over cones G_c(u) >= 0 plus per-variable box bounds."""

    def __init__(self, cones, lo, hi):
        self.cones = cones
        self.lo = lo
        self.hi = hi
        self.nu = sum(c.d for c in cones) + 2 * lo.size

    def cone_values(self, u):
        out = []
        for c in self.cones:
            G = c.G0 if c.idx.size == 0 else c.G0 + np.tensordot(u[c.idx], c.mats, axes=1)
            out.append(G)
        return out

    def domain_value(self, u):
        """(barrier value, cholesky factors) or (None, None) outside the domain."""
        if np.any(u <= self.lo) or np.any(u >= self.hi):
            return None, None
        phi = -float(np.sum(np.log(self.hi - u)) + np.sum(np.log(u - self.lo)))
        chols = []
        for G in self.cone_values(u):
            try:
                L = np.linalg.cholesky(G)
            except np.linalg.LinAlgError:
                return None, None
            phi -= 2.0 * float(np.sum(np.log(np.diag(L))))
            chols.append(L)
        return phi, chols

    def grad_hess(self, u, chols):
        """Barrier gradient, Hessian, and per-cone inverses G_c^-1."""
        m = u.size
        g = 1.0 / (self.hi - u) - 1.0 / (u - self.lo)
        H = np.zeros((m, m))
        H[np.diag_indices(m)] = 1.0 / (self.hi - u) ** 2 + 1.0 / (u - self.lo) ** 2
        ginvs = []
        for c, L in zip(self.cones, chols):
            nloc, d = c.idx.size, c.d
            Ginv = sla.cho_solve((L, True), np.eye(d), check_finite=False)
            Ginv = 0.5 * (Ginv + Ginv.T)
            ginvs.append(Ginv)
            if nloc == 0:
                continue
            S = np.matmul(Ginv[None, :, :], c.mats)  # S_i = G^-1 M_i
            g[c.idx] -= np.einsum("iaa->i", S)
            W1 = S.reshape(nloc, d * d)
            W2 = S.transpose(0, 2, 1).reshape(nloc, d * d)
            Hloc = W1 @ W2.T
            H[np.ix_(c.idx, c.idx)] += 0.5 * (Hloc + Hloc.T)
        return g, H, ginvs

    def max_step(self, u, du, ginvs):
        """Fraction-to-boundary bound on the step length along du."""
        alpha = np.inf
        up = du > 0
        dn = du < 0
        if np.any(up):
            alpha = min(alpha, float(np.min((self.hi[up] - u[up]) / du[up])))
        if np.any(dn):
            alpha = min(alpha, float(np.min((self.lo[dn] - u[dn]) / du[dn])))
        for c, Ginv in zip(self.cones, ginvs):
            if c.idx.size == 0:
                continue
            dG = np.tensordot(du[c.idx], c.mats, axes=1)
            lam_min = float(np.min(np.linalg.eigvals(Ginv @ dG).real))
            if lam_min < 0:
                alpha = min(alpha, -1.0 / lam_min)
        return alpha


def _solve_newton_system(H, rhs):
    """Solve H d = rhs with Jacobi scaling; eigenvalue-clamped fallback when
    rounding makes the projected Hessian indefinite."""
    m = H.shape[0]
    if m == 0:
        return rhs.copy()
    diag = np.diag(H)
    top = float(np.max(np.abs(diag))) or 1.0
    d = np.sqrt(np.maximum(diag, top * 1e-16))
    dinv = 1.0 / d
    Hs = H * dinv[:, None] * dinv[None, :]
    try:
        cf = sla.cho_factor(Hs, lower=True, check_finite=False)
        return sla.cho_solve(cf, rhs * dinv, check_finite=False) * dinv
    except np.linalg.LinAlgError:
        pass
    w, V = np.linalg.eigh(0.5 * (Hs + Hs.T))
    w = np.maximum(w, max(float(w[-1]), 1.0) * 1e-14)
    return (V @ ((V.T @ (rhs * dinv)) / w)) * dinv


def _center(barrier, Z, c, t, u, phi, chols, budget, opts, step_cb=None):
    """Damped Newton minimization of t*(c.u) + barrier(u) over u = u + Z dv.

    ``step_cb`` is evaluated after every accepted step; returning True
    aborts the centering early (used for strict-feasibility early exit).
    Stalls (no meaningful decrease twice in a row) end the centering: the
    point is then as centered as floating point allows.
    """
    stalls = 0
    while True:
        budget.tick(u)
        g_u, H_u, ginvs = barrier.grad_hess(u, chols)
        if c is not None:
            g_u = g_u + t * c
        if Z is None:
            g_v, H_v = g_u, H_u
        else:
            g_v = Z.T @ g_u
            H_v = Z.T @ H_u @ Z
        dv = _solve_newton_system(H_v, -g_v)
        lam2 = -float(g_v @ dv)  # squared Newton decrement g' H^-1 g
        if not np.isfinite(lam2) or lam2 <= 0.0:
            return u, phi, chols  # flat or numerically exhausted direction
        if 0.5 * lam2 <= opts.newton_tol:
            return u, phi, chols
        du = dv if Z is None else Z @ dv
        f0 = phi + (t * float(c @ u) if c is not None else 0.0)
        alpha = min(1.0, 0.99 * barrier.max_step(u, du, ginvs))
        accepted = False
        while alpha > 1e-16:
            u_try = u + alpha * du
            phi_try, chols_try = barrier.domain_value(u_try)
            if phi_try is not None:
                f_try = phi_try + (t * float(c @ u_try) if c is not None else 0.0)
                if f_try <= f0 - 0.25 * alpha * lam2:
                    accepted = True
                    break
            alpha *= 0.5
        if not accepted:
            return u, phi, chols  # line search stagnated; best centered point
        if f0 - f_try <= 1e-11 * max(1.0, abs(f0)) or alpha < 1e-9:
            stalls += 1
            if stalls >= 2:
                return u_try, phi_try, chols_try
        else:
            stalls = 0
        u, phi, chols = u_try, phi_try, chols_try
        if step_cb is not None and step_cb(u):
            return u, phi, chols


def _follow_path(barrier, Z, c, u, t0, opts, budget, gap_done, early_stop=None, stage_stop=None, tag=""):
    """Path following: center, test early exits and the gap target, raise t."""
    t = t0
    phi, chols = barrier.domain_value(u)
    if phi is None:
        raise AssertionError("path following started outside the barrier domain")
    while True:
        before = budget.used
        u, phi, chols = _center(barrier, Z, c, t, u, phi, chols, budget, opts, step_cb=early_stop)
        if opts.verbose:
            obj = float(c @ u) if c is not None else 0.0
            print(
                f"[{tag}] t={t:.3e} newton={budget.used - before} obj={obj:.6e} gap={barrier.nu / t:.2e}",
                file=sys.stderr,
            )
        if early_stop is not None and early_stop(u):
            return u, t, "early"
        if stage_stop is not None and stage_stop(u, t):
            return u, t, "stage"
        if gap_done(u, t):
            return u, t, "converged"
        t *= opts.t_scale


def _eigmax(M):
    return float(np.max(np.linalg.eigvalsh(0.5 * (M + M.T))))


def solve(problem: SdpProblem, opts: SolverOptions | None = None) -> SdpSolution:
    """Solve the assembled problem; deterministic for identical inputs and opts."""
    opts = opts or SolverOptions()
    m = problem.num_scalars
    info: dict = {"newton_iters": 0, "margins": {l.name: l.margin for l in problem.lmis}}
    c_obj, c_off = problem.objective_vector()

    # ---- equality elimination: x = x0 + Z z, Z orthonormal nullspace basis
    eq_rows = []
    eq_rhs = []
    for eq in problem.eqs:
        r_, c_ = eq.expr.shape
        rowmat = np.zeros((r_ * c_, m))
        for i, C in eq.expr.coeffs.items():
            rowmat[:, i] = C.reshape(-1)
        eq_rows.append(rowmat)
        eq_rhs.append(-eq.expr.const.reshape(-1))
    if eq_rows:
        A_eq = np.vstack(eq_rows)
        b_eq = np.concatenate(eq_rhs)
        U, sv, Vt = np.linalg.svd(A_eq, full_matrices=True)
        tol_rank = max(A_eq.shape) * np.finfo(float).eps * (sv[0] if sv.size else 0.0)
        rank = int(np.sum(sv > tol_rank))
        x0 = Vt[:rank].T @ ((U[:, :rank].T @ b_eq) / sv[:rank]) if rank else np.zeros(m)
        Z = Vt[rank:].T.copy() if rank < m else None
        if rank == m:
            Z = np.zeros((m, 0))
        resid = float(np.max(np.abs(A_eq @ x0 - b_eq))) if b_eq.size else 0.0
        scale_eq = max(1.0, float(np.max(np.abs(b_eq))) if b_eq.size else 0.0)
        if resid > max(opts.tol_eq, 1e-10 * scale_eq):
            return SdpSolution(
                status=STATUS_INFEASIBLE,
                residuals={"eq_consistency": resid},
                info={**info, "message": "equality system is inconsistent"},
            )
    else:
        A_eq = None
        b_eq = None
        x0 = np.zeros(m)
        Z = None  # identity

    # ---- cones with strictness margins folded in
    cones = []
    for lmi in problem.lmis:
        d = lmi.expr.shape[0]
        idx = np.array(sorted(lmi.expr.coeffs), dtype=int)
        mats = (
            np.stack([-lmi.expr.coeffs[i] for i in idx])
            if idx.size
            else np.zeros((0, d, d))
        )
        G0 = -(lmi.expr.const + lmi.margin * np.eye(d))
        cones.append(_Cone(lmi.name, d, G0, idx, mats))

    R = opts.var_bound
    if m and float(np.max(np.abs(x0))) >= R:
        return SdpSolution(
            status=STATUS_NUMERICAL_FAILURE,
            info={**info, "message": "equality solution exceeds the variable bound"},
        )

    def finish(x, status, extra=None):
        """Independent re-verification, residual report, final packaging."""
        assignments = problem.unpack(x)
        lmi_res = {}
        ok = True
        for lmi in problem.lmis:
            val = _eigmax(lmi.expr.evaluate(x))
            lmi_res[lmi.name] = val
            if val > opts.tol_feas:
                ok = False
        eq_res = float(np.max(np.abs(A_eq @ x - b_eq))) if (A_eq is not None and b_eq.size) else 0.0
        if eq_res > opts.tol_eq:
            ok = False
        residuals = {"lmi_max_eig": lmi_res, "eq_max_abs": eq_res}
        obj_val = float(c_obj @ x + c_off) if c_obj is not None else None
        if problem.objective is None and problem.num_scalars >= 0 and c_obj is None:
            obj_val = None
        if status in (STATUS_FEASIBLE, STATUS_OPTIMAL) and not ok:
            status = STATUS_NUMERICAL_FAILURE
            info["message"] = "solution failed independent residual verification"
        if extra:
            info.update(extra)
        info["newton_iters"] = budget.used
        return SdpSolution(status, assignments, residuals, obj_val, info)

    budget = _Budget(opts.max_newton)

    # ---- trivial cases
    if m == 0:
        worst = max((_eigmax(-c.G0) for c in cones), default=-np.inf)
        status = STATUS_FEASIBLE if worst <= 0 else STATUS_INFEASIBLE
        return finish(x0, status)

    # ---- phase 1: minimize uniform slack s over G_c(x) + s I >= 0
    def max_violation(x):
        worst = -np.inf
        for c in cones:
            G = c.G0 if c.idx.size == 0 else c.G0 + np.tensordot(x[c.idx], c.mats, axes=1)
            worst = max(worst, -float(np.min(np.linalg.eigvalsh(G))))
        return worst

    x = x0.copy()
    viol0 = max_violation(x) if cones else -np.inf
    info["phase1_slack"] = None

    try:
        if cones and viol0 > -opts.feas_margin:
            delta0 = 0.1 * max(1.0, abs(viol0))
            s0 = viol0 + delta0
            lo = np.concatenate([np.full(m, -R), [-R]])
            hi = np.concatenate([np.full(m, R), [max(R, s0 + 10 * delta0)]])
            cones_aug = [
                _Cone(c.name, c.d, c.G0, np.append(c.idx, m),
                      np.concatenate([c.mats, np.eye(c.d)[None]], axis=0))
                for c in cones
            ]
            bar1 = _Barrier(cones_aug, lo, hi)
            Z1 = None
            if Z is not None:
                Z1 = np.zeros((m + 1, Z.shape[1] + 1))
                Z1[:m, : Z.shape[1]] = Z
                Z1[m, Z.shape[1]] = 1.0
            c1 = np.zeros(m + 1)
            c1[m] = 1.0
            u = np.concatenate([x, [s0]])

            # conservative duality bound for approximately centered points
            def slack_lower_bound(u_, t_):
                return float(u_[m]) - 2.0 * bar1.nu / t_

            u, t_end, how = _follow_path(
                bar1, Z1, c1, u, opts.t_init, opts, budget,
                gap_done=lambda u_, t_: bar1.nu / t_ <= opts.phase1_gap,
                early_stop=lambda u_: u_[m] <= -opts.feas_margin,
                stage_stop=lambda u_, t_: slack_lower_bound(u_, t_) > opts.infeas_threshold,
            )
            s_val = float(u[m])
            info["phase1_slack"] = s_val
            x = u[:m].copy()
            if how != "early" and s_val > -opts.infeas_threshold:
                s_lb = slack_lower_bound(u, t_end)
                info["phase1_lower_bound"] = s_lb
                if s_lb > opts.infeas_threshold:
                    if float(np.max(np.abs(x))) >= 0.999 * R:
                        return finish(
                            x, STATUS_NUMERICAL_FAILURE,
                            {"message": "infeasibility verdict leans on an active variable bound"},
                        )
                    return finish(x, STATUS_INFEASIBLE, {"message": "phase-1 witness: minimal slack bounded away from zero"})
                return finish(
                    x, STATUS_NUMERICAL_FAILURE,
                    {"message": f"marginal phase-1 slack {s_val:.3e}; problem is numerically on the feasibility boundary"},
                )
        else:
            info["phase1_slack"] = viol0 if cones else None

        # ---- phase 2: objective path following, or return the feasible point
        if c_obj is not None and (np.any(c_obj != 0.0) or True):
            bar2 = _Barrier(cones, np.full(m, -R), np.full(m, R))

            def gap_done(u_, t_):
                obj = abs(float(c_obj @ u_ + c_off))
                return bar2.nu / t_ <= max(opts.gap_abs, opts.gap_rel * max(1.0, obj))

            obj_floor = -1e12 * max(1.0, abs(float(c_obj @ x + c_off)))
            x, t_end, how = _follow_path(
                bar2, Z, c_obj, x, opts.t_init, opts, budget,
                gap_done=gap_done,
                early_stop=lambda u_: float(c_obj @ u_ + c_off) < obj_floor,
            )
            if how == "early" or float(np.max(np.abs(x))) >= 0.999 * R:
                return finish(
                    x, STATUS_NUMERICAL_FAILURE,
                    {"message": "objective appears unbounded below (or rests on the variable bound)"},
                )
            return finish(x, STATUS_OPTIMAL, {"final_gap": bar2.nu / t_end})
        return finish(x, STATUS_FEASIBLE)
    except _IterationLimit:
        x_best = budget.last_u[:m] if budget.last_u is not None else x0
        return finish(np.asarray(x_best), STATUS_ITERATION_LIMIT, {"message": "Newton iteration budget exhausted"})
