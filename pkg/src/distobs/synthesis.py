"""Assembly of the coupled per-node LMI systems and the two-step gain synthesis.

Three entry points build :class:`~distobs.sdp.SdpProblem` instances:

* ``assemble_intuitive``  - block-diagonal Lyapunov design with a single
  consensus gain per node and neighbor-penalty blocks.
* ``assemble_dkyp``       - distributed strict-positive-real feasibility for
  a given interconnected system (blocks A_k, A_kj, B_k, E_k, E_kj): per-node
  LMIs, coupling equalities P_k B_k = E_k', P_kj' B_k = E_kj', and
  block-diagonal-dominance LMIs.
* ``assemble_theorem3``   - the performance synthesis system, either in its
  step-1 linearized form (Lyapunov blocks + auxiliary gain variables, with
  the off-diagonal block norms minimized through spectral-norm epigraphs) or
  in its step-2 form with the Lyapunov blocks frozen and the estimator gains
  as the only variables.

``two_step_synthesis`` chains step 1 and step 2 and recovers the estimator
gains together with a Lyapunov certificate.

Conventions: nodes are 1-based; the off-diagonal Lyapunov block of an edge
{k, j} is stored once for k < j as ``Poff_k_j`` and transposed for the
opposite direction; neighbor enumeration is ascending, which fixes every
block layout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from distobs.exceptions import AssemblyError, ConditioningError, SynthesisError
from distobs.graph import CommGraph
from distobs.model import EstimatorGains, PlantModel, SynthesisConfig
from distobs.sdp import (
    STATUS_INFEASIBLE,
    SdpProblem,
    SdpSolution,
    block,
    solve,
)
from distobs.sdp.problem import MatExpr

MODE_STEP1 = "step1-linearized"
MODE_STEP2 = "step2-fixed-P"


# ---------------------------------------------------------------------------
# Lyapunov certificate
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LyapunovCertificate:
    """Structured Lyapunov matrix: diagonal blocks P_k, per-edge blocks P_kj.

    ``P_off`` is keyed by (k, j) with k < j and holds the block at row k,
    column j; the (j, k) block is its transpose.  Off-diagonal blocks exist
    only for graph edges.
    """

    P: tuple
    P_off: dict
    epsilon: float
    pi: tuple

    def __post_init__(self):
        object.__setattr__(self, "P", tuple(np.asarray(M, dtype=float) for M in self.P))
        object.__setattr__(
            self, "P_off", {(int(k), int(j)): np.asarray(M, dtype=float) for (k, j), M in self.P_off.items()}
        )
        object.__setattr__(self, "pi", tuple(float(p) for p in self.pi))
        for (k, j) in self.P_off:
            if not k < j:
                raise ValueError("P_off keys must be (k, j) with k < j")
        for M in self.P:
            if M.shape[0] != M.shape[1] or not np.allclose(M, M.T, atol=1e-10):
                raise ValueError("each P_k must be square symmetric")

    def block(self, k: int, j: int) -> np.ndarray:
        """Off-diagonal block at row k, column j (edge required)."""
        if k < j:
            return self.P_off[(k, j)]
        return self.P_off[(j, k)].T

    def p_min_eig(self, k: int) -> float:
        return float(np.min(np.linalg.eigvalsh(self.P[k - 1])))


# ---------------------------------------------------------------------------
# shared helpers
# ---------------------------------------------------------------------------

def _sym2(X):
    """X + X', exactly symmetric for stored coefficient arrays."""
    return X + X.T


def _declare_P_vars(prob: SdpProblem, graph: CommGraph, n: int):
    """Diagonal blocks P_k and one off-diagonal block per unordered edge."""
    P = {k: prob.sym_var(f"P_{k}", n) for k in range(1, graph.node_count + 1)}
    Poff = {(k, j): prob.mat_var(f"Poff_{k}_{j}", n, n) for (k, j) in graph.edge_list()}

    def off(k, j):
        if k < j:
            return Poff[(k, j)]
        return Poff[(j, k)].T

    return P, Poff, off


def _dominance_lmi(prob, graph, P, off, k, name):
    """Block-diagonal-dominance LMI of node k: weighted [P_k, P_kj; ., P_j] > 0."""
    nbrs = graph.neighbors(k)
    p_k = len(nbrs)
    top = [(1.0 / (1 + p_k)) * P[k]] + [0.5 * off(k, j) for j in nbrs]
    rows = [top]
    for i, j in enumerate(nbrs):
        row = [0.5 * off(k, j).T]
        for i2, j2 in enumerate(nbrs):
            row.append((1.0 / (1 + graph.degree(j))) * P[j] if i2 == i else None)
        rows.append(row)
    prob.add_lmi(-block(rows), margin="auto", name=name)


def dominance_blocks(cert: LyapunovCertificate, graph: CommGraph) -> list[np.ndarray]:
    """Numeric dominance-LMI blocks for a concrete certificate (diagnostics)."""
    out = []
    for k in range(1, graph.node_count + 1):
        nbrs = graph.neighbors(k)
        p_k = len(nbrs)
        n = cert.P[k - 1].shape[0]
        dim = (1 + p_k) * n
        M = np.zeros((dim, dim))
        M[:n, :n] = cert.P[k - 1] / (1 + p_k)
        for i, j in enumerate(nbrs):
            r = (1 + i) * n
            M[:n, r:r + n] = 0.5 * cert.block(k, j)
            M[r:r + n, :n] = 0.5 * cert.block(k, j).T
            M[r:r + n, r:r + n] = cert.P[j - 1] / (1 + graph.degree(j))
        out.append(M)
    return out


# ---------------------------------------------------------------------------
# intuitive path
# ---------------------------------------------------------------------------

def assemble_intuitive(model: PlantModel, graph: CommGraph, cfg: SynthesisConfig) -> SdpProblem:
    """Block-diagonal Lyapunov design conditions, one coupled problem.

    Per node k the LMI couples P_k, the injection variable G_k, the single
    consensus variable F_k, and the neighbors' P_j blocks; the equality
    -P_k B_phi = (H - Lt_k C_k)' ties the loop-transformation gain Lt_k to
    P_k.
    """
    _check_dims(model, graph)
    n, r, rt, l = model.n, model.r, model.r_tilde, model.l
    N = graph.node_count
    prob = SdpProblem("intuitive")

    P = {k: prob.sym_var(f"P_{k}", n) for k in range(1, N + 1)}
    G = {k: prob.mat_var(f"G_{k}", n, model.q(k)) for k in range(1, N + 1)}
    F = {k: prob.mat_var(f"F_{k}", n, n) for k in range(1, N + 1)}
    Lt = {k: prob.mat_var(f"Lt_{k}", r, model.q(k)) for k in range(1, N + 1)}

    for k in range(1, N + 1):
        nbrs = graph.neighbors(k)
        p_k = len(nbrs)
        pi_k = cfg.pi_k(k, N)
        Wbar = cfg.W_bar_k(k, model)
        Ck = model.C[k - 1]

        PA = P[k] @ model.A
        GC = G[k] @ Ck
        Q = _sym2(PA) - _sym2(GC) - float(p_k) * _sym2(F[k]) + (cfg.alpha + p_k * pi_k) * P[k]

        head = [Q + Wbar]
        if rt:
            head.append(P[k] @ model.B_theta)
        if l:
            head.append(P[k] @ model.B_w)
        head.extend(F[k] for _ in nbrs)

        rows = [head]
        at = 1
        if rt:
            row = [None] * len(head)
            row[0] = (P[k] @ model.B_theta).T
            row[at] = -(model.tau ** 2) * np.eye(rt)
            rows.append(row)
            at += 1
        if l:
            row = [None] * len(head)
            row[0] = (P[k] @ model.B_w).T
            row[at] = -(cfg.gamma ** 2) * np.eye(l)
            rows.append(row)
            at += 1
        for i, j in enumerate(nbrs):
            row = [None] * len(head)
            row[0] = F[k].T
            row[at + i] = -cfg.pi_k(j, N) * P[j]
            rows.append(row)
        prob.add_lmi(block(rows), margin="auto", name=f"node{k}")
        prob.add_lmi(-P[k], margin="auto", name=f"pd{k}")

        if r:
            # -P_k B_phi = (H - Lt_k C_k)'
            prob.add_eq(P[k] @ model.B_phi + model.H.T - Ck.T @ Lt[k].T, name=f"loop{k}")
    return prob


def recover_intuitive_gains(model: PlantModel, graph: CommGraph, solution: SdpSolution) -> EstimatorGains:
    """Gains L_k = P_k^-1 G_k, K_kj = P_k^-1 F_k (shared per node), Kt_kj = 0."""
    if not solution.feasible:
        raise SynthesisError("intuitive-infeasible", "cannot recover gains from an infeasible solution")
    a = solution.assignments
    N = graph.node_count
    L, Lt, K, Kt = [], [], {}, {}
    for k in range(1, N + 1):
        Pk = a[f"P_{k}"]
        evals = np.linalg.eigvalsh(Pk)
        if evals.min() < 1e-10 * max(evals.max(), 1.0):
            raise ConditioningError(f"P_{k} is numerically singular (min eig {evals.min():.3e})")
        L.append(np.linalg.solve(Pk, a[f"G_{k}"]))
        Kk = np.linalg.solve(Pk, a[f"F_{k}"])
        Lt.append(a[f"Lt_{k}"])
        for j in graph.neighbors(k):
            K[(k, j)] = Kk
            Kt[(k, j)] = np.zeros((model.r, model.n))
    return EstimatorGains(L=tuple(L), L_tilde=tuple(Lt), K=K, K_tilde=Kt)


# ---------------------------------------------------------------------------
# distributed KYP feasibility for a given interconnected system
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InterconnectedBlocks:
    """System blocks of an interconnection: x_k' = A_k x_k + sum A_kj x_j + B_k u_k,
    y_k = E_k x_k + sum E_kj x_j.  ``A_off``/``E_off`` are keyed by directed
    pairs (k, j) with j a neighbor of k."""

    A: tuple
    A_off: dict
    B: tuple
    E: tuple
    E_off: dict

    def __post_init__(self):
        object.__setattr__(self, "A", tuple(np.asarray(M, dtype=float) for M in self.A))
        object.__setattr__(self, "B", tuple(np.asarray(M, dtype=float) for M in self.B))
        object.__setattr__(self, "E", tuple(np.asarray(M, dtype=float) for M in self.E))
        object.__setattr__(self, "A_off", {t: np.asarray(M, dtype=float) for t, M in self.A_off.items()})
        object.__setattr__(self, "E_off", {t: np.asarray(M, dtype=float) for t, M in self.E_off.items()})


def assemble_dkyp(
    blocks: InterconnectedBlocks,
    graph: CommGraph,
    cfg: SynthesisConfig,
    W_bar: list | None = None,
) -> SdpProblem:
    """Per-node strict-positive-real LMIs with shared Lyapunov blocks.

    Builds, for every node, Q_k + S_k <= 0 with Q_k from the interconnection
    blocks, S_k = blkdiag(p_k pi_k P_k + eps I + Wbar_k, -pi_j P_j, ...),
    the equalities P_k B_k = E_k' and P_kj' B_k = E_kj', and the dominance
    LMI.  ``W_bar`` defaults to zero weights.
    """
    N = graph.node_count
    n = blocks.A[0].shape[0]
    if len(blocks.A) != N:
        raise AssemblyError("one A_k block per node is required")
    prob = SdpProblem("dkyp")
    P, Poff, off = _declare_P_vars(prob, graph, n)

    for k in range(1, N + 1):
        nbrs = graph.neighbors(k)
        p_k = len(nbrs)
        pi_k = cfg.pi_k(k, N)
        Ak = blocks.A[k - 1]
        Wk = np.zeros((n, n)) if W_bar is None else np.asarray(W_bar[k - 1], dtype=float)

        # Q_k blocks
        Qkk = _sym2(P[k] @ Ak)
        Skk = p_k * pi_k * P[k] + cfg.epsilon * np.eye(n) + Wk
        rows = [[Qkk + Skk] + [None] * p_k]
        for i, j in enumerate(nbrs):
            rows[0][1 + i] = P[k] @ blocks.A_off[(k, j)] + Ak.T @ off(k, j)
        for i, j in enumerate(nbrs):
            row = [rows[0][1 + i].T]
            for i2, j2 in enumerate(nbrs):
                if i2 < i:
                    row.append(None)
                elif i2 == i:
                    Qjj = _sym2(off(k, j).T @ blocks.A_off[(k, j)])
                    row.append(Qjj - cfg.pi_k(j, N) * P[j])
                else:
                    row.append(off(k, j).T @ blocks.A_off[(k, j2)] + blocks.A_off[(k, j)].T @ off(k, j2))
            rows.append(row)
        # mirror the strict upper triangle of the neighbor-neighbor part
        for i in range(1, 1 + p_k):
            for i2 in range(1, i):
                rows[i][i2] = rows[i2][i].T
        prob.add_lmi(block(rows), margin=0.0, name=f"dkyp{k}")

        Bk = blocks.B[k - 1]
        if Bk.size:
            prob.add_eq(P[k] @ Bk - blocks.E[k - 1].T, name=f"spr{k}")
            for j in nbrs:
                prob.add_eq(off(k, j).T @ Bk - blocks.E_off[(k, j)].T, name=f"spr{k}_{j}")

        _dominance_lmi(prob, graph, P, off, k, name=f"dom{k}")
    return prob


def certificate_from_solution(graph: CommGraph, cfg: SynthesisConfig, solution: SdpSolution) -> LyapunovCertificate:
    """Extract the Lyapunov blocks of a feasible solve into a certificate."""
    a = solution.assignments
    N = graph.node_count
    P = tuple(a[f"P_{k}"] for k in range(1, N + 1))
    Poff = {(k, j): a[f"Poff_{k}_{j}"] for (k, j) in graph.edge_list()}
    pi = tuple(cfg.pi_k(k, N) for k in range(1, N + 1))
    return LyapunovCertificate(P=P, P_off=Poff, epsilon=cfg.epsilon, pi=pi)


# ---------------------------------------------------------------------------
# performance synthesis (theorem-3 system)
# ---------------------------------------------------------------------------

def _check_dims(model: PlantModel, graph: CommGraph):
    if model.node_count != graph.node_count:
        raise AssemblyError(
            f"model has {model.node_count} measurement maps but graph has {graph.node_count} nodes"
        )


def _loop_row_expr(prob_off, P_k, model, k, nbrs):
    """H + B_phi' P_k + sum_j B_phi' P_kj: must lie in the row space of C_k."""
    Bt = model.B_phi.T
    expr = (Bt @ P_k) + model.H
    for j in nbrs:
        expr = expr + Bt @ prob_off(k, j)
    return expr


def assemble_theorem3(
    model: PlantModel,
    graph: CommGraph,
    cfg: SynthesisConfig,
    mode: str = MODE_STEP1,
    fixed: LyapunovCertificate | None = None,
) -> SdpProblem:
    """Performance-synthesis matrix inequalities.

    mode='step1-linearized': variables {P_k, P_kj, G_k, F_kj, t_kj}; the
    node blocks use the linearized Q elements, the off-diagonal Lyapunov
    norms are minimized through spectral-norm epigraphs, dominance LMIs are
    added, and the coupling equalities reduce to row-space conditions on
    the P blocks (the loop gains Lt_k, Kt_kj are eliminated symbolically).

    mode='step2-fixed-P': the P blocks are frozen to ``fixed`` and the
    injection/consensus gains {L_k, K_kj} are the variables; the same node
    blocks are then affine in the gains.  With cfg.minimize_gamma the
    disturbance level gamma^2 becomes a scalar variable to minimize.
    """
    _check_dims(model, graph)
    if mode not in (MODE_STEP1, MODE_STEP2):
        raise AssemblyError(f"unknown mode '{mode}'")
    step2 = mode == MODE_STEP2
    if step2 and fixed is None:
        raise AssemblyError("step2-fixed-P requires a fixed Lyapunov certificate")

    n, r, rt, l = model.n, model.r, model.r_tilde, model.l
    N = graph.node_count
    A = model.A
    prob = SdpProblem(mode)

    if step2:
        dom = dominance_blocks(fixed, graph)
        worst = min(float(np.min(np.linalg.eigvalsh(M))) for M in dom)
        if worst <= 0:
            raise AssemblyError(
                f"frozen Lyapunov blocks violate the dominance LMI (min eig {worst:.3e})"
            )

        def Pk_mat(k):
            return fixed.P[k - 1]

        def off_mat(k, j):
            return fixed.block(k, j)

        L = {k: prob.mat_var(f"L_{k}", n, model.q(k)) for k in range(1, N + 1)}
        K = {
            (k, j): prob.mat_var(f"K_{k}_{j}", n, n)
            for k in range(1, N + 1)
            for j in graph.neighbors(k)
        }
        g2 = prob.scalar_var("gamma2") if cfg.minimize_gamma else None
        if g2 is not None:
            prob.add_lmi(-g2, margin=1e-9, name="gamma2_pos")
            prob.minimize(g2)
    else:
        P, Poff, off = _declare_P_vars(prob, graph, n)
        G = {k: prob.mat_var(f"G_{k}", n, model.q(k)) for k in range(1, N + 1)}
        F = {
            (k, j): prob.mat_var(f"F_{k}_{j}", n, n)
            for k in range(1, N + 1)
            for j in graph.neighbors(k)
        }
        # one epigraph scalar per unordered edge; both directed norms coincide
        T = {e: prob.scalar_var(f"t_{e[0]}_{e[1]}") for e in graph.edge_list()}
        obj = None
        for e in graph.edge_list():
            prob.add_spectral_norm_epigraph(Poff[e], T[e], name=f"norm_{e[0]}_{e[1]}")
            term = 2.0 * T[e]
            obj = term if obj is None else obj + term
        if obj is None:
            obj = MatExpr(prob, (1, 1))  # empty objective sums to 0
        prob.minimize(obj)

    gamma2 = cfg.gamma ** 2

    for k in range(1, N + 1):
        nbrs = graph.neighbors(k)
        p_k = len(nbrs)
        pi_k = cfg.pi_k(k, N)
        lam_k = cfg.lam_k(k, N)
        Wbar = cfg.W_bar_k(k, model)
        Ck = model.C[k - 1]

        if step2:
            # exact Q elements, affine in the gains at frozen P
            Pk = Pk_mat(k)
            sumK = None
            for j in nbrs:
                sumK = K[(k, j)] if sumK is None else sumK + K[(k, j)]
            Ak_expr = (-1.0) * (L[k] @ Ck)  # A - L_k C_k - sum K_kj, variable part
            if sumK is not None:
                Ak_expr = Ak_expr - sumK
            Qkk = _sym2(Pk @ A) + _sym2(Pk @ Ak_expr)
            Qkj = {}
            for j in nbrs:
                Pkj = off_mat(k, j)
                Qkj[j] = Pk @ K[(k, j)] + A.T @ Pkj + Ak_expr.T @ Pkj
            def Qjj(j1, j2):
                P1 = off_mat(k, j1)
                P2 = off_mat(k, j2)
                return P1.T @ K[(k, j2)] + K[(k, j1)].T @ P2
        else:
            Pk = P[k]
            sumF = None
            for j in nbrs:
                sumF = F[(k, j)] if sumF is None else sumF + F[(k, j)]
            core = Pk @ A - G[k] @ Ck
            if sumF is not None:
                core = core - sumF
            Qkk = _sym2(core)
            Qkj = {}
            for j in nbrs:
                Pkj = off(k, j)
                Qkj[j] = F[(k, j)] + A.T @ Pkj - lam_k * ((Ck.T @ Ck) @ Pkj) - (lam_k * p_k) * Pkj
            def Qjj(j1, j2):
                return lam_k * off(k, j1).T + lam_k * off(k, j2)

        Skk = pi_k * p_k * Pk + cfg.epsilon * np.eye(n) + Wbar

        def off_num_or_expr(j):
            return off_mat(k, j) if step2 else off(k, j)

        rows = []
        head = [Qkk + Skk] + [Qkj[j] for j in nbrs]
        if rt:
            head.append(Pk @ model.B_theta)
        if l:
            head.append(Pk @ model.B_w)
        rows.append(head)
        for i, j in enumerate(nbrs):
            row = [head[1 + i].T]
            for i2, j2 in enumerate(nbrs):
                if i2 < i:
                    row.append(None)
                elif i2 == i:
                    Qd = Qjj(j, j)
                    row.append(Qd - cfg.pi_k(j, N) * (fixed.P[j - 1] if step2 else P[j]))
                else:
                    row.append(Qjj(j, j2))
            if rt:
                row.append(off_num_or_expr(j).T @ model.B_theta)
            if l:
                row.append(off_num_or_expr(j).T @ model.B_w)
            rows.append(row)
        at = 1 + p_k
        if rt:
            row = [rows[0][at].T] + [rows[1 + i][at].T for i in range(p_k)]
            row += [-(model.tau ** 2) * np.eye(rt)]
            if l:
                row.append(np.zeros((rt, l)))
            rows.append(row)
            at += 1
        if l:
            row = [rows[0][at].T] + [rows[1 + i][at].T for i in range(p_k)]
            if rt:
                row.append(np.zeros((l, rt)))
            if step2 and cfg.minimize_gamma:
                row.append(-g2.times_identity(l))
            else:
                row.append(-gamma2 * np.eye(l))
            rows.append(row)
        # mirror strict upper triangle of the neighbor block
        for i in range(1, 1 + p_k):
            for i2 in range(1, i):
                rows[i][i2] = rows[i2][i].T
        prob.add_lmi(block(rows), margin="auto", name=f"perf{k}")

        if not step2:
            _dominance_lmi(prob, graph, P, off, k, name=f"dom{k}")
            if r:
                # loop-gain solvability: (H + B_phi' P_k + sum B_phi' P_kj)(I - C+ C) = 0
                proj = np.eye(n) - np.linalg.pinv(Ck) @ Ck
                if np.max(np.abs(proj)) > 1e-12:
                    prob.add_eq(_loop_row_expr(off, Pk, model, k, nbrs) @ proj, name=f"loop{k}")
    return prob


def recover_loop_gains(model: PlantModel, graph: CommGraph, cert: LyapunovCertificate):
    """Loop-transformation gains determined by the Lyapunov blocks.

    Kt_kj = -B_phi' P_kj and Lt_k solving Lt_k C_k = H + B_phi' P_k +
    sum_j B_phi' P_kj (via pseudoinverse; the row-space condition imposed
    during step 1 makes the system solvable).
    """
    N = graph.node_count
    Bt = model.B_phi.T
    Lt, Kt = [], {}
    for k in range(1, N + 1):
        nbrs = graph.neighbors(k)
        rhs = model.H + Bt @ cert.P[k - 1]
        for j in nbrs:
            Pkj = cert.block(k, j)
            Kt[(k, j)] = -Bt @ Pkj
            rhs = rhs + Bt @ Pkj
        Ck = model.C[k - 1]
        Ltk = rhs @ np.linalg.pinv(Ck)
        resid = float(np.max(np.abs(Ltk @ Ck - rhs))) if rhs.size else 0.0
        if resid > 1e-6 * max(1.0, float(np.max(np.abs(rhs))) if rhs.size else 0.0):
            raise SynthesisError(
                "loop-gain-unsolvable",
                f"node {k}: loop gain equation unsolvable (residual {resid:.3e})",
            )
        Lt.append(Ltk)
    return tuple(Lt), Kt


def gains_from_step2(
    model: PlantModel,
    graph: CommGraph,
    cert: LyapunovCertificate,
    solution: SdpSolution,
) -> EstimatorGains:
    a = solution.assignments
    N = graph.node_count
    Lt, Kt = recover_loop_gains(model, graph, cert)
    L = tuple(a[f"L_{k}"] for k in range(1, N + 1))
    K = {(k, j): a[f"K_{k}_{j}"] for k in range(1, N + 1) for j in graph.neighbors(k)}
    return EstimatorGains(L=L, L_tilde=Lt, K=K, K_tilde=Kt)


@dataclass(frozen=True)
class SynthesisResult:
    gains: EstimatorGains
    cert: LyapunovCertificate
    gamma_achieved: float
    step1: SdpSolution
    step2: SdpSolution


def two_step_synthesis(model: PlantModel, graph: CommGraph, cfg: SynthesisConfig) -> SynthesisResult:
    """Step 1 (linearized, off-diagonal norms minimized) then step 2 (frozen P).

    Raises SynthesisError with code 'step1-infeasible' ("no Lyapunov
    structure found"), 'step2-infeasible' ("frozen-P gain search failed"),
    or '*-failure' for solver breakdowns; callers may retry with different
    lambda_k, pi_k.
    """
    prob1 = assemble_theorem3(model, graph, cfg, mode=MODE_STEP1)
    sol1 = solve(prob1, cfg.solver)
    if sol1.status == STATUS_INFEASIBLE:
        raise SynthesisError("step1-infeasible", "no Lyapunov structure found")
    if not sol1.feasible:
        raise SynthesisError("step1-failure", f"step-1 solver returned {sol1.status}")
    cert = certificate_from_solution(graph, cfg, sol1)

    prob2 = assemble_theorem3(model, graph, cfg, mode=MODE_STEP2, fixed=cert)
    sol2 = solve(prob2, cfg.solver)
    if sol2.status == STATUS_INFEASIBLE:
        raise SynthesisError("step2-infeasible", "frozen-P gain search failed")
    if not sol2.feasible:
        raise SynthesisError("step2-failure", f"step-2 solver returned {sol2.status}")

    gains = gains_from_step2(model, graph, cert, sol2)
    gamma = cfg.gamma
    if cfg.minimize_gamma and sol2.objective_value is not None:
        gamma = float(np.sqrt(max(sol2.objective_value, 0.0)))
    return SynthesisResult(gains=gains, cert=cert, gamma_achieved=gamma, step1=sol1, step2=sol2)


# ---------------------------------------------------------------------------
# redefined error-dynamics blocks and numeric re-evaluation
# ---------------------------------------------------------------------------

def redefined_blocks(model: PlantModel, graph: CommGraph, gains: EstimatorGains) -> InterconnectedBlocks:
    """Error-dynamics interconnection blocks induced by a set of gains:
    A_k = A - L_k C_k - sum K_kj, A_kj = K_kj, E_k = H - Lt_k C_k - sum Kt_kj,
    E_kj = Kt_kj, B_k = -B_phi."""
    N = graph.node_count
    A_list, B_list, E_list = [], [], []
    A_off, E_off = {}, {}
    for k in range(1, N + 1):
        nbrs = graph.neighbors(k)
        Ak = model.A - gains.L[k - 1] @ model.C[k - 1]
        Ek = model.H - gains.L_tilde[k - 1] @ model.C[k - 1]
        for j in nbrs:
            Ak = Ak - gains.K[(k, j)]
            Ek = Ek - gains.K_tilde[(k, j)]
            A_off[(k, j)] = gains.K[(k, j)]
            E_off[(k, j)] = gains.K_tilde[(k, j)]
        A_list.append(Ak)
        E_list.append(Ek)
        B_list.append(-model.B_phi)
    return InterconnectedBlocks(
        A=tuple(A_list), A_off=A_off, B=tuple(B_list), E=tuple(E_list), E_off=E_off
    )


def stack_error_system(model: PlantModel, graph: CommGraph, gains: EstimatorGains):
    """Global (A_tilde, B, E) of the stacked error dynamics."""
    blocks = redefined_blocks(model, graph, gains)
    N, n, r = graph.node_count, model.n, model.r
    At = np.zeros((N * n, N * n))
    B = np.zeros((N * n, N * r))
    E = np.zeros((N * r, N * n))
    for k in range(1, N + 1):
        sk = (k - 1) * n
        At[sk:sk + n, sk:sk + n] = blocks.A[k - 1]
        B[sk:sk + n, (k - 1) * r:k * r] = blocks.B[k - 1]
        E[(k - 1) * r:k * r, sk:sk + n] = blocks.E[k - 1]
        for j in graph.neighbors(k):
            sj = (j - 1) * n
            At[sk:sk + n, sj:sj + n] = blocks.A_off[(k, j)]
            E[(k - 1) * r:k * r, sj:sj + n] = blocks.E_off[(k, j)]
    return At, B, E


def theorem3_block_residuals(
    model: PlantModel,
    graph: CommGraph,
    cfg: SynthesisConfig,
    cert: LyapunovCertificate,
    gains: EstimatorGains,
) -> list[float]:
    """Max eigenvalue of each node's performance block re-evaluated at the
    recovered gains and frozen Lyapunov blocks (should all be < 0)."""
    prob = assemble_theorem3(model, graph, cfg, mode=MODE_STEP2, fixed=cert)
    assignments = {}
    for k in range(1, graph.node_count + 1):
        assignments[f"L_{k}"] = gains.L[k - 1]
        for j in graph.neighbors(k):
            assignments[f"K_{k}_{j}"] = gains.K[(k, j)]
    if cfg.minimize_gamma:
        assignments["gamma2"] = cfg.gamma ** 2
    x = prob.pack(assignments)
    out = []
    for lmi in prob.lmis:
        if lmi.name.startswith("perf"):
            val = lmi.expr.evaluate(x)
            out.append(float(np.max(np.linalg.eigvalsh(val))))
    return out
