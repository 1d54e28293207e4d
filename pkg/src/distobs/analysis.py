"""Independent certificate verification.

Everything here re-checks solver output with plain dense linear algebra:
the centralized positive-real conditions, global assembly and positive
definiteness of the structured Lyapunov matrix, the reduced-matrix
block-dominance diagnostic, the identical-input-block structural check,
and a frequency-domain spot check of strict positive realness.

All operations are pure and safe to parallelize across certificates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from distobs.exceptions import ConditioningError
from distobs.graph import CommGraph


@dataclass(frozen=True)
class KypReport:
    lyap_max_eig: float
    eq_residual: float
    p_min_eig: float
    passed: bool


def check_kyp(
    P: np.ndarray,
    A_tilde: np.ndarray,
    B: np.ndarray,
    E: np.ndarray,
    eps: float,
    W: np.ndarray | None = None,
    tol_lyap: float = 1e-6,
    tol_eq: float = 1e-8,
) -> KypReport:
    """Check P Atilde + Atilde' P <= -eps I (- W) and P B = E'.

    ``W`` optionally adds a positive-semidefinite weight to the Lyapunov
    inequality.  Passes iff the shifted max eigenvalue and the equality
    residual are within tolerance and P is positive definite.
    """
    P = np.asarray(P, dtype=float)
    A_tilde = np.asarray(A_tilde, dtype=float)
    n = P.shape[0]
    lyap = P @ A_tilde + A_tilde.T @ P + eps * np.eye(n)
    if W is not None:
        lyap = lyap + np.asarray(W, dtype=float)
    lyap_max = float(np.max(np.linalg.eigvalsh(0.5 * (lyap + lyap.T))))
    B = np.asarray(B, dtype=float)
    E = np.asarray(E, dtype=float)
    eq_res = float(np.max(np.abs(P @ B - E.T))) if B.size else 0.0
    p_min = float(np.min(np.linalg.eigvalsh(P)))
    passed = lyap_max <= tol_lyap and eq_res <= tol_eq and p_min > 0.0
    return KypReport(lyap_max_eig=lyap_max, eq_residual=eq_res, p_min_eig=p_min, passed=passed)


def assemble_global_P(cert, graph: CommGraph) -> np.ndarray:
    """Stack certificate blocks into the full symmetric Lyapunov matrix.

    P_k on the diagonal, P_kj at block (k, j) and its transpose at (j, k)
    for edges, zero elsewhere.  Blocks for non-edges are rejected.
    """
    N = graph.node_count
    if len(cert.P) != N:
        raise ValueError(f"certificate has {len(cert.P)} diagonal blocks, graph has {N} nodes")
    for (k, j) in cert.P_off:
        if not graph.has_edge(k, j):
            raise ValueError(f"certificate has an off-diagonal block for the non-edge ({k},{j})")
    sizes = [M.shape[0] for M in cert.P]
    off = np.concatenate([[0], np.cumsum(sizes)])
    G = np.zeros((off[-1], off[-1]))
    for k in range(1, N + 1):
        G[off[k - 1]:off[k], off[k - 1]:off[k]] = cert.P[k - 1]
    for (k, j), M in cert.P_off.items():
        G[off[k - 1]:off[k], off[j - 1]:off[j]] = M
        G[off[j - 1]:off[j], off[k - 1]:off[k]] = M.T
    return G


@dataclass(frozen=True)
class ReducedMatrixReport:
    R: np.ndarray
    diag_dominant: bool
    norm_sums: tuple


def reduced_matrix_test(cert, graph: CommGraph) -> ReducedMatrixReport:
    """Reduced matrix R with r_ii = 1, r_ij = -||P_i^-1 P_ij|| (2-norm).

    Strict diagonal dominance of R is a sufficient condition for positive
    definiteness of the assembled global matrix; the per-node norm sums
    sum_j ||P_k^-1 P_kj|| < 1 restate it and are reported as diagnostics.
    """
    N = graph.node_count
    R = np.eye(N)
    sums = []
    for k in range(1, N + 1):
        Pk = cert.P[k - 1]
        evals = np.linalg.eigvalsh(Pk)
        if evals.min() <= 1e-14 * max(1.0, evals.max()):
            raise ConditioningError(f"P_{k} is numerically singular")
        total = 0.0
        for j in graph.neighbors(k):
            nrm = float(np.linalg.norm(np.linalg.solve(Pk, cert.block(k, j)), 2))
            R[k - 1, j - 1] = -nrm
            total += nrm
        sums.append(total)
    dominant = all(s < 1.0 for s in sums)
    return ReducedMatrixReport(R=R, diag_dominant=dominant, norm_sums=tuple(sums))


def corollary1_check(B_blocks, E_off: dict, tol: float = 1e-9) -> list:
    """Structural restriction for identical input blocks over directed designs.

    For ordered pairs (k, j) with B_k = B_j != 0, E_kj != 0 and E_jk = 0,
    the product E_kj B_k must vanish.  Returns the violating pairs
    (k, j, max-abs of E_kj B_k); an empty list means no violation.
    """
    B_blocks = [np.asarray(M, dtype=float) for M in B_blocks]
    E = {t: np.asarray(M, dtype=float) for t, M in E_off.items()}

    def is_zero(M):
        return M is None or M.size == 0 or float(np.max(np.abs(M))) <= tol

    violations = []
    for (k, j), Ekj in E.items():
        if is_zero(Ekj):
            continue
        Bk = B_blocks[k - 1]
        Bj = B_blocks[j - 1]
        if is_zero(Bk) or Bk.shape != Bj.shape or float(np.max(np.abs(Bk - Bj))) > tol:
            continue
        Ejk = E.get((j, k))
        if not is_zero(Ejk):
            continue
        prod = float(np.max(np.abs(Ekj @ Bk)))
        if prod > tol:
            violations.append((k, j, prod))
    return violations


@dataclass(frozen=True)
class SprReport:
    min_real_eig: float
    worst_freq: float
    hurwitz: bool
    passed: bool


def spr_frequency_check(A_tilde, B, E, freq_grid=None) -> SprReport:
    """Sample min eig of G(jw) + G(jw)* for G(s) = E (sI - Atilde)^-1 B.

    A necessary-condition spot check: requires Atilde Hurwitz and a
    positive Hermitian part at every grid point (default log-spaced
    1e-3..1e3 rad/s, 500 points).
    """
    A_tilde = np.asarray(A_tilde, dtype=float)
    B = np.asarray(B, dtype=float)
    E = np.asarray(E, dtype=float)
    if freq_grid is None:
        freq_grid = np.logspace(-3, 3, 500)
    eigs = np.linalg.eigvals(A_tilde)
    hurwitz = bool(np.max(eigs.real) < 0)
    if not hurwitz:
        return SprReport(min_real_eig=-np.inf, worst_freq=float("nan"), hurwitz=False, passed=False)
    if B.shape[1] == 0:
        return SprReport(min_real_eig=np.inf, worst_freq=float("nan"), hurwitz=True, passed=True)
    n = A_tilde.shape[0]
    worst = np.inf
    worst_f = float(freq_grid[0])
    for w in freq_grid:
        G = E @ np.linalg.solve(1j * w * np.eye(n) - A_tilde, B)
        herm = G + G.conj().T
        lo = float(np.min(np.linalg.eigvalsh(herm)))
        if lo < worst:
            worst = lo
            worst_f = float(w)
    return SprReport(min_real_eig=worst, worst_freq=worst_f, hurwitz=True, passed=worst > 0.0)


def kalman_rank_warnings(A_tilde, B, E, rtol: float = 1e-9) -> list:
    """Controllability/observability rank checks, reported as warnings only."""
    A_tilde = np.asarray(A_tilde, dtype=float)
    B = np.asarray(B, dtype=float)
    E = np.asarray(E, dtype=float)
    n = A_tilde.shape[0]
    warnings = []
    if B.size:
        ctrb = np.hstack([np.linalg.matrix_power(A_tilde, i) @ B for i in range(n)])
        if np.linalg.matrix_rank(ctrb, tol=rtol * max(1.0, float(np.max(np.abs(ctrb))))) < n:
            warnings.append("(A, B) appears uncontrollable at the given rank tolerance")
    if E.size:
        obsv = np.vstack([E @ np.linalg.matrix_power(A_tilde, i) for i in range(n)])
        if np.linalg.matrix_rank(obsv, tol=rtol * max(1.0, float(np.max(np.abs(obsv))))) < n:
            warnings.append("(A, E) appears unobservable at the given rank tolerance")
    return warnings
