"""Containers for small dense semidefinite feasibility/optimization problems.

A problem owns a flat vector of real scalars backing three kinds of
declared variables: symmetric matrix blocks, rectangular matrix blocks,
and scalars.  Constraints are affine symmetric matrix expressions F(x)
required to satisfy F(x) <= -margin*I in the Loewner order, affine
expressions required to vanish entrywise, and an optional linear
objective to minimize.

Expressions are kept exactly symmetric where symmetry is required: the
transpose of a stored coefficient array is exact, so building blocks as
``X + X.T`` (and mirroring off-diagonal blocks as transposes) yields
bit-exact symmetry, which ``add_lmi`` asserts.
"""

from __future__ import annotations

import numpy as np

from distobs.exceptions import AssemblyError


class MatExpr:
    """Affine matrix-valued expression const + sum_i x[i] * coeff[i]."""

    __array_ufunc__ = None  # make ndarray @ MatExpr defer to __rmatmul__
    __array_priority__ = 1000

    def __init__(self, prob: "SdpProblem", shape, const=None, coeffs=None):
        self.prob = prob
        self.shape = (int(shape[0]), int(shape[1]))
        self.const = np.zeros(self.shape) if const is None else np.asarray(const, dtype=float)
        if self.const.shape != self.shape:
            raise AssemblyError(f"const shape {self.const.shape} != expression shape {self.shape}")
        self.coeffs = {} if coeffs is None else coeffs

    # -- algebra ------------------------------------------------------------

    def _check_same_problem(self, other: "MatExpr"):
        if other.prob is not self.prob:
            raise AssemblyError("cannot combine expressions from different problems")

    def __add__(self, other):
        if isinstance(other, MatExpr):
            self._check_same_problem(other)
            if other.shape != self.shape:
                raise AssemblyError(f"shape mismatch {self.shape} + {other.shape}")
            coeffs = dict(self.coeffs)
            for i, C in other.coeffs.items():
                coeffs[i] = coeffs[i] + C if i in coeffs else C
            return MatExpr(self.prob, self.shape, self.const + other.const, coeffs)
        other = np.asarray(other, dtype=float)
        if other.ndim == 0:
            other = float(other) * np.ones(self.shape)
        if other.shape != self.shape:
            raise AssemblyError(f"shape mismatch {self.shape} + {other.shape}")
        return MatExpr(self.prob, self.shape, self.const + other, dict(self.coeffs))

    def __radd__(self, other):
        return self.__add__(other)

    def __neg__(self):
        return MatExpr(self.prob, self.shape, -self.const, {i: -C for i, C in self.coeffs.items()})

    def __sub__(self, other):
        if isinstance(other, MatExpr):
            return self.__add__(other.__neg__())
        return self.__add__(-np.asarray(other, dtype=float))

    def __rsub__(self, other):
        return self.__neg__().__add__(other)

    def __mul__(self, a):
        a = float(a)
        return MatExpr(self.prob, self.shape, a * self.const, {i: a * C for i, C in self.coeffs.items()})

    def __rmul__(self, a):
        return self.__mul__(a)

    def __matmul__(self, M):
        """Right-multiplication by a constant matrix."""
        if isinstance(M, MatExpr):
            raise AssemblyError("product of two variable expressions is not affine")
        M = np.asarray(M, dtype=float)
        if M.ndim != 2 or M.shape[0] != self.shape[1]:
            raise AssemblyError(f"cannot multiply {self.shape} @ {M.shape}")
        shape = (self.shape[0], M.shape[1])
        return MatExpr(self.prob, shape, self.const @ M, {i: C @ M for i, C in self.coeffs.items()})

    def __rmatmul__(self, M):
        """Left-multiplication by a constant matrix."""
        M = np.asarray(M, dtype=float)
        if M.ndim != 2 or M.shape[1] != self.shape[0]:
            raise AssemblyError(f"cannot multiply {M.shape} @ {self.shape}")
        shape = (M.shape[0], self.shape[1])
        return MatExpr(self.prob, shape, M @ self.const, {i: M @ C for i, C in self.coeffs.items()})

    @property
    def T(self) -> "MatExpr":
        return MatExpr(
            self.prob,
            (self.shape[1], self.shape[0]),
            self.const.T.copy(),
            {i: C.T.copy() for i, C in self.coeffs.items()},
        )

    def times_identity(self, d: int) -> "MatExpr":
        """Embed a 1x1 expression as expr * I_d."""
        if self.shape != (1, 1):
            raise AssemblyError("times_identity requires a 1x1 expression")
        eye = np.eye(d)
        return MatExpr(
            self.prob, (d, d), float(self.const[0, 0]) * eye,
            {i: float(C[0, 0]) * eye for i, C in self.coeffs.items()},
        )

    # -- evaluation ---------------------------------------------------------

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        """Numeric value of the expression at a full scalar vector x."""
        out = self.const.copy()
        for i, C in self.coeffs.items():
            out += x[i] * C
        return out

    def is_symmetric(self) -> bool:
        if self.shape[0] != self.shape[1]:
            return False
        if not np.array_equal(self.const, self.const.T):
            return False
        return all(np.array_equal(C, C.T) for C in self.coeffs.values())

    def max_scale(self) -> float:
        m = float(np.max(np.abs(self.const))) if self.const.size else 0.0
        for C in self.coeffs.values():
            m = max(m, float(np.max(np.abs(C))))
        return m


def block(rows) -> MatExpr:
    """Assemble a block matrix of MatExpr / ndarray / None (zero) entries.

    Row heights and column widths are inferred from the non-None entries;
    at least one entry must be a MatExpr.
    """
    prob = None
    for row in rows:
        for e in row:
            if isinstance(e, MatExpr):
                prob = e.prob
                break
        if prob is not None:
            break
    if prob is None:
        raise AssemblyError("block() needs at least one MatExpr entry")

    n_rows, n_cols = len(rows), len(rows[0])
    if any(len(r) != n_cols for r in rows):
        raise AssemblyError("ragged block layout")

    def shape_of(e):
        if e is None:
            return None
        if isinstance(e, MatExpr):
            return e.shape
        return np.asarray(e, dtype=float).shape

    heights = [None] * n_rows
    widths = [None] * n_cols
    for i, row in enumerate(rows):
        for j, e in enumerate(row):
            s = shape_of(e)
            if s is None:
                continue
            if heights[i] is None:
                heights[i] = s[0]
            elif heights[i] != s[0]:
                raise AssemblyError(f"block row {i}: height {s[0]} != {heights[i]}")
            if widths[j] is None:
                widths[j] = s[1]
            elif widths[j] != s[1]:
                raise AssemblyError(f"block col {j}: width {s[1]} != {widths[j]}")
    if any(h is None for h in heights) or any(w is None for w in widths):
        raise AssemblyError("block layout has a fully-None row or column")

    row_off = np.concatenate([[0], np.cumsum(heights)])
    col_off = np.concatenate([[0], np.cumsum(widths)])
    shape = (int(row_off[-1]), int(col_off[-1]))
    const = np.zeros(shape)
    coeffs: dict[int, np.ndarray] = {}

    for i, row in enumerate(rows):
        r0, r1 = row_off[i], row_off[i + 1]
        for j, e in enumerate(row):
            if e is None:
                continue
            c0, c1 = col_off[j], col_off[j + 1]
            if isinstance(e, MatExpr):
                const[r0:r1, c0:c1] += e.const
                for idx, C in e.coeffs.items():
                    if idx not in coeffs:
                        coeffs[idx] = np.zeros(shape)
                    coeffs[idx][r0:r1, c0:c1] += C
            else:
                const[r0:r1, c0:c1] += np.asarray(e, dtype=float)
    return MatExpr(prob, shape, const, coeffs)


class _VarDecl:
    __slots__ = ("name", "kind", "shape", "offset", "size")

    def __init__(self, name, kind, shape, offset, size):
        self.name = name
        self.kind = kind
        self.shape = shape
        self.offset = offset
        self.size = size


class _Lmi:
    __slots__ = ("name", "expr", "margin")

    def __init__(self, name, expr, margin):
        self.name = name
        self.expr = expr
        self.margin = margin


class _Eq:
    __slots__ = ("name", "expr")

    def __init__(self, name, expr):
        self.name = name
        self.expr = expr


class SdpProblem:
    """Symmetric matrix variables, LMI constraints, equalities, linear objective."""

    def __init__(self, name: str = ""):
        self.name = name
        self.variables: list[_VarDecl] = []
        self._by_name: dict[str, _VarDecl] = {}
        self.num_scalars = 0
        self.lmis: list[_Lmi] = []
        self.eqs: list[_Eq] = []
        self.objective: MatExpr | None = None

    # -- variable declaration -------------------------------------------

    def _declare(self, name, kind, shape, size) -> _VarDecl:
        if name in self._by_name:
            raise AssemblyError(f"variable '{name}' already declared")
        decl = _VarDecl(name, kind, shape, self.num_scalars, size)
        self.variables.append(decl)
        self._by_name[name] = decl
        self.num_scalars += size
        return decl

    def sym_var(self, name: str, d: int) -> MatExpr:
        """Symmetric d x d matrix variable (d(d+1)/2 scalars, upper triangle)."""
        d = int(d)
        decl = self._declare(name, "sym", (d, d), d * (d + 1) // 2)
        coeffs = {}
        idx = decl.offset
        for a in range(d):
            for b in range(a, d):
                E = np.zeros((d, d))
                E[a, b] = 1.0
                E[b, a] = 1.0
                coeffs[idx] = E
                idx += 1
        return MatExpr(self, (d, d), None, coeffs)

    def mat_var(self, name: str, rows: int, cols: int) -> MatExpr:
        """Rectangular matrix variable (rows*cols scalars, row-major)."""
        rows, cols = int(rows), int(cols)
        decl = self._declare(name, "mat", (rows, cols), rows * cols)
        coeffs = {}
        idx = decl.offset
        for a in range(rows):
            for b in range(cols):
                E = np.zeros((rows, cols))
                E[a, b] = 1.0
                coeffs[idx] = E
                idx += 1
        return MatExpr(self, (rows, cols), None, coeffs)

    def scalar_var(self, name: str) -> MatExpr:
        decl = self._declare(name, "scalar", (1, 1), 1)
        return MatExpr(self, (1, 1), None, {decl.offset: np.ones((1, 1))})

    # -- constraints ------------------------------------------------------

    def add_lmi(self, expr: MatExpr, margin="auto", name: str | None = None) -> float:
        """Require expr <= -margin*I.  'auto' sets margin to 1e-6 * constraint scale.

        Returns the resolved margin.  The expression must be exactly
        symmetric; assemble symmetric parts as X + X.T and mirror
        off-diagonal blocks as transposes.
        """
        if not isinstance(expr, MatExpr) or expr.prob is not self:
            raise AssemblyError("add_lmi needs an expression built from this problem")
        if expr.shape[0] != expr.shape[1]:
            raise AssemblyError(f"LMI expression must be square, got {expr.shape}")
        if expr.shape[0] == 0:
            return 0.0
        if not expr.is_symmetric():
            raise AssemblyError(f"LMI expression '{name or len(self.lmis)}' is not exactly symmetric")
        if margin == "auto":
            margin = 1e-6 * max(1.0, expr.max_scale())
        margin = float(margin)
        if margin < 0:
            raise AssemblyError("margin must be >= 0")
        self.lmis.append(_Lmi(name or f"lmi{len(self.lmis)}", expr, margin))
        return margin

    def add_eq(self, expr: MatExpr, name: str | None = None):
        """Require expr == 0 entrywise."""
        if not isinstance(expr, MatExpr) or expr.prob is not self:
            raise AssemblyError("add_eq needs an expression built from this problem")
        if expr.shape[0] == 0 or expr.shape[1] == 0:
            return
        self.eqs.append(_Eq(name or f"eq{len(self.eqs)}", expr))

    def add_spectral_norm_epigraph(self, M: MatExpr, t: MatExpr, name: str | None = None):
        """Add [[t I, M], [M', t I]] >= 0, so minimizing t bounds the 2-norm of M."""
        a, b = M.shape
        blk = block([
            [t.times_identity(a), M],
            [M.T, t.times_identity(b)],
        ])
        self.add_lmi(-blk, margin=0.0, name=name or "specnorm")

    def minimize(self, expr: MatExpr):
        """Set a linear objective given as a 1x1 affine expression."""
        if expr.shape != (1, 1):
            raise AssemblyError("objective must be a 1x1 affine expression")
        self.objective = expr

    # -- packing / evaluation ----------------------------------------------

    def objective_vector(self):
        """(c, offset) with objective value c @ x + offset; c is None if unset."""
        if self.objective is None:
            return None, 0.0
        c = np.zeros(self.num_scalars)
        for i, C in self.objective.coeffs.items():
            c[i] += float(C[0, 0])
        return c, float(self.objective.const[0, 0])

    def unpack(self, x: np.ndarray) -> dict:
        """Scalar vector -> {name: matrix or float}."""
        out = {}
        for decl in self.variables:
            if decl.kind == "scalar":
                out[decl.name] = float(x[decl.offset])
            elif decl.kind == "mat":
                out[decl.name] = x[decl.offset:decl.offset + decl.size].reshape(decl.shape).copy()
            else:
                d = decl.shape[0]
                M = np.zeros((d, d))
                idx = decl.offset
                for a in range(d):
                    for b in range(a, d):
                        M[a, b] = x[idx]
                        M[b, a] = x[idx]
                        idx += 1
                out[decl.name] = M
        return out

    def pack(self, assignments: dict) -> np.ndarray:
        """{name: value} -> scalar vector (missing names default to zero)."""
        x = np.zeros(self.num_scalars)
        for name, value in assignments.items():
            decl = self._by_name.get(name)
            if decl is None:
                raise AssemblyError(f"unknown variable '{name}'")
            if decl.kind == "scalar":
                x[decl.offset] = float(value)
            elif decl.kind == "mat":
                M = np.asarray(value, dtype=float)
                if M.shape != decl.shape:
                    raise AssemblyError(f"'{name}' expects shape {decl.shape}, got {M.shape}")
                x[decl.offset:decl.offset + decl.size] = M.reshape(-1)
            else:
                M = np.asarray(value, dtype=float)
                d = decl.shape[0]
                if M.shape != (d, d):
                    raise AssemblyError(f"'{name}' expects shape {(d, d)}, got {M.shape}")
                idx = decl.offset
                for a in range(d):
                    for b in range(a, d):
                        x[idx] = 0.5 * (M[a, b] + M[b, a])
                        idx += 1
        return x

    def lmi_values(self, x: np.ndarray) -> list[np.ndarray]:
        return [lmi.expr.evaluate(x) for lmi in self.lmis]

    def eq_residuals(self, x: np.ndarray) -> list[float]:
        return [float(np.max(np.abs(eq.expr.evaluate(x)))) if eq.expr.const.size else 0.0 for eq in self.eqs]

    # -- debug dump ---------------------------------------------------------

    def dump(self, stream):
        """Plain-text dump: one block per constraint, rows written row-major.

        Format: header lines starting with '#', then per entity a line
        'var|lmi|eq <name> <rows> <cols> [margin]' followed by matrices as
        'const' / 'coeff <scalar-index>' lines, each with rows*cols numbers
        row-major on one line.
        """

        def emit_matrix(tag, M):
            flat = " ".join(repr(float(v)) for v in np.asarray(M, dtype=float).reshape(-1))
            stream.write(f"{tag} {flat}\n")

        stream.write(f"# sdp problem '{self.name}' scalars={self.num_scalars}\n")
        for decl in self.variables:
            stream.write(f"var {decl.name} {decl.kind} {decl.shape[0]} {decl.shape[1]} offset={decl.offset}\n")
        for lmi in self.lmis:
            stream.write(f"lmi {lmi.name} {lmi.expr.shape[0]} {lmi.expr.shape[1]} margin={lmi.margin!r}\n")
            emit_matrix("const", lmi.expr.const)
            for i in sorted(lmi.expr.coeffs):
                emit_matrix(f"coeff {i}", lmi.expr.coeffs[i])
        for eq in self.eqs:
            stream.write(f"eq {eq.name} {eq.expr.shape[0]} {eq.expr.shape[1]}\n")
            emit_matrix("const", eq.expr.const)
            for i in sorted(eq.expr.coeffs):
                emit_matrix(f"coeff {i}", eq.expr.coeffs[i])
        if self.objective is not None:
            c, off = self.objective_vector()
            stream.write(f"objective offset={off!r}\n")
            emit_matrix("coeffs", c)
