"""Conic programs in a single canonical form and their solution.

A program minimizes ``c @ x`` over real variables ``x`` subject to blocks
``G @ x + h in K`` with ``K`` one of the cones below.  Rows of a block are
affine expressions built with :class:`Affine` (real) or :class:`CAffine`
(complex, carried as a real/imaginary pair).

Cone conventions:

* ``zero``        every row equals 0
* ``nonneg``      every row is >= 0
* ``soc``         rows ``(t, u)`` with ``t >= ||u||``
* ``rsoc``        rows ``(t, y, u)`` with ``2 t y >= ||u||^2``, ``t, y >= 0``
* ``exp``         rows ``(r, y, s)`` with ``y exp(r / y) <= s``, ``y > 0``
* ``psd(d)``      ``d(d+1)/2`` rows: lower triangle of a symmetric matrix,
                  column-major, off-diagonal entries scaled by sqrt(2)
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.sparse as sp

try:
    import clarabel
except ImportError:  # pragma: no cover
    clarabel = None

SQRT2 = np.sqrt(2.0)
DEFAULT_TOL = 1e-8


class Affine:
    """Real affine vector expression ``A @ x + b``.

    ``A`` may have fewer columns than the program has variables; missing
    columns are zero (variables created later).
    """

    __array_ufunc__ = None

    def __init__(self, A, b=None):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        self.A = A
        self.b = np.zeros(A.shape[0]) if b is None else np.asarray(b, dtype=float).reshape(-1)

    @classmethod
    def const(cls, values) -> "Affine":
        values = np.atleast_1d(np.asarray(values, dtype=float))
        return cls(np.zeros((values.size, 0)), values)

    @property
    def size(self) -> int:
        return self.A.shape[0]

    def padded(self, n: int) -> np.ndarray:
        if self.A.shape[1] == n:
            return self.A
        out = np.zeros((self.A.shape[0], n))
        out[:, : self.A.shape[1]] = self.A
        return out

    def value(self, x) -> np.ndarray:
        x = np.asarray(x)
        return self.A @ x[: self.A.shape[1]] + self.b

    def _coerce(self, other) -> "Affine":
        if isinstance(other, Affine):
            return other
        other = np.broadcast_to(np.asarray(other, dtype=float), (self.size,))
        return Affine.const(other)

    def __add__(self, other):
        if isinstance(other, CAffine):
            return NotImplemented
        other = self._coerce(other)
        n = max(self.A.shape[1], other.A.shape[1])
        return Affine(self.padded(n) + other.padded(n), self.b + other.b)

    __radd__ = __add__

    def __neg__(self):
        return Affine(-self.A, -self.b)

    def __sub__(self, other):
        return self + (-self._coerce(other) if not isinstance(other, CAffine) else -other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, c):
        c = np.asarray(c, dtype=float)
        if c.ndim == 0:
            return Affine(self.A * c, self.b * c)
        return Affine(self.A * c[:, None], self.b * c)

    __rmul__ = __mul__

    def __rmatmul__(self, C):
        C = np.atleast_2d(np.asarray(C, dtype=float))
        return Affine(C @ self.A, C @ self.b)

    def __getitem__(self, idx):
        if isinstance(idx, (int, np.integer)):
            idx = [idx]
        return Affine(self.A[idx], self.b[idx])

    def sum(self) -> "Affine":
        return Affine(self.A.sum(axis=0, keepdims=True), [self.b.sum()])

    def __len__(self):
        return self.size


def vstack(*exprs) -> Affine:
    exprs = [e if isinstance(e, Affine) else Affine.const(e) for e in exprs]
    n = max(e.A.shape[1] for e in exprs)
    return Affine(np.vstack([e.padded(n) for e in exprs]), np.concatenate([e.b for e in exprs]))


class CAffine:
    """Complex affine vector expression carried as ``re + 1j * im``."""

    __array_ufunc__ = None

    def __init__(self, re: Affine, im: Affine):
        self.re, self.im = re, im

    @classmethod
    def from_real(cls, x: Affine) -> "CAffine":
        return cls(x, Affine.const(np.zeros(x.size)))

    @classmethod
    def const(cls, values) -> "CAffine":
        values = np.atleast_1d(np.asarray(values, dtype=complex))
        return cls(Affine.const(values.real), Affine.const(values.imag))

    @property
    def size(self) -> int:
        return self.re.size

    def value(self, x) -> np.ndarray:
        return self.re.value(x) + 1j * self.im.value(x)

    def __add__(self, other):
        if not isinstance(other, CAffine):
            other = CAffine.const(np.broadcast_to(np.asarray(other, dtype=complex), (self.size,)))
        return CAffine(self.re + other.re, self.im + other.im)

    __radd__ = __add__

    def __neg__(self):
        return CAffine(-self.re, -self.im)

    def __sub__(self, other):
        return self + (-other if isinstance(other, CAffine) else -np.asarray(other))

    def __mul__(self, c):
        c = complex(c)
        return CAffine(c.real * self.re - c.imag * self.im, c.real * self.im + c.imag * self.re)

    __rmul__ = __mul__

    def __rmatmul__(self, C):
        C = np.atleast_2d(np.asarray(C, dtype=complex))
        return CAffine(C.real @ self.re - C.imag @ self.im, C.real @ self.im + C.imag @ self.re)

    def __getitem__(self, idx):
        return CAffine(self.re[idx], self.im[idx])

    def conj(self) -> "CAffine":
        return CAffine(self.re, -self.im)

    def stacked(self) -> Affine:
        """Real vector [re; im] whose Euclidean norm equals the complex norm."""
        return vstack(self.re, self.im)


def cvstack(*exprs) -> CAffine:
    return CAffine(vstack(*[e.re for e in exprs]), vstack(*[e.im for e in exprs]))


class Status(str, Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    NUMERICAL_FAILURE = "NumericalFailure"


CONE_TAGS = ("zero", "nonneg", "soc", "rsoc", "exp", "psd")


def _psd_rows(d: int) -> int:
    return d * (d + 1) // 2


@dataclass
class Block:
    G: np.ndarray
    h: np.ndarray
    cone: str
    dim: int = 0            # matrix order for psd blocks


@dataclass
class ConeProgram:
    n_vars: int = 0
    blocks: list = field(default_factory=list)
    objective: np.ndarray = field(default_factory=lambda: np.zeros(0))
    objective_offset: float = 0.0

    def var(self, n: int = 1) -> Affine:
        A = np.zeros((n, self.n_vars + n))
        A[:, self.n_vars:] = np.eye(n)
        self.n_vars += n
        return Affine(A)

    def add(self, expr, cone: str, dim: int = 0) -> None:
        if isinstance(expr, CAffine):
            raise TypeError("complex expressions must be split before adding a cone block")
        expr = expr if isinstance(expr, Affine) else Affine.const(expr)
        m = expr.size
        if cone not in CONE_TAGS:
            raise ValueError(f"unknown cone {cone!r}")
        if cone == "exp" and m != 3:
            raise ValueError("exponential cone blocks have exactly 3 rows")
        if cone == "soc" and m < 1:
            raise ValueError("second-order cone needs at least 1 row")
        if cone == "rsoc" and m < 2:
            raise ValueError("rotated second-order cone needs at least 2 rows")
        if cone == "psd" and m != _psd_rows(dim):
            raise ValueError(f"psd({dim}) needs {_psd_rows(dim)} rows, got {m}")
        self.blocks.append(Block(expr.A, expr.b, cone, dim))

    def add_nonneg(self, expr) -> None:
        self.add(expr, "nonneg")

    def add_zero(self, expr) -> None:
        self.add(expr, "zero")

    def add_soc(self, t, u) -> None:
        """||u|| <= t."""
        self.add(vstack(t, u), "soc")

    def minimize(self, expr) -> None:
        expr = expr if isinstance(expr, Affine) else Affine.const(expr)
        if expr.size != 1:
            raise ValueError("objective must be scalar")
        self.objective = expr.A[0].copy()
        self.objective_offset = float(expr.b[0])

    def maximize(self, expr) -> None:
        self.minimize(-expr)

    def dump(self) -> str:
        """Plain-text listing of objective and blocks (for reproducing inputs)."""
        rows = [f"n_vars {self.n_vars}",
                "objective " + " ".join(repr(float(v)) for v in self.c()),
                f"objective_offset {self.objective_offset!r}"]
        for i, blk in enumerate(self.blocks):
            tag = f"psd({blk.dim})" if blk.cone == "psd" else blk.cone
            rows.append(f"block {i} {tag} rows {blk.G.shape[0]}")
            G = np.zeros((blk.G.shape[0], self.n_vars))
            G[:, : blk.G.shape[1]] = blk.G
            for r in range(G.shape[0]):
                nz = np.flatnonzero(G[r])
                terms = " ".join(f"{j}:{G[r, j]!r}" for j in nz)
                rows.append(f"  h={blk.h[r]!r} {terms}")
        return "\n".join(rows) + "\n"

    def c(self) -> np.ndarray:
        c = np.zeros(self.n_vars)
        c[: self.objective.size] = self.objective
        return c


@dataclass
class ConeSolution:
    status: Status
    x: np.ndarray
    objective_value: float
    solve_time: float

    @property
    def ok(self) -> bool:
        return self.status == Status.OPTIMAL


def _psd_lower_to_clarabel(d: int) -> np.ndarray:
    """Permutation taking lower col-major packing to Clarabel's upper col-major."""
    lower = [(i, j) for j in range(d) for i in range(j, d)]
    pos = {pair: k for k, pair in enumerate(lower)}
    upper = [(i, j) for j in range(d) for i in range(j + 1)]
    return np.array([pos[(j, i)] for (i, j) in upper])


def _canonical_blocks(program: ConeProgram):
    n = program.n_vars
    Gs, hs, cones = [], [], []
    for blk in program.blocks:
        G = np.zeros((blk.G.shape[0], n))
        G[:, : blk.G.shape[1]] = blk.G
        h = blk.h
        m = G.shape[0]
        if blk.cone == "zero":
            cones.append(clarabel.ZeroConeT(m))
        elif blk.cone == "nonneg":
            cones.append(clarabel.NonnegativeConeT(m))
        elif blk.cone == "soc":
            cones.append(clarabel.SecondOrderConeT(m))
        elif blk.cone == "rsoc":
            T = np.zeros((m, m))
            T[0, :2] = [1.0, 1.0]
            T[1, :2] = [1.0, -1.0]
            T[2:, 2:] = SQRT2 * np.eye(m - 2)
            G, h = T @ G, T @ h
            cones.append(clarabel.SecondOrderConeT(m))
        elif blk.cone == "exp":
            cones.append(clarabel.ExponentialConeT())
        elif blk.cone == "psd":
            perm = _psd_lower_to_clarabel(blk.dim)
            G, h = G[perm], h[perm]
            cones.append(clarabel.PSDTriangleConeT(blk.dim))
        Gs.append(G)
        hs.append(h)
    G = np.vstack(Gs) if Gs else np.zeros((0, n))
    h = np.concatenate(hs) if hs else np.zeros(0)
    return G, h, cones


def solve(program: ConeProgram, tolerance: float = DEFAULT_TOL) -> ConeSolution:
    """Solve with the Clarabel interior-point backend; never raises on breakdown."""
    n = program.n_vars
    start = time.perf_counter()
    nan = np.full(n, np.nan)
    try:
        G, h, cones = _canonical_blocks(program)
        settings = clarabel.DefaultSettings()
        settings.verbose = False
        settings.tol_gap_abs = tolerance
        settings.tol_gap_rel = tolerance
        settings.tol_feas = tolerance
        settings.max_iter = 200
        # G x + h in K  <=>  (-G) x + s = h
        solver = clarabel.DefaultSolver(sp.csc_matrix((n, n)), program.c(),
                                        sp.csc_matrix(-G), h, cones, settings)
        res = solver.solve()
    except Exception:  # backend breakdown is reported, not raised
        return ConeSolution(Status.NUMERICAL_FAILURE, nan, np.nan, time.perf_counter() - start)
    elapsed = time.perf_counter() - start
    name = str(res.status)
    x = np.asarray(res.x, dtype=float)
    # a reduced-accuracy exit counts when the iterate is verifiably primal feasible
    if name == "Solved" or (name == "AlmostSolved"
                            and (res.r_prim <= 1e-6 or block_residual(program, x) <= 1e-6)):
        status = Status.OPTIMAL
    elif name in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
        status = Status.INFEASIBLE
    elif name in ("DualInfeasible", "AlmostDualInfeasible"):
        status = Status.UNBOUNDED
    else:
        status = Status.NUMERICAL_FAILURE
    obj = float(program.c() @ x + program.objective_offset) if status == Status.OPTIMAL else np.nan
    return ConeSolution(status, x, obj, elapsed)


def block_residual(program: ConeProgram, x) -> float:
    """Largest violation of any cone block at ``x`` (0 when feasible)."""
    worst = 0.0
    for blk in program.blocks:
        s = blk.G @ x[: blk.G.shape[1]] + blk.h
        if blk.cone == "zero":
            v = np.max(np.abs(s))
        elif blk.cone == "nonneg":
            v = max(0.0, -s.min())
        elif blk.cone == "soc":
            v = max(0.0, np.linalg.norm(s[1:]) - s[0])
        elif blk.cone == "rsoc":
            v = max(0.0, np.sum(s[2:] ** 2) - 2 * s[0] * s[1], -s[0], -s[1])
        elif blk.cone == "exp":
            r, y, z = s
            v = max(0.0, y * np.exp(r / y) - z) if y > 0 else max(0.0, r, -z)
        else:
            v = max(0.0, -np.linalg.eigvalsh(unpack_psd(s, blk.dim)).min())
        worst = max(worst, float(v))
    return worst


# ---------------------------------------------------------------------------
# helpers used by the beamforming subproblems

def pack_psd(S: np.ndarray) -> np.ndarray:
    d = S.shape[0]
    out = []
    for j in range(d):
        for i in range(j, d):
            out.append(S[i, j] if i == j else SQRT2 * S[i, j])
    return np.array(out)


def unpack_psd(v: np.ndarray, d: int) -> np.ndarray:
    S = np.zeros((d, d))
    k = 0
    for j in range(d):
        for i in range(j, d):
            S[i, j] = S[j, i] = v[k] if i == j else v[k] / SQRT2
            k += 1
    return S


def hermitian_embedding(H: np.ndarray) -> np.ndarray:
    """Real symmetric [[Re H, -Im H], [Im H, Re H]]; PSD iff H is PSD."""
    return np.block([[H.real, -H.imag], [H.imag, H.real]])


def embed_hermitian_psd(H_expr: CAffine, d: int, tol: float = 1e-12) -> Affine:
    """Packed rows of the real embedding of a Hermitian d x d expression.

    ``H_expr`` holds the d*d entries in column-major order.  Returns the
    ``psd(2d)`` rows; add them with ``program.add(rows, "psd", 2 * d)``.
    """
    if isinstance(H_expr, np.ndarray):
        H_expr = CAffine.const(H_expr.reshape(-1, order="F"))
    if H_expr.size != d * d:
        raise ValueError(f"expected {d * d} entries, got {H_expr.size}")
    n = max(H_expr.re.A.shape[1], H_expr.im.A.shape[1])
    ReA, Reb = H_expr.re.padded(n), H_expr.re.b
    ImA, Imb = H_expr.im.padded(n), H_expr.im.b
    idx = lambda i, j: i + j * d  # noqa: E731
    for i in range(d):
        for j in range(i, d):
            a, b = idx(i, j), idx(j, i)
            if (np.abs(ReA[a] - ReA[b]).max(initial=0) > tol or abs(Reb[a] - Reb[b]) > tol
                    or np.abs(ImA[a] + ImA[b]).max(initial=0) > tol or abs(Imb[a] + Imb[b]) > tol):
                raise ValueError("expression is not Hermitian by construction")
    D = 2 * d
    rows_A, rows_b = [], []
    for j in range(D):
        for i in range(j, D):
            bi, ii = divmod(i, d)
            bj, jj = divmod(j, d)
            k = idx(ii, jj)
            if bi == bj:
                a, c = ReA[k], Reb[k]
            elif bi == 1:          # lower-left block: Im H
                a, c = ImA[k], Imb[k]
            else:                  # upper-right block: -Im H
                a, c = -ImA[k], -Imb[k]
            s = 1.0 if i == j else SQRT2
            rows_A.append(s * a)
            rows_b.append(s * c)
    return Affine(np.array(rows_A), np.array(rows_b))


def add_log_hypograph(program: ConeProgram, r: Affine, s: Affine) -> None:
    """r <= ln(s)."""
    program.add(vstack(r, Affine.const([1.0]), s), "exp")


def add_quad_over_lin(program: ConeProgram, r: Affine, y, u: Affine) -> None:
    """||u||^2 / y <= r with y >= 0."""
    y = y if isinstance(y, Affine) else Affine.const([float(y)])
    program.add(vstack(0.5 * r, y, u), "rsoc")


class HermitianVar:
    """Hermitian d x d matrix variable parametrized by d^2 real scalars.

    Parameters: the diagonal, then real and imaginary parts of the strict
    upper triangle.
    """

    def __init__(self, program: ConeProgram, d: int):
        self.d = d
        self.params = program.var(d * d)
        iu = np.triu_indices(d, 1)
        n_up = len(iu[0])
        Tr = np.zeros((d * d, d * d))
        Ti = np.zeros((d * d, d * d))
        for k in range(d):
            Tr[k + k * d, k] = 1.0
        for p, (i, j) in enumerate(zip(*iu)):
            Tr[i + j * d, d + p] = Tr[j + i * d, d + p] = 1.0
            Ti[i + j * d, d + n_up + p] = 1.0
            Ti[j + i * d, d + n_up + p] = -1.0
        self.vec = CAffine(Tr @ self.params, Ti @ self.params)   # column-major entries

    def params_from(self, W: np.ndarray) -> np.ndarray:
        iu = np.triu_indices(self.d, 1)
        return np.concatenate([np.real(np.diag(W)), W[iu].real, W[iu].imag])

    def value(self, x) -> np.ndarray:
        return self.vec.value(x).reshape(self.d, self.d, order="F")

    def matvec(self, b) -> CAffine:
        """W @ b for a constant complex vector b."""
        return np.kron(np.asarray(b).reshape(1, -1), np.eye(self.d)) @ self.vec

    def quad(self, b) -> Affine:
        """Real scalar b^H W b."""
        b = np.asarray(b, dtype=complex)
        coef = np.kron(b, np.conj(b)).reshape(1, -1)
        return (coef @ self.vec).re

    def trace_weighted(self, lam) -> Affine:
        """sum_i lam_i W_ii = Tr(diag(lam) W)."""
        coef = np.zeros((1, self.d * self.d))
        for i, l in enumerate(np.asarray(lam, dtype=float)):
            coef[0, i + i * self.d] = l
        return (coef @ self.vec).re

    def congruence(self, s) -> CAffine:
        """Entries of diag(s) W diag(s) (column-major) for a real vector s."""
        s = np.asarray(s, dtype=float)
        return np.diag(np.kron(s, s)).astype(complex) @ self.vec
