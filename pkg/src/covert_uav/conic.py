"""Backend-agnostic second-order cone programs.

A :class:`ConicProgram` maximizes ``c @ x`` subject to ``b - A @ x`` lying in
a product of cones (zero, nonnegative, second-order, rotated second-order)
and simple variable bounds.

Why linear and (rotated) second-order cones suffice for the trajectory
subproblem:

* the rate surrogate is ``const - a * ||q - w||^2 - c * P`` with ``a > 0``,
  so ``surrogate >= nu`` is "sum of squares <= affine";
* the bilinear rate/covertness products are handled by the difference of
  squares ``(x + v)^2 - (x - v)^2`` whose convex part is linearized, leaving
  again "sum of squares <= affine";
* the covertness surrogate is affine and nondecreasing in the
  quadratic-over-linear ratio ``(||q - w||^2 + H^2) / P``, so bounding it
  gives ``||(q - w, H)||^2 <= P * affine``, a rotated cone;
* the speed limit is a plain norm bound.

Every transcendental term is replaced by its tangent before it reaches this
module, so no exponential cone is needed.
"""

from __future__ import annotations

import gzip
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

__all__ = [
    "Affine",
    "Cone",
    "ConicProgram",
    "ConicBuilder",
    "ConicSolution",
    "encode_sum_squares_le_affine",
    "encode_quad_over_linear_le_affine",
    "cone_violation",
    "solve",
    "dump_program",
    "load_program",
]

CONE_KINDS = ("zero", "nonneg", "soc", "rsoc")
SQRT1_2 = np.sqrt(0.5)


@dataclass(frozen=True)
class Affine:
    """Sparse affine expression ``const + coef @ x[idx]``."""

    idx: np.ndarray
    coef: np.ndarray
    const: float = 0.0

    @staticmethod
    def constant(value: float) -> "Affine":
        return Affine(np.zeros(0, dtype=np.int64), np.zeros(0), float(value))

    @staticmethod
    def of(terms, const: float = 0.0) -> "Affine":
        """From ``[(index, coefficient), ...]``."""
        if not terms:
            return Affine.constant(const)
        idx, coef = zip(*terms)
        return Affine(np.asarray(idx, dtype=np.int64), np.asarray(coef, float), float(const))

    def __add__(self, other):
        if isinstance(other, Affine):
            return Affine(np.concatenate([self.idx, other.idx]), np.concatenate([self.coef, other.coef]), self.const + other.const)
        return Affine(self.idx, self.coef, self.const + float(other))

    __radd__ = __add__

    def __mul__(self, scale):
        return Affine(self.idx, self.coef * scale, self.const * scale)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-other)

    def value(self, x) -> float:
        return self.const + float(np.dot(self.coef, np.asarray(x)[self.idx]))


@dataclass(frozen=True)
class Cone:
    kind: str
    dim: int


@dataclass
class ConicProgram:
    n_vars: int
    objective: np.ndarray
    A: sp.csr_matrix
    b: np.ndarray
    cones: list
    lb: np.ndarray
    ub: np.ndarray
    var_slices: dict = field(default_factory=dict)

    def __post_init__(self):
        if sum(c.dim for c in self.cones) != self.A.shape[0]:
            raise ValueError("cone dims must sum to the row count")
        if self.A.shape[1] != self.n_vars or len(self.b) != self.A.shape[0]:
            raise ValueError("inconsistent program shapes")
        for arr in (self.objective, self.b, self.A.data):
            if not np.all(np.isfinite(arr)):
                raise ValueError("program data must be finite")

    @property
    def n_rows(self) -> int:
        return self.A.shape[0]

    def slacks(self, x) -> np.ndarray:
        return self.b - self.A @ x

    def violation(self, x) -> float:
        """Largest unscaled cone or bound violation at ``x``."""
        s = self.slacks(x)
        worst = 0.0
        off = 0
        for c in self.cones:
            worst = max(worst, cone_violation(c.kind, s[off : off + c.dim]))
            off += c.dim
        worst = max(worst, float(np.max(np.maximum(self.lb - x, 0.0), initial=0.0)))
        worst = max(worst, float(np.max(np.maximum(x - self.ub, 0.0), initial=0.0)))
        return worst

    def scaled_violation(self, x) -> float:
        return self.violation(x) / (1.0 + float(np.max(np.abs(self.b), initial=0.0)))


def cone_violation(kind: str, s) -> float:
    s = np.asarray(s, float)
    if kind == "zero":
        return float(np.max(np.abs(s), initial=0.0))
    if kind == "nonneg":
        return float(np.max(-s, initial=0.0)) if s.size else 0.0
    if kind == "soc":
        return max(float(np.linalg.norm(s[1:]) - s[0]), 0.0)
    if kind == "rsoc":
        u, v, z = s[0], s[1], s[2:]
        t = SQRT1_2 * (u + v)
        return max(float(np.hypot(np.linalg.norm(z), SQRT1_2 * (u - v)) - t), 0.0)
    raise ValueError(kind)


def encode_sum_squares_le_affine(terms, bound: Affine):
    """``sum_i terms_i^2 <= bound`` as a list of ``(kind, rows)`` blocks."""
    if not terms:
        return [("nonneg", [bound])]
    return [("rsoc", [Affine.constant(0.5), bound, *terms])]


def encode_quad_over_linear_le_affine(numerator, denominator: Affine, bound: Affine, balance: float = 1.0):
    """``sum_i numerator_i^2 <= denominator * bound`` with both factors >= 0.

    ``balance`` rescales the two factors in opposite directions, which leaves
    the set unchanged and can improve conditioning.
    """
    return [("rsoc", [denominator * (0.5 * balance), bound * (1.0 / balance), *numerator])]


class ConicBuilder:
    """Accumulates variables and cone blocks, then emits a :class:`ConicProgram`."""

    def __init__(self):
        self.n_vars = 0
        self.lb: list = []
        self.ub: list = []
        self.objective: dict = {}
        self.var_slices: dict = {}
        self._rows: list = []  # (row_id, idx, coef)
        self._consts: list = []
        self.cones: list = []

    def add_variable(self, name: str, shape=(), lb=-np.inf, ub=np.inf) -> np.ndarray:
        size = int(np.prod(shape)) if shape else 1
        idx = np.arange(self.n_vars, self.n_vars + size)
        self.n_vars += size
        full = tuple(shape) if shape else (1,)
        self.lb.extend(np.broadcast_to(np.asarray(lb, float), full).ravel())
        self.ub.extend(np.broadcast_to(np.asarray(ub, float), full).ravel())
        self.var_slices[name] = (idx[0], idx[-1] + 1, tuple(shape))
        return idx.reshape(shape) if shape else idx[0]

    def fix(self, idx, values) -> None:
        idx = np.asarray(idx).ravel()
        vals = np.asarray(values, float).ravel()
        for i, v in zip(idx, vals):
            self.lb[i] = v
            self.ub[i] = v

    def maximize(self, terms) -> None:
        for i, c in terms:
            self.objective[int(i)] = self.objective.get(int(i), 0.0) + float(c)

    def add(self, kind: str, rows) -> None:
        if kind not in CONE_KINDS:
            raise ValueError(kind)
        for r in rows:
            self._rows.append((r.idx, r.coef))
            self._consts.append(r.const)
        self.cones.append(Cone(kind, len(rows)))

    def add_blocks(self, blocks) -> None:
        for kind, rows in blocks:
            self.add(kind, rows)

    def build(self) -> ConicProgram:
        nnz = sum(len(i) for i, _ in self._rows)
        ri = np.empty(nnz, dtype=np.int64)
        ci = np.empty(nnz, dtype=np.int64)
        vals = np.empty(nnz)
        off = 0
        for r, (idx, coef) in enumerate(self._rows):
            n = len(idx)
            ri[off : off + n] = r
            ci[off : off + n] = idx
            vals[off : off + n] = -coef
            off += n
        A = sp.csr_matrix((vals, (ri, ci)), shape=(len(self._rows), self.n_vars))
        A.sum_duplicates()
        c = np.zeros(self.n_vars)
        for i, v in self.objective.items():
            c[i] = v
        return ConicProgram(
            n_vars=self.n_vars,
            objective=c,
            A=A,
            b=np.asarray(self._consts, float),
            cones=list(self.cones),
            lb=np.asarray(self.lb, float),
            ub=np.asarray(self.ub, float),
            var_slices=dict(self.var_slices),
        )


@dataclass
class ConicSolution:
    status: str  # optimal | infeasible | unbounded | numerical_limit
    primal: np.ndarray | None
    objective_value: float
    feasibility_residual: float
    gap: float
    iterations: int = 0
    solve_time: float = 0.0
    backend: str = ""

    def variable(self, program: ConicProgram, name: str) -> np.ndarray:
        lo, hi, shape = program.var_slices[name]
        out = self.primal[lo:hi]
        return out.reshape(shape) if shape else float(out[0])


# ---------------------------------------------------------------------------
# presolve and backends


@dataclass
class _Reduced:
    c: np.ndarray
    A: sp.csr_matrix
    b: np.ndarray
    cones: list
    keep: np.ndarray
    fixed_value: np.ndarray
    const_obj: float
    infeasible: bool = False


def _presolve(p: ConicProgram, tol: float = 1e-9) -> _Reduced:
    fixed = np.isfinite(p.lb) & np.isfinite(p.ub) & (p.lb == p.ub)
    keep = np.flatnonzero(~fixed)
    xf = np.where(fixed, p.lb, 0.0)
    b = p.b - p.A @ xf
    A = p.A[:, keep].tocsr()
    c = p.objective[keep]
    const_obj = float(p.objective @ xf)

    # variable bounds become nonnegative rows
    lb, ub = p.lb[keep], p.ub[keep]
    bound_rows, bound_b = [], []
    n = len(keep)
    eye = sp.identity(n, format="csr")
    has_lb = np.flatnonzero(np.isfinite(lb))
    has_ub = np.flatnonzero(np.isfinite(ub))
    if len(has_lb):
        # x - lb >= 0 is b - A x with A = -I, b = -lb
        bound_rows.append(-eye[has_lb])
        bound_b.append(-lb[has_lb])
    if len(has_ub):
        bound_rows.append(eye[has_ub])
        bound_b.append(ub[has_ub])

    row_nnz = np.diff(A.indptr)
    blocks_A, blocks_b, cones = [], [], []
    infeasible = False
    off = 0
    for cone in p.cones:
        sl = slice(off, off + cone.dim)
        off += cone.dim
        empty = row_nnz[sl] == 0
        if cone.kind in ("zero", "nonneg"):
            if np.any(empty):
                if cone_violation(cone.kind, b[sl][empty]) > tol * (1 + np.max(np.abs(b[sl][empty]))):
                    infeasible = True
            live = np.flatnonzero(~empty) + sl.start
            if len(live):
                blocks_A.append(A[live])
                blocks_b.append(b[live])
                cones.append(Cone(cone.kind, len(live)))
        else:
            if np.all(empty):
                if cone_violation(cone.kind, b[sl]) > tol * (1 + np.max(np.abs(b[sl]))):
                    infeasible = True
                continue
            blocks_A.append(A[sl])
            blocks_b.append(b[sl])
            cones.append(Cone(cone.kind, cone.dim))
    if bound_rows:
        blocks_A.append(sp.vstack(bound_rows))
        blocks_b.append(np.concatenate(bound_b))
        cones.append(Cone("nonneg", sum(len(x) for x in bound_b)))
    A_red = sp.vstack(blocks_A, format="csr") if blocks_A else sp.csr_matrix((0, n))
    b_red = np.concatenate(blocks_b) if blocks_b else np.zeros(0)
    return _Reduced(c, A_red, b_red, cones, keep, xf, const_obj, infeasible)


def _rsoc_to_soc(A: sp.csr_matrix, b: np.ndarray, cones: list):
    """Rewrite rotated blocks ``(u, v, z)`` as ``((u+v)/sqrt2, (u-v)/sqrt2, z)``."""
    if not any(c.kind == "rsoc" for c in cones):
        return A, b, cones
    m = A.shape[0]
    rows, cols, vals = [], [], []
    new_cones = []
    off = 0
    for c in cones:
        if c.kind == "rsoc":
            rows += [off, off, off + 1, off + 1]
            cols += [off, off + 1, off, off + 1]
            vals += [SQRT1_2, SQRT1_2, SQRT1_2, -SQRT1_2]
            for j in range(2, c.dim):
                rows.append(off + j)
                cols.append(off + j)
                vals.append(1.0)
            new_cones.append(Cone("soc", c.dim))
        else:
            for j in range(c.dim):
                rows.append(off + j)
                cols.append(off + j)
                vals.append(1.0)
            new_cones.append(c)
        off += c.dim
    T = sp.csr_matrix((vals, (rows, cols)), shape=(m, m))
    return (T @ A).tocsr(), T @ b, new_cones


def _solve_clarabel(red: _Reduced, tol: float, max_iter: int):
    import clarabel

    A, b, cones = _rsoc_to_soc(red.A, red.b, red.cones)
    cl_cones = []
    for c in cones:
        if c.kind == "zero":
            cl_cones.append(clarabel.ZeroConeT(c.dim))
        elif c.kind == "nonneg":
            cl_cones.append(clarabel.NonnegativeConeT(c.dim))
        else:
            cl_cones.append(clarabel.SecondOrderConeT(c.dim))
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.tol_feas = tol
    settings.tol_gap_abs = tol
    settings.tol_gap_rel = tol
    settings.max_iter = max_iter
    settings.max_threads = 1
    n = len(red.c)
    P = sp.csc_matrix((n, n))
    solver = clarabel.DefaultSolver(P, -red.c, A.tocsc(), b, cl_cones, settings)
    sol = solver.solve()
    status = str(sol.status).split(".")[-1]
    mapping = {
        "Solved": "optimal",
        "PrimalInfeasible": "infeasible",
        "DualInfeasible": "unbounded",
        "AlmostSolved": "numerical_limit",
        "AlmostPrimalInfeasible": "infeasible",
        "AlmostDualInfeasible": "unbounded",
    }
    x = np.asarray(sol.x, float) if sol.x is not None else None
    gap = abs(sol.obj_val - sol.obj_val_dual) / max(1.0, abs(sol.obj_val))
    return mapping.get(status, "numerical_limit"), x, gap, int(sol.iterations)


def _standard_form(red: _Reduced):
    """Rows regrouped as (equality rows, nonnegative rows, SOC rows) with SOC sizes."""
    A, b, cones = _rsoc_to_soc(red.A, red.b, red.cones)
    off = np.cumsum([0] + [c.dim for c in cones])
    pick = lambda kind: [np.arange(off[i], off[i + 1]) for i, c in enumerate(cones) if c.kind == kind]
    cat = lambda rows: np.concatenate(rows).astype(int) if rows else np.zeros(0, dtype=int)
    z, lin, soc = cat(pick("zero")), cat(pick("nonneg")), pick("soc")
    g_idx = np.concatenate([lin, cat(soc)])
    A = A.tocsr()
    return A[z], b[z], A[g_idx], b[g_idx], len(lin), [len(r) for r in soc]


def _solve_cvxopt(red: _Reduced, tol: float, max_iter: int):
    import cvxopt
    from cvxopt import solvers

    Az, bz, G, h, n_lin, soc = _standard_form(red)

    def spm(M):
        M = M.tocoo()
        return cvxopt.spmatrix(M.data.tolist(), M.row.tolist(), M.col.tolist(), size=M.shape)

    dims = {"l": int(n_lin), "q": soc, "s": []}
    kw = {"A": spm(Az), "b": cvxopt.matrix(bz)} if Az.shape[0] else {}
    opts = {"show_progress": False, "abstol": tol, "reltol": tol, "feastol": tol, "maxiters": max_iter}
    try:
        sol = solvers.conelp(cvxopt.matrix(-red.c), spm(G), cvxopt.matrix(h), dims, options=opts, **kw)
    except (ValueError, ArithmeticError):
        # conelp raises on programs without a strictly feasible point
        return "numerical_limit", None, float("nan"), 0
    status = {"optimal": "optimal", "primal infeasible": "infeasible", "dual infeasible": "unbounded"}.get(
        sol["status"], "numerical_limit"
    )
    x = np.asarray(sol["x"]).ravel() if sol["x"] is not None else None
    gap = float(sol.get("relative gap") or 0.0) if status == "optimal" else float("nan")
    return status, x, gap, int(sol.get("iterations", 0))


def _solve_ecos(red: _Reduced, tol: float, max_iter: int):
    import ecos

    Az, bz, G, h, n_lin, soc = _standard_form(red)
    kw = {"A": Az.tocsc(), "b": bz} if Az.shape[0] else {}
    sol = ecos.solve(
        -red.c, G.tocsc(), h, {"l": int(n_lin), "q": soc}, verbose=False,
        abstol=tol, reltol=tol, feastol=tol, max_iters=max_iter, **kw,
    )
    info = sol["info"]
    status = {0: "optimal", 1: "infeasible", 2: "unbounded"}.get(info["exitFlag"], "numerical_limit")
    gap = float(info.get("relgap", np.nan))
    return status, np.asarray(sol["x"], float), gap, int(info["iter"])


_BACKENDS = {"clarabel": _solve_clarabel, "cvxopt": _solve_cvxopt, "ecos": _solve_ecos}


def solve(program: ConicProgram, backend: str = "clarabel", tol: float = 1e-9, max_iter: int = 200) -> ConicSolution:
    """Solve ``program`` with the chosen backend (``clarabel``, ``cvxopt`` or ``ecos``)."""
    t0 = time.perf_counter()
    red = _presolve(program)
    if red.infeasible:
        return ConicSolution("infeasible", None, float("nan"), float("inf"), float("nan"), backend=backend)
    status, xr, gap, iters = _BACKENDS[backend](red, tol, max_iter)
    x = None
    obj = float("nan")
    resid = float("inf")
    if xr is not None and np.all(np.isfinite(xr)):
        x = red.fixed_value.copy()
        x[red.keep] = xr
        obj = float(program.objective @ x)
        resid = program.scaled_violation(x)
    return ConicSolution(status, x, obj, resid, gap, iters, time.perf_counter() - t0, backend)


# ---------------------------------------------------------------------------
# debug dump


def dump_program(program: ConicProgram, path) -> None:
    """Write the program as JSON (gzip when the name ends in ``.gz``).

    Keys: ``n_vars``, ``objective`` (maximize), ``A`` as COO triplets
    ``{"row", "col", "val", "shape"}``, ``b``, ``cones`` as
    ``[[kind, dim], ...]`` in row order, ``lb``/``ub`` (null = unbounded)
    and ``var_slices``. Rows satisfy ``b - A x`` in the listed cones.
    """
    A = program.A.tocoo()

    def opt(arr):
        return [None if not np.isfinite(v) else float(v) for v in arr]

    doc = {
        "format": "conic-program/1",
        "n_vars": program.n_vars,
        "objective": program.objective.tolist(),
        "A": {"row": A.row.tolist(), "col": A.col.tolist(), "val": A.data.tolist(), "shape": list(A.shape)},
        "b": program.b.tolist(),
        "cones": [[c.kind, c.dim] for c in program.cones],
        "lb": opt(program.lb),
        "ub": opt(program.ub),
        "var_slices": {k: [int(v[0]), int(v[1]), list(v[2])] for k, v in program.var_slices.items()},
    }
    text = json.dumps(doc)
    path = Path(path)
    if path.suffix == ".gz":
        with gzip.open(path, "wt") as fh:
            fh.write(text)
    else:
        path.write_text(text)


def load_program(path) -> ConicProgram:
    path = Path(path)
    if path.suffix == ".gz":
        with gzip.open(path, "rt") as fh:
            doc = json.load(fh)
    else:
        doc = json.loads(path.read_text())
    a = doc["A"]
    A = sp.csr_matrix((a["val"], (a["row"], a["col"])), shape=tuple(a["shape"]))
    return ConicProgram(
        n_vars=doc["n_vars"],
        objective=np.asarray(doc["objective"], float),
        A=A,
        b=np.asarray(doc["b"], float),
        cones=[Cone(k, d) for k, d in doc["cones"]],
        lb=np.array([-np.inf if v is None else v for v in doc["lb"]], float),
        ub=np.array([np.inf if v is None else v for v in doc["ub"]], float),
        var_slices={k: (v[0], v[1], tuple(v[2])) for k, v in doc["var_slices"].items()},
    )
