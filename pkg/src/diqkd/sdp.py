"""Small dense semidefinite programs.

Problems are stated in the equality form

    maximize    sum_k <C_k, X_k>
    subject to  sum_k <A_ik, X_k> = b_i      for every constraint i
                X_k >= 0   (or  S_k - X_k >= 0 for blocks with a shift S_k)

with the dual

    minimize    b^T y   s.t.   sum_i y_i A_ik - C_k >= 0.

Linear functionals are dicts ``{(block, i, j): coeff}`` over the upper
triangle; an off-diagonal coefficient multiplies the single entry X_ij
(= X_ji), not the pair.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import scipy.linalg as sla
from scipy import sparse

from . import kernels

log = logging.getLogger(__name__)

Entry = tuple[int, int, int]
Functional = dict[Entry, float]

DEFAULT_TOL = 1e-8
DEFAULT_PSD_TOL = 1e-9


class SdpError(RuntimeError):
    pass


def _normalize(f: dict, blocks: list[int]) -> Functional:
    out: Functional = {}
    for (k, i, j), c in f.items():
        if not (0 <= k < len(blocks)):
            raise SdpError(f"functional references missing block {k}")
        n = blocks[k]
        if not (0 <= i < n and 0 <= j < n):
            raise SdpError(f"entry ({i},{j}) outside block {k} of size {n}")
        key = (int(k), int(min(i, j)), int(max(i, j)))
        out[key] = out.get(key, 0.0) + float(c)
    return {e: c for e, c in out.items() if c != 0.0}


@dataclass
class SdpProblem:
    blocks: list[int]
    objective: Functional
    constraints: list[tuple[Functional, float]]
    psd_shifts: dict[int, np.ndarray] = field(default_factory=dict)
    labels: list[Any] | None = None

    def __post_init__(self) -> None:
        self.blocks = [int(n) for n in self.blocks]
        if any(n < 1 for n in self.blocks):
            raise SdpError("block dimensions must be positive")
        self.objective = _normalize(self.objective, self.blocks)
        self.constraints = [(_normalize(f, self.blocks), float(r)) for f, r in self.constraints]
        shifts = {}
        for k, s in self.psd_shifts.items():
            s = np.asarray(s, dtype=float)
            if s.shape != (self.blocks[k],) * 2 or not np.allclose(s, s.T):
                raise SdpError(f"shift for block {k} must be symmetric of size {self.blocks[k]}")
            shifts[int(k)] = s
        self.psd_shifts = shifts
        if self.labels is not None and len(self.labels) != len(self.constraints):
            raise SdpError("one label per constraint required")

    @property
    def n_constraints(self) -> int:
        return len(self.constraints)

    def to_dict(self) -> dict:
        return {
            "blocks": self.blocks,
            "objective": [[k, i, j, c] for (k, i, j), c in sorted(self.objective.items())],
            "constraints": [[[[k, i, j, c] for (k, i, j), c in sorted(f.items())], r] for f, r in self.constraints],
            "psd_shifts": {str(k): s.tolist() for k, s in sorted(self.psd_shifts.items())},
            "labels": None if self.labels is None else [list(l) if isinstance(l, tuple) else l for l in self.labels],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SdpProblem":
        return cls(
            blocks=d["blocks"],
            objective={(k, i, j): c for k, i, j, c in d["objective"]},
            constraints=[({(k, i, j): c for k, i, j, c in f}, r) for f, r in d["constraints"]],
            psd_shifts={int(k): np.array(s) for k, s in d.get("psd_shifts", {}).items()},
            labels=d.get("labels"),
        )


@dataclass
class SdpSolution:
    status: str
    primal_blocks: list[np.ndarray]
    dual_multipliers: np.ndarray
    primal_value: float
    dual_value: float
    gap: float
    min_eigenvalues: list[float]
    residuals: dict[str, float]
    iterations: int
    dual_slack_min_eigenvalues: list[float] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.status == "optimal"

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "primal_blocks": [x.tolist() for x in self.primal_blocks],
            "dual_multipliers": self.dual_multipliers.tolist(),
            "primal_value": self.primal_value,
            "dual_value": self.dual_value,
            "gap": self.gap,
            "min_eigenvalues": self.min_eigenvalues,
            "dual_slack_min_eigenvalues": self.dual_slack_min_eigenvalues,
            "residuals": self.residuals,
            "iterations": self.iterations,
        }


def dump_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj.to_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")


class _Compiled:
    """Problem in all-PSD form with sparse row-major vectorized operators."""

    def __init__(self, p: SdpProblem):
        self.blocks = p.blocks
        self.offsets = np.concatenate([[0], np.cumsum([n * n for n in p.blocks])]).astype(np.int64)
        self.N = int(self.offsets[-1])
        sign = np.ones(len(p.blocks))
        for k in p.psd_shifts:
            sign[k] = -1.0
        self.sign = sign
        rows, cols, vals = [], [], []
        for r, (f, _) in enumerate(p.constraints):
            for (k, i, j), c in f.items():
                for col, v in self._entries(k, i, j, c * sign[k]):
                    rows.append(r)
                    cols.append(col)
                    vals.append(v)
        m = len(p.constraints)
        self.A = sparse.csr_matrix((vals, (rows, cols)), shape=(m, self.N))
        self.A.sum_duplicates()
        c = np.zeros(self.N)
        for (k, i, j), v in p.objective.items():
            for col, w in self._entries(k, i, j, v * sign[k]):
                c[col] += w
        self.c = c
        b = np.array([r for _, r in p.constraints], dtype=float)
        const = 0.0
        for k, s in p.psd_shifts.items():
            sv = s.ravel()
            sl = slice(self.offsets[k], self.offsets[k + 1])
            # rows/objective were negated for this block: <A, S - Y> = <A, S> - <A, Y>
            b -= -(self.A[:, sl] @ sv)
            const += -(c[sl] @ sv)
        self.b = b
        self.const = const
        self.shifts = p.psd_shifts

    def _entries(self, k, i, j, c):
        n = self.blocks[k]
        off = self.offsets[k]
        if i == j:
            return [(off + i * n + i, c)]
        return [(off + i * n + j, c / 2), (off + j * n + i, c / 2)]

    def split(self, v: np.ndarray) -> list[np.ndarray]:
        return [v[self.offsets[k]:self.offsets[k + 1]].reshape(n, n) for k, n in enumerate(self.blocks)]

    @staticmethod
    def join(mats) -> np.ndarray:
        return np.concatenate([m.ravel() for m in mats])


def _independent_rows(A: sparse.csr_matrix, b: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Indices of a maximal independent subset of rows (column-pivoted QR of A^T)."""
    m, N = A.shape
    if m == 0:
        return np.arange(0)
    if m * N > 6e7:
        log.warning("skipping dependency check for %d x %d operator", m, N)
        return np.arange(m)
    dense = A.toarray()
    R, piv = sla.qr(dense.T, mode="r", pivoting=True)
    d = np.abs(np.diag(R))
    scale = max(1.0, float(d.max(initial=0.0)))
    rank = int(np.sum(d > tol * scale))
    keep = np.sort(piv[:rank])
    drop = np.setdiff1d(np.arange(m), keep)
    if len(drop):
        coef, *_ = np.linalg.lstsq(dense[keep].T, dense[drop].T, rcond=None)
        mismatch = np.abs(coef.T @ b[keep] - b[drop]).max()
        if mismatch > 1e-7 * (1 + np.abs(b).max()):
            raise SdpError(f"inconsistent equality constraints (mismatch {mismatch:.2e}); problem infeasible")
    return keep


def _max_step(X: np.ndarray, D: np.ndarray) -> float:
    L = np.linalg.cholesky(X)
    Li = sla.solve_triangular(L, np.eye(len(X)), lower=True)
    S = Li @ D @ Li.T
    lam = np.linalg.eigvalsh((S + S.T) / 2)[0]
    return math.inf if lam >= 0 else -1.0 / lam


def _schur(cp: _Compiled, A: sparse.csr_matrix, X: list[np.ndarray], W: list[np.ndarray]) -> np.ndarray:
    m = A.shape[0]
    M = np.zeros((m, m))
    for k, n in enumerate(cp.blocks):
        sub = A[:, cp.offsets[k]:cp.offsets[k + 1]].tocsr()
        active = np.flatnonzero(np.diff(sub.indptr))
        if len(active) == 0:
            continue
        sub = sub[active].tocsr()
        sub.sort_indices()
        ia = (sub.indices // n).astype(np.int64)
        ja = (sub.indices % n).astype(np.int64)
        Mk = np.zeros((len(active), len(active)))
        kernels.schur_block(sub.indptr.astype(np.int64), ia, ja, sub.data.astype(float),
                            np.ascontiguousarray(X[k]), np.ascontiguousarray(W[k]), Mk)
        M[np.ix_(active, active)] += Mk
    return M


def _factor(M: np.ndarray):
    if len(M) == 0:
        return lambda r: np.zeros(0)
    try:
        chol = sla.cho_factor(M, lower=True)
        return lambda r: sla.cho_solve(chol, r)
    except np.linalg.LinAlgError:
        reg = 1e-14 * max(1.0, np.trace(M) / len(M))
        lu = sla.lu_factor(M + reg * np.eye(len(M)))
        return lambda r: sla.lu_solve(lu, r)


def solve(p: SdpProblem, tol: float = DEFAULT_TOL, max_iter: int = 100,
          feas_tol: float | None = None) -> SdpSolution:
    """Primal-dual path following (HKM direction, Mehrotra predictor-corrector)."""
    feas_tol = tol if feas_tol is None else feas_tol
    cp = _Compiled(p)
    keep = _independent_rows(cp.A, cp.b)
    A = cp.A[keep]
    b = cp.b[keep]
    AT = A.T.tocsr()
    cmin = -cp.c  # minimize <cmin, X>
    n_tot = sum(cp.blocks)

    norm_b = np.linalg.norm(b)
    norm_c = np.linalg.norm(cmin)
    row_norms = np.sqrt(np.asarray(A.multiply(A).sum(axis=1)).ravel()) if A.shape[0] else np.zeros(0)
    X, Z = [], []
    for k, n in enumerate(cp.blocks):
        sub = A[:, cp.offsets[k]:cp.offsets[k + 1]]
        sub_norms = np.sqrt(np.asarray(sub.multiply(sub).sum(axis=1)).ravel()) if A.shape[0] else np.zeros(0)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(sub_norms > 0, (1 + np.abs(b)) / (1 + sub_norms), 0.0)
        xi = max(10.0, math.sqrt(n), n * float(ratio.max(initial=0.0)))
        ck = np.linalg.norm(cmin[cp.offsets[k]:cp.offsets[k + 1]])
        eta = max(10.0, math.sqrt(n), ck, float(sub_norms.max(initial=0.0)))
        X.append(xi * np.eye(n))
        Z.append(eta * np.eye(n))
    y = np.zeros(A.shape[0])

    status = "max_iterations"
    it = 0
    stall = 0
    best = None  # (merit, X, Z, y, it)
    since_best = 0
    for it in range(1, max_iter + 1):
        x = cp.join(X)
        z = cp.join(Z)
        rp = b - A @ x
        rd = cmin - z - AT @ y
        pobj = cmin @ x
        dobj = b @ y
        mu = (x @ z) / n_tot
        rel_gap = abs(pobj - dobj) / (1 + abs(pobj) + abs(dobj))
        pinf = np.linalg.norm(rp) / (1 + norm_b)
        dinf = np.linalg.norm(rd) / (1 + norm_c)
        log.debug("it %d pobj %.12g dobj %.12g gap %.2e pinf %.2e dinf %.2e mu %.2e", it, -pobj, -dobj, rel_gap, pinf, dinf, mu)
        merit = max(rel_gap / tol, pinf / feas_tol, dinf / feas_tol)
        if best is None or merit < best[0]:
            best = (merit, X, Z, y, it)
            since_best = 0
        else:
            since_best += 1
        if merit <= 1.0:
            status = "optimal"
            break
        if since_best >= 5:
            # rounding noise dominates; fall back to the best iterate seen
            status = "stalled"
            break
        try:
            W = []
            for Zk in Z:
                Lz = np.linalg.cholesky(Zk)
                Li = sla.solve_triangular(Lz, np.eye(len(Zk)), lower=True)
                W.append(Li.T @ Li)
            solve_M = _factor(_schur(cp, A, X, W))
            Rd = cp.split(rd)
            XRdW = cp.join([Xk @ Rk @ Wk for Xk, Rk, Wk in zip(X, Rd, W)])
            base_rhs = rp + A @ XRdW

            def direction(G):
                rhs = base_rhs - A @ cp.join(G)
                dy = solve_M(rhs)
                dZ = cp.split(rd - AT @ dy)
                dX = []
                for Gk, Xk, dZk, Wk in zip(G, X, dZ, W):
                    d = Gk - Xk @ dZk @ Wk
                    dX.append((d + d.T) / 2)
                return dX, dy, dZ

            dXa, dya, dZa = direction([-Xk for Xk in X])
            ap = min(1.0, min(_max_step(Xk, Dk) for Xk, Dk in zip(X, dXa)))
            ad = min(1.0, min(_max_step(Zk, Dk) for Zk, Dk in zip(Z, dZa)))
            mu_aff = sum(np.sum((Xk + ap * dXk) * (Zk + ad * dZk))
                         for Xk, dXk, Zk, dZk in zip(X, dXa, Z, dZa)) / n_tot
            sigma = min(1.0, max(0.0, mu_aff / mu)) ** 3
            G = [sigma * mu * Wk - Xk - dXk @ dZk @ Wk for Wk, Xk, dXk, dZk in zip(W, X, dXa, dZa)]
            dX, dy, dZ = direction(G)
            gamma = 0.9 + 0.09 * min(ap, ad)
            ap = min(1.0, gamma * min(_max_step(Xk, Dk) for Xk, Dk in zip(X, dX)))
            ad = min(1.0, gamma * min(_max_step(Zk, Dk) for Zk, Dk in zip(Z, dZ)))
        except (np.linalg.LinAlgError, sla.LinAlgError):
            status = "stalled"
            break
        X = [Xk + ap * Dk for Xk, Dk in zip(X, dX)]
        Z = [Zk + ad * Dk for Zk, Dk in zip(Z, dZ)]
        y = y + ad * dy
        stall = stall + 1 if max(ap, ad) < 1e-6 else 0
        if stall >= 3:
            status = "stalled"
            break
        if not all(np.all(np.isfinite(Xk)) for Xk in X + Z):
            status = "numerical_error"
            break
    n_iter = it
    if status != "optimal" and best is not None:
        _, X, Z, y, _ = best

    x = cp.join(X)
    z = cp.join(Z)
    y_full = np.zeros(cp.A.shape[0])
    y_full[keep] = -y  # back to the max-form sign convention
    primal_value = float(-(cmin @ x) + cp.const)
    dual_value = float(cp.b @ y_full + cp.const)
    primal_blocks = []
    for k, Xk in enumerate(X):
        primal_blocks.append(cp.shifts[k] - Xk if k in cp.shifts else Xk.copy())
    resid_p = cp.b - cp.A @ x
    resid_d = cp.split(cp.A.T @ y_full - cp.c)
    sol = SdpSolution(
        status=status,
        primal_blocks=primal_blocks,
        dual_multipliers=y_full,
        primal_value=primal_value,
        dual_value=dual_value,
        gap=abs(primal_value - dual_value),
        min_eigenvalues=[float(np.linalg.eigvalsh(Xk)[0]) for Xk in X],
        residuals={
            "primal": float(np.abs(resid_p).max(initial=0.0)),
            "dual": float(np.abs(cmin - z - AT @ y).max(initial=0.0)),
            "dropped_rows": int(cp.A.shape[0] - len(keep)),
        },
        iterations=n_iter,
        dual_slack_min_eigenvalues=[float(np.linalg.eigvalsh((Sk + Sk.T) / 2)[0]) for Sk in resid_d],
    )
    log.debug("sdp %s after %d iterations: p=%.10g d=%.10g", status, it, primal_value, dual_value)
    return sol


@dataclass
class DualCheck:
    bound: float
    min_eigenvalues: list[float]
    margin: float
    feasible: bool

    @property
    def min_eigenvalue(self) -> float:
        return min(self.min_eigenvalues)


def verify_dual_certificate(p: SdpProblem, multipliers, margin: float = DEFAULT_PSD_TOL) -> DualCheck:
    """Recompute the dual slack for ``multipliers`` and check it is PSD.

    Returns the dual objective, which bounds the primal maximum whenever
    every slack block has minimum eigenvalue >= -margin. Only the problem
    data and the multipliers are used.
    """
    y = np.asarray(multipliers, dtype=float)
    if y.shape != (p.n_constraints,):
        raise SdpError(f"expected {p.n_constraints} multipliers, got shape {y.shape}")
    cp = _Compiled(p)
    slack = cp.split(cp.A.T @ y - cp.c)
    eigs = [float(np.linalg.eigvalsh((S + S.T) / 2)[0]) for S in slack]
    bound = float(cp.b @ y + cp.const)
    return DualCheck(bound=bound, min_eigenvalues=eigs, margin=margin, feasible=min(eigs) >= -margin)


# -- facial reduction ---------------------------------------------------------
#
# When every feasible point is singular the dual optimum is not attained and
# path following stalls short of the optimum. If a basis V of the common range
# of the feasible blocks is known, the problem restricted to X_k = V_k G_k V_k^T
# is well posed. Its multipliers are turned into a certificate for the full
# problem by adding a large multiple of an exposing direction (a dual ray whose
# slack is PSD, vanishes on V, and leaves b.y unchanged).


def functional_matrices(f: Functional, blocks: list[int]) -> list[np.ndarray]:
    """Symmetric matrices A_k with f(X) = sum_k <A_k, X_k>."""
    mats = [np.zeros((n, n)) for n in blocks]
    for (k, i, j), c in f.items():
        if i == j:
            mats[k][i, i] += c
        else:
            mats[k][i, j] += c / 2
            mats[k][j, i] += c / 2
    return mats


def matrices_functional(mats, offset: int = 0, drop: float = 0.0) -> Functional:
    out: Functional = {}
    for k, M in enumerate(mats):
        iu, ju = np.triu_indices(len(M))
        vals = np.where(iu == ju, M[iu, ju], 2 * M[iu, ju])
        for i, j, v in zip(iu, ju, vals):
            if abs(v) > drop:
                out[(k + offset, int(i), int(j))] = float(v)
    return out


def restrict_problem(p: SdpProblem, bases: list[np.ndarray], shift: float = 0.0) -> SdpProblem:
    """Substitute X_k = V_k G_k V_k^T; ``shift`` adds shift*tr(X) to the objective."""
    if p.psd_shifts:
        raise SdpError("facial reduction does not support shifted blocks")
    obj = functional_matrices(p.objective, p.blocks)
    obj = [V.T @ (C + shift * np.eye(len(C))) @ V for C, V in zip(obj, bases)]
    cons = []
    for f, r in p.constraints:
        mats = functional_matrices(f, p.blocks)
        cons.append((matrices_functional([V.T @ A @ V for A, V in zip(mats, bases)], drop=1e-15), r))
    return SdpProblem([V.shape[1] for V in bases], matrices_functional(obj), cons, labels=p.labels)


def exposing_direction(p: SdpProblem, tol: float = 1e-10, offset: float = 10.0) -> tuple[np.ndarray, float]:
    """Multipliers y with A^T y PSD, sum of traces 1, minimizing b.y.

    Solves max t s.t. A(X + tI) = b, X PSD. The optimal t is the largest
    smallest eigenvalue over feasible points; t <= 0 means no strictly
    feasible point and the returned y exposes the face containing the
    feasible set.
    """
    nb = len(p.blocks)
    cons = []
    for f, r in p.constraints:
        a = sum(c for (k, i, j), c in f.items() if i == j)
        g = dict(f)
        if a:
            g[(nb, 0, 0)] = a
        cons.append((g, r + offset * a))
    aux = SdpProblem(p.blocks + [1], {(nb, 0, 0): 1.0}, cons)
    sol = solve(aux, tol=tol)
    return sol.dual_multipliers, sol.primal_value - offset


def _nullspace(M: np.ndarray, rtol: float = 1e-10) -> np.ndarray:
    if M.shape[0] == 0:
        return np.eye(M.shape[1])
    _, sv, vt = np.linalg.svd(M)
    rank = int(np.sum(sv > rtol * sv[0])) if len(sv) else 0
    return vt[rank:].T


@dataclass
class FaceLift:
    """Linear maps onto the face blocks, shared by every lift of one problem."""

    problem: SdpProblem
    bases: list[np.ndarray]
    complements: list[np.ndarray]
    A: list[list[np.ndarray]]  # per constraint, per block
    C: list[np.ndarray]
    b: np.ndarray
    null_vv: np.ndarray  # directions with zero slack on the face and b.y = 0
    vk: np.ndarray  # cross-term map restricted to null_vv
    exposing: np.ndarray | None

    @classmethod
    def build(cls, p: SdpProblem, bases: list[np.ndarray], ray: np.ndarray) -> "FaceLift":
        A = [functional_matrices(f, p.blocks) for f, _ in p.constraints]
        C = functional_matrices(p.objective, p.blocks)
        b = np.array([r for _, r in p.constraints], dtype=float)
        comps = []
        for V in bases:
            n, r = V.shape
            full = np.linalg.qr(np.hstack([V, np.eye(n)]))[0]
            comps.append(full[:, r:n])
        vv_rows, vk_rows, kk_rows = [], [], []
        for k, (V, K) in enumerate(zip(bases, comps)):
            r, q = V.shape[1], K.shape[1]
            iu = np.triu_indices(r)
            iq = np.triu_indices(q)
            vv_rows.append(np.array([(V.T @ a[k] @ V)[iu] for a in A]).T)
            vk_rows.append(np.array([(V.T @ a[k] @ K).ravel() for a in A]).T)
            kk_rows.append(np.array([(K.T @ a[k] @ K)[iq] for a in A]).T)
        VV = np.vstack(vv_rows + [b[None, :]])
        VK = np.vstack(vk_rows)
        N0 = _nullspace(VV)
        lift = cls(p, bases, comps, A, C, b, N0, VK @ N0, None)
        N = N0 @ _nullspace(VK @ N0)
        e = N @ (N.T @ ray)
        E = lift.slack(e, homogeneous=True)
        if all(K.shape[1] == 0 or np.linalg.eigvalsh(K.T @ Ek @ K)[0] > 0 for Ek, K in zip(E, comps)):
            lift.exposing = e
        return lift

    def slack(self, y: np.ndarray, homogeneous: bool = False) -> list[np.ndarray]:
        out = []
        for k in range(len(self.C)):
            S = sum(yi * a[k] for yi, a in zip(y, self.A) if yi != 0.0)
            S = S if not np.isscalar(S) else np.zeros_like(self.C[k])
            out.append(S if homogeneous else S - self.C[k])
        return out

    def lift(self, y_face: np.ndarray) -> np.ndarray | None:
        """Full-problem multipliers from face multipliers, or None."""
        if self.exposing is None:
            return None
        S = self.slack(y_face)
        cross = np.concatenate([(V.T @ Sk @ K).ravel() for Sk, V, K in zip(S, self.bases, self.complements)])
        if len(cross) and self.vk.size:
            c = np.linalg.lstsq(self.vk, -cross, rcond=None)[0]
            y = y_face + self.null_vv @ c
        else:
            y = y_face.copy()
        S = self.slack(y)
        E = self.slack(self.exposing, homogeneous=True)
        t = 0.0
        for Sk, Ek, V, K in zip(S, E, self.bases, self.complements):
            if K.shape[1] == 0:
                continue
            Svv = V.T @ Sk @ V
            if np.linalg.eigvalsh(Svv)[0] <= 0:
                return None
            B = V.T @ Sk @ K
            Q = B.T @ np.linalg.solve(Svv, B) - K.T @ Sk @ K
            t = max(t, float(sla.eigvalsh((Q + Q.T) / 2, K.T @ Ek @ K)[-1]))
        return y + (1.01 * t + 1e-12) * self.exposing


def solve_on_face(p: SdpProblem, bases: list[np.ndarray], ray: np.ndarray,
                  shifts=(1e-8, 3e-8, 1e-7, 2e-7, 3e-7, 1e-6, 1e-5), tol: float = DEFAULT_TOL,
                  margin: float = DEFAULT_PSD_TOL) -> SdpSolution | None:
    """Solve ``p`` restricted to the face spanned by ``bases`` and lift the dual.

    Each restricted solve perturbs the objective by ``shift * tr(X)`` so its
    slack is positive definite on the face; larger shifts need a smaller
    multiple of the exposing direction (less rounding) but cost about
    ``shift * tr(X)`` in the bound. The tightest lift whose slack is positive
    definite by at least ``margin / 5`` is returned, or None when no shift
    works. Insisting on a positive eigenvalue keeps the choice away from the
    acceptance edge, where last-bit BLAS differences between runs would
    otherwise flip it.
    """
    lift = FaceLift.build(p, bases, ray)
    if lift.exposing is None:
        log.debug("face lift: no exposing direction on the given face")
        return None
    best = None
    for shift in shifts:
        red = restrict_problem(p, bases, shift)
        try:
            rs = solve(red, tol=tol)
        except SdpError as exc:
            log.debug("face solve failed at shift %g: %s", shift, exc)
            continue
        y = lift.lift(rs.dual_multipliers)
        if y is None:
            continue
        check = verify_dual_certificate(p, y, margin=margin)
        log.debug("face shift %g: bound %.12g min eig %.2e", shift, check.bound, check.min_eigenvalue)
        if not check.feasible or check.min_eigenvalue < 0.2 * margin:
            continue
        if best is None or check.bound < best[0].bound:
            best = (check, rs, y, shift)
    if best is None:
        return None
    check, rs, y, shift = best
    X = [V @ G @ V.T for V, G in zip(bases, rs.primal_blocks)]
    cp = _Compiled(p)
    x = cp.join(X)
    primal_value = float(cp.c @ x + cp.const)
    return SdpSolution(
        status="optimal" if rs.status == "optimal" else rs.status,
        primal_blocks=X,
        dual_multipliers=y,
        primal_value=primal_value,
        dual_value=check.bound,
        gap=abs(check.bound - primal_value),
        min_eigenvalues=[float(np.linalg.eigvalsh(Xk)[0]) for Xk in X],
        residuals={
            "primal": float(np.abs(cp.b - cp.A @ x).max(initial=0.0)),
            "dual": 0.0,
            "dropped_rows": rs.residuals.get("dropped_rows", 0),
            "face_rank": [V.shape[1] for V in bases],
            "face_shift": shift,
        },
        iterations=rs.iterations,
        dual_slack_min_eigenvalues=check.min_eigenvalues,
    )
