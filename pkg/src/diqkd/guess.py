"""Guessing-probability and bit distance-from-uniform programs.

Both programs are stated over moment matrices built from the words of
:mod:`diqkd.npa`. Before handing them to the solver, the last outcome of
every measurement is eliminated through completeness (``E^last = 1 - sum of
the others``). With all outcomes kept, the moment matrix always has the
kernel vector ``e_identity - sum_x e_{E^x}`` and the programs have no
strictly feasible point, which stalls interior-point methods and lets the
dual multipliers diverge. The reduced matrix spans the same operator space,
so the optimum is unchanged.

The observed statistics enter through the Collins-Gisin coordinates
(normalization, Alice and Bob marginals, joint probabilities without last
outcomes). Their multipliers are mapped back onto a vector ``lambda`` over
the full table ``(u, v, x, y)`` so that the certified bound is the plain
inner product ``P . lambda``.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any

import numpy as np
from scipy.optimize import least_squares

from . import npa
from .behavior import Alphabets, Behavior
from .sdp import (
    DEFAULT_TOL,
    SdpError,
    SdpProblem,
    SdpSolution,
    exposing_direction,
    solve,
    solve_on_face,
    verify_dual_certificate,
)

log = logging.getLogger(__name__)

CERT_MARGIN = 1e-8
CLAMP_SLACK = 1e-6
# gaps above this (relative) send the solve through facial reduction
FACE_TRIGGER = 1e-6


class GuessError(RuntimeError):
    pass


@dataclass(frozen=True)
class KeyFunction:
    """Map ``f`` from Alice's outcome on input ``u`` to a value in ``range(range_size)``."""

    u: int
    mapping: tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "mapping", tuple(int(z) for z in self.mapping))
        if not self.mapping:
            raise GuessError("key function needs at least one outcome")
        if min(self.mapping) < 0:
            raise GuessError("key function values must be non-negative")

    @property
    def range_size(self) -> int:
        return max(self.mapping) + 1 if self.mapping else 0

    @classmethod
    def identity(cls, u: int = 0, nx: int = 2) -> "KeyFunction":
        return cls(u, tuple(range(nx)))

    def to_dict(self) -> dict:
        return {"party": "alice", "u": self.u, "mapping": list(self.mapping)}

    @classmethod
    def from_dict(cls, d: dict) -> "KeyFunction":
        return cls(int(d["u"]), tuple(d["mapping"]))


def behavior_hash(b: Behavior) -> str:
    blob = json.dumps([b.alphabets.to_dict(), np.round(b.table, 15).tolist()], separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class DualCertificate:
    """Linear bound ``P . lambda`` valid for every quantum behavior.

    For ``kind == "distance"`` the certified quantity is half the inner
    product (distance from uniform of a bit).
    """

    alphabets: Alphabets
    level: Any
    lam: np.ndarray
    kind: str = "guess"
    target: KeyFunction | None = None
    bound_at_origin: float = float("nan")
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.lam = np.asarray(self.lam, dtype=float).reshape(self.alphabets.shape)
        if self.kind not in ("guess", "distance"):
            raise GuessError(f"unknown certificate kind {self.kind!r}")

    @property
    def l1_norm(self) -> float:
        return float(np.abs(self.lam).sum())

    @property
    def scale(self) -> float:
        return 0.5 if self.kind == "distance" else 1.0

    def inner(self, b: Behavior) -> float:
        if b.alphabets != self.alphabets:
            raise GuessError(f"certificate alphabets {self.alphabets} do not match behavior {b.alphabets}")
        return float(np.sum(b.table * self.lam))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "level": self.level,
            "alphabets": self.alphabets.to_dict(),
            "index_order": "u,v,x,y",
            "lambda": self.lam.ravel().tolist(),
            "l1_norm": self.l1_norm,
            "target": None if self.target is None else self.target.to_dict(),
            "bound_at_origin": self.bound_at_origin,
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DualCertificate":
        return cls(
            alphabets=Alphabets.from_dict(d["alphabets"]),
            level=npa.normalize_level(d["level"]),
            lam=np.array(d["lambda"], dtype=float),
            kind=d.get("kind", "guess"),
            target=None if d.get("target") is None else KeyFunction.from_dict(d["target"]),
            bound_at_origin=float(d.get("bound_at_origin", float("nan"))),
            meta=dict(d.get("meta", {})),
        )


def evaluate_certificate(c: DualCertificate, b: Behavior) -> float:
    """Certified bound of ``c`` at behavior ``b``."""
    return c.scale * c.inner(b)


@dataclass
class GuessBound:
    p_guess: float
    certificate: DualCertificate
    level: Any
    diagnostics: dict = field(default_factory=dict)
    multipliers: np.ndarray | None = None  # full dual vector of the built program

    @property
    def min_entropy(self) -> float:
        return -math.log2(self.p_guess)


@dataclass
class DistanceBound:
    distance: float
    certificate: DualCertificate
    level: Any
    diagnostics: dict = field(default_factory=dict)
    multipliers: np.ndarray | None = None


@dataclass(frozen=True)
class _Pins:
    """Collins-Gisin coordinates as linear maps of the full table."""

    labels: tuple
    classes: tuple[int, ...]
    matrix: np.ndarray  # (n_pins, table size)


@lru_cache(maxsize=32)
def reduced_structure(alphabets: Alphabets, level) -> npa.NpaStructure:
    return npa.npa_structure(alphabets, npa.normalize_level(level), drop_last=True)


@lru_cache(maxsize=32)
def _pins(alphabets: Alphabets, level) -> _Pins:
    s = reduced_structure(alphabets, level)
    a = alphabets
    shape = a.shape
    labels, classes, rows = [], [], []

    def add(label, word, weights):
        labels.append(label)
        classes.append(s.class_of_word(word))
        rows.append(weights.ravel())

    add(("norm",), (), np.full(shape, 1.0 / (a.nu * a.nv)))
    for u in range(a.nu):
        for x in range(a.nx - 1):
            w = np.zeros(shape)
            w[u, :, x, :] = 1.0 / a.nv
            add(("A", u, x), ((npa.ALICE, u, x),), w)
    for v in range(a.nv):
        for y in range(a.ny - 1):
            w = np.zeros(shape)
            w[:, v, :, y] = 1.0 / a.nu
            add(("B", v, y), ((npa.BOB, v, y),), w)
    for u in range(a.nu):
        for v in range(a.nv):
            for x in range(a.nx - 1):
                for y in range(a.ny - 1):
                    w = np.zeros(shape)
                    w[u, v, x, y] = 1.0
                    add(("AB", u, v, x, y), ((npa.ALICE, u, x), (npa.BOB, v, y)), w)
    if len(set(classes)) != len(classes):
        raise GuessError("observable coordinates must map to distinct moments")
    return _Pins(tuple(labels), tuple(classes), np.array(rows))


def _check(b: Behavior, f: KeyFunction, level) -> None:
    a = b.alphabets
    if f.range_size < 1:
        raise GuessError("empty key range")
    if len(f.mapping) != a.nx:
        raise GuessError(f"key function covers {len(f.mapping)} outcomes, behavior has {a.nx}")
    if not (0 <= f.u < a.nu):
        raise GuessError(f"key input {f.u} out of range")
    npa.normalize_level(level)


def _structure_rows(s: npa.NpaStructure, block: int):
    """Equality-class and zero constraints on one block, with labels."""
    rows = []
    for c, members in enumerate(s.class_members()):
        i0, j0 = members[0]
        for i, j in members[1:]:
            rows.append(({(block, i0, j0): 1.0, (block, i, j): -1.0}, 0.0, ("class", block, c, i, j)))
    n = s.dim
    for i in range(n):
        for j in range(i, n):
            if s.entry_class[i, j] < 0:
                rows.append(({(block, i, j): 1.0}, 0.0, ("zero", block, i, j)))
    return rows


def _representatives(s: npa.NpaStructure) -> list[tuple[int, int]]:
    return [m[0] for m in s.class_members()]


def _objective_terms(s: npa.NpaStructure, f: KeyFunction) -> dict[int, dict[int, float]]:
    """Per key value z, the moment combination of ``sum_{x: f(x)=z} E_u^x``."""
    out: dict[int, dict[int, float]] = {z: {} for z in range(f.range_size)}
    for x, z in enumerate(f.mapping):
        for cls, coeff in s.expand(((npa.ALICE, f.u, x),)).items():
            out[z][cls] = out[z].get(cls, 0.0) + coeff
    return out


def _add_box(problem: SdpProblem, pins: _Pins, radius: float) -> SdpProblem:
    """Let the pinned behavior move by ``radius`` per table entry.

    Entry k gets scalars a_k, d_k, s_k >= 0 with a_k + d_k + s_k = radius and
    the pins see ``P + a - d``. The dual objective becomes
    ``P . lambda + radius * |lambda|_1``, so the optimal certificate trades
    tightness at P against its l1 norm.
    """
    if radius <= 0:
        return problem
    base = len(problem.blocks)
    cons = list(problem.constraints)
    labels = list(problem.labels)
    pin_rows = {lab: r for r, lab in enumerate(labels) if lab and lab[0] == "pin"}
    for r_pin, label in enumerate(pins.labels):
        r = pin_rows[("pin",) + label]
        fun = dict(cons[r][0])
        for k in np.flatnonzero(pins.matrix[r_pin]):
            w = float(pins.matrix[r_pin, k])
            fun[(base + 3 * k, 0, 0)] = -w
            fun[(base + 3 * k + 1, 0, 0)] = w
        cons[r] = (fun, cons[r][1])
    n_entries = pins.matrix.shape[1]
    for k in range(n_entries):
        cons.append(({(base + 3 * k + t, 0, 0): 1.0 for t in range(3)}, float(radius)))
        labels.append(("box", k))
    return SdpProblem(
        blocks=list(problem.blocks) + [1] * (3 * n_entries),
        objective=problem.objective,
        constraints=cons,
        labels=labels,
    )


def build_guess_program(b: Behavior, f: KeyFunction, level=2, robust: float = 0.0) -> SdpProblem:
    """One PSD block per key value plus the marginal block.

    With ``robust > 0`` the program is relaxed by :func:`_add_box`.
    """
    _check(b, f, level)
    s = reduced_structure(b.alphabets, level)
    pins = _pins(b.alphabets, level)
    reps = _representatives(s)
    n_blocks = f.range_size
    marg = n_blocks
    rows = []
    for z in range(n_blocks):
        rows += _structure_rows(s, z)
    n = s.dim
    for i in range(n):
        for j in range(i, n):
            fun = {(z, i, j): 1.0 for z in range(n_blocks)}
            fun[(marg, i, j)] = -1.0
            rows.append((fun, 0.0, ("sum", i, j)))
    values = pins.matrix @ b.table.ravel()
    for label, cls, val in zip(pins.labels, pins.classes, values):
        i, j = reps[cls]
        rows.append(({(marg, i, j): 1.0}, float(val), ("pin",) + label))
    objective = {}
    for z, terms in _objective_terms(s, f).items():
        for cls, coeff in terms.items():
            i, j = reps[cls]
            objective[(z, i, j)] = objective.get((z, i, j), 0.0) + coeff
    problem = SdpProblem(
        blocks=[n] * (n_blocks + 1),
        objective=objective,
        constraints=[(fun, rhs) for fun, rhs, _ in rows],
        labels=[lab for _, _, lab in rows],
    )
    return _add_box(problem, pins, robust)


def build_bit_distance_program(b: Behavior, f: KeyFunction, level=2, robust: float = 0.0) -> SdpProblem:
    """Blocks ``marg - delta`` (0) and ``marg + delta`` (1), both PSD.

    The optimum is twice the distance from uniform of the bit ``f(X)``.
    """
    _check(b, f, level)
    if f.range_size != 2:
        raise GuessError("distance program needs a binary key function")
    s = reduced_structure(b.alphabets, level)
    pins = _pins(b.alphabets, level)
    reps = _representatives(s)
    rows = _structure_rows(s, 0) + _structure_rows(s, 1)
    values = pins.matrix @ b.table.ravel()
    for label, cls, val in zip(pins.labels, pins.classes, values):
        i, j = reps[cls]
        rows.append(({(0, i, j): 0.5, (1, i, j): 0.5}, float(val), ("pin",) + label))
    objective: dict = {}
    terms = _objective_terms(s, f)
    for z, sign in ((0, 1.0), (1, -1.0)):
        for cls, coeff in terms[z].items():
            i, j = reps[cls]
            objective[(1, i, j)] = objective.get((1, i, j), 0.0) + 0.5 * sign * coeff
            objective[(0, i, j)] = objective.get((0, i, j), 0.0) - 0.5 * sign * coeff
    problem = SdpProblem(
        blocks=[s.dim, s.dim],
        objective=objective,
        constraints=[(fun, rhs) for fun, rhs, _ in rows],
        labels=[lab for _, _, lab in rows],
    )
    return _add_box(problem, pins, robust)


def _certificate_from(problem: SdpProblem, sol: SdpSolution, b: Behavior, f: KeyFunction,
                      level, kind: str, robust: float = 0.0) -> tuple[DualCertificate, dict]:
    pins = _pins(b.alphabets, level)
    index = {lab: r for r, lab in enumerate(problem.labels)}
    mu = np.array([sol.dual_multipliers[index[("pin",) + lab]] for lab in pins.labels])
    lam = (pins.matrix.T @ mu).reshape(b.alphabets.shape)
    check = verify_dual_certificate(problem, sol.dual_multipliers, margin=CERT_MARGIN)
    diagnostics = {
        "status": sol.status,
        "iterations": sol.iterations,
        "primal_value": sol.primal_value,
        "dual_value": sol.dual_value,
        "gap": sol.gap,
        "primal_residual": sol.residuals["primal"],
        "slack_min_eigenvalue": check.min_eigenvalue,
        "certified": check.feasible,
    }
    if "face_rank" in sol.residuals:
        diagnostics["face_rank"] = sol.residuals["face_rank"][0]
        diagnostics["face_shift"] = sol.residuals["face_shift"]
    if not check.feasible:
        raise GuessError(f"dual certificate failed verification (slack eigenvalue {check.min_eigenvalue:.3g})")
    cert = DualCertificate(
        alphabets=b.alphabets,
        level=npa.normalize_level(level),
        lam=lam,
        kind=kind,
        target=f,
        meta={
            "behavior_hash": behavior_hash(b),
            "behavior_meta": b.meta,
            "slack_min_eigenvalue": check.min_eigenvalue,
            "gap": sol.gap,
            "robust": robust,
            "key_function": "Alice's outcome on the announced input; Bob's inputs enter only as constraints",
        },
    )
    cert.bound_at_origin = evaluate_certificate(cert, b)
    if robust > 0:
        diagnostics["penalized_bound"] = cert.scale * (cert.inner(b) + robust * cert.l1_norm)
    return cert, diagnostics


def _face_basis(b: Behavior, level, G0: np.ndarray, rel: float = 1e-4) -> np.ndarray | None:
    """Orthonormal basis of the range of an exact low-rank marginal moment matrix.

    ``G0`` is an approximate optimum. Its dominant eigenvectors seed a
    Gauss-Newton fit of G = R R^T to the linear constraints, which pins the
    range to machine precision (the interior-point iterate does not).
    """
    s = reduced_structure(b.alphabets, level)
    pins = _pins(b.alphabets, level)
    reps = _representatives(s)
    n = s.dim
    terms: list[list[tuple[int, int, float]]] = []
    rhs: list[float] = []
    for members in s.class_members():
        i0, j0 = members[0]
        for i, j in members[1:]:
            terms.append([(i0, j0, 1.0), (i, j, -1.0)])
            rhs.append(0.0)
    for i, j in zip(*np.nonzero(np.triu(s.entry_class < 0))):
        terms.append([(int(i), int(j), 1.0)])
        rhs.append(0.0)
    for cls, v in zip(pins.classes, pins.matrix @ b.table.ravel()):
        i, j = reps[cls]
        terms.append([(i, j, 1.0)])
        rhs.append(float(v))
    w, U = np.linalg.eigh((G0 + G0.T) / 2)
    r = int(np.sum(w > rel * w[-1]))
    if r >= n or r == 0:
        return None
    target = np.array(rhs)

    def residual(x):
        G = x.reshape(n, r) @ x.reshape(n, r).T
        return np.array([sum(c * G[i, j] for i, j, c in t) for t in terms]) - target

    def jac(x):
        R = x.reshape(n, r)
        out = np.zeros((len(terms), n, r))
        for k, t in enumerate(terms):
            for i, j, c in t:
                out[k, i] += c * R[j]
                out[k, j] += c * R[i]
        return out.reshape(len(terms), -1)

    x0 = (U[:, -r:] * np.sqrt(w[-r:])).ravel()
    method = "lm" if len(terms) >= x0.size else "trf"
    fit = least_squares(residual, x0, jac=jac, method=method, xtol=1e-15, ftol=1e-15, gtol=1e-15)
    err = float(np.abs(fit.fun).max())
    log.debug("face fit: rank %d of %d, residual %.2e after %d evaluations", r, n, err, fit.nfev)
    if err > 1e-12:
        return None
    return np.linalg.qr(fit.x.reshape(n, r))[0]


def _refine(problem: SdpProblem, sol: SdpSolution, marginal: np.ndarray, b: Behavior,
            level, tol: float) -> SdpSolution:
    """Retry on the minimal face when the plain solve stalls at a singular optimum."""
    if sol.gap <= FACE_TRIGGER * (1 + abs(sol.primal_value)):
        return sol
    V = _face_basis(b, level, marginal)
    if V is None:
        return sol
    try:
        ray, t = exposing_direction(problem)
    except SdpError as exc:
        log.debug("no exposing direction: %s", exc)
        return sol
    if t > 1e-6:
        return sol  # strictly feasible after all
    better = solve_on_face(problem, [V] * len(problem.blocks), ray, tol=tol, margin=CERT_MARGIN / 10)
    if better is None or better.dual_value >= sol.dual_value:
        return sol
    return better


def _clamp(value: float, lo: float, hi: float, diagnostics: dict, name: str) -> float:
    if value < lo - CLAMP_SLACK or value > hi + CLAMP_SLACK:
        diagnostics.setdefault("warnings", []).append(f"{name}={value:.9g} outside [{lo}, {hi}]")
        log.warning("%s=%.9g outside [%g, %g]", name, value, lo, hi)
    return min(hi, max(lo, value))


def solve_guess(b: Behavior, f: KeyFunction | None = None, level=2, tol: float = DEFAULT_TOL,
                robust: float = 0.0) -> GuessBound:
    """Certified upper bound on Eve's probability of guessing ``f(X)``.

    ``robust > 0`` returns the certificate minimizing
    ``P . lambda + robust * |lambda|_1`` instead; ``p_guess`` is still its
    value at ``b`` and the penalized value is in the diagnostics.
    """
    f = KeyFunction.identity(0, b.alphabets.nx) if f is None else f
    problem = build_guess_program(b, f, level, robust)
    sol = solve(problem, tol=tol)
    if robust <= 0:
        sol = _refine(problem, sol, sol.primal_blocks[f.range_size], b, level, tol)
    cert, diag = _certificate_from(problem, sol, b, f, level, "guess", robust)
    p = _clamp(cert.bound_at_origin, 1.0 / f.range_size, 1.0, diag, "p_guess")
    return GuessBound(p_guess=p, certificate=cert, level=npa.normalize_level(level), diagnostics=diag,
                      multipliers=sol.dual_multipliers)


def solve_bit_distance(b: Behavior, f: KeyFunction | None = None, level=2, tol: float = DEFAULT_TOL,
                       robust: float = 0.0) -> DistanceBound:
    """Certified bound on the distance from uniform of the bit ``f(X)``."""
    f = KeyFunction.identity(0, b.alphabets.nx) if f is None else f
    problem = build_bit_distance_program(b, f, level, robust)
    sol = solve(problem, tol=tol)
    if robust <= 0:
        sol = _refine(problem, sol, (sol.primal_blocks[0] + sol.primal_blocks[1]) / 2, b, level, tol)
    cert, diag = _certificate_from(problem, sol, b, f, level, "distance", robust)
    d = _clamp(cert.bound_at_origin, 0.0, 0.5, diag, "distance")
    return DistanceBound(distance=d, certificate=cert, level=npa.normalize_level(level), diagnostics=diag,
                         multipliers=sol.dual_multipliers)
