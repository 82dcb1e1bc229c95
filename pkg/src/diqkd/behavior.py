"""Finite-alphabet bipartite behaviors P(x, y | u, v).

Tables are stored as numpy arrays indexed ``[u, v, x, y]`` (row-major), the
same order used by certificate vectors and the JSON format.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

NORMALIZATION_TOL = 1e-12
NEGATIVE_CLAMP = 1e-12
NO_SIGNALLING_TOL = 1e-9


class BehaviorError(ValueError):
    """Raised for malformed or invalid behaviors."""


@dataclass(frozen=True)
class Alphabets:
    nx: int
    ny: int
    nu: int
    nv: int

    def __post_init__(self) -> None:
        for name in ("nx", "ny", "nu", "nv"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise BehaviorError(f"alphabet size {name}={value!r} must be a positive integer")

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return (self.nu, self.nv, self.nx, self.ny)

    @property
    def size(self) -> int:
        return self.nu * self.nv * self.nx * self.ny

    def to_dict(self) -> dict[str, int]:
        return {"nx": self.nx, "ny": self.ny, "nu": self.nu, "nv": self.nv}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Alphabets":
        return cls(nx=int(d["nx"]), ny=int(d["ny"]), nu=int(d["nu"]), nv=int(d["nv"]))

    def tensor(self, other: "Alphabets") -> "Alphabets":
        return Alphabets(self.nx * other.nx, self.ny * other.ny, self.nu * other.nu, self.nv * other.nv)


class Behavior:
    """A conditional distribution table over ``(u, v, x, y)``.

    Construction checks the shape and clamps tiny negative entries; the
    probabilistic invariants are checked by :func:`validate` so that
    deliberately broken tables can still be represented and diagnosed.
    """

    def __init__(self, alphabets: Alphabets, table: Any, meta: dict | None = None):
        arr = np.array(table, dtype=float)
        if arr.shape != alphabets.shape:
            raise BehaviorError(f"table shape {arr.shape} does not match alphabets {alphabets.shape}")
        if not np.all(np.isfinite(arr)):
            raise BehaviorError("table contains non-finite entries")
        arr[(arr < 0) & (arr >= -NEGATIVE_CLAMP)] = 0.0
        arr.setflags(write=False)
        self.alphabets = alphabets
        self.table = arr
        self.meta = dict(meta or {})

    def __repr__(self) -> str:
        a = self.alphabets
        return f"Behavior(nu={a.nu}, nv={a.nv}, nx={a.nx}, ny={a.ny})"

    def joint(self) -> np.ndarray:
        """Joint distribution P(u, v, x, y) under uniform inputs."""
        return self.table / (self.alphabets.nu * self.alphabets.nv)

    def marginal_a(self) -> np.ndarray:
        """P(x | u, v) summed over y, shape (nu, nv, nx)."""
        return self.table.sum(axis=3)

    def marginal_b(self) -> np.ndarray:
        """P(y | u, v) summed over x, shape (nu, nv, ny)."""
        return self.table.sum(axis=2)

    def restrict(self, alice_inputs: Sequence[int], bob_inputs: Sequence[int]) -> "Behavior":
        """Sub-behavior on a subset of inputs (in the given order)."""
        sub = self.table[np.ix_(list(alice_inputs), list(bob_inputs))]
        a = self.alphabets
        alph = Alphabets(a.nx, a.ny, len(alice_inputs), len(bob_inputs))
        return Behavior(alph, sub, meta=dict(self.meta))

    def tensor(self, other: "Behavior") -> "Behavior":
        """Product behavior of two independent systems.

        Composite symbols are flattened first-factor-major, e.g.
        ``u = u1 * nu2 + u2``.
        """
        a, b = self.alphabets, other.alphabets
        t = np.einsum("abij,cdkl->acbdikjl", self.table, other.table)
        return Behavior(a.tensor(b), t.reshape(a.tensor(b).shape))

    def to_dict(self) -> dict[str, Any]:
        return {"alphabets": self.alphabets.to_dict(), "table": self.table.tolist(), "meta": self.meta}

    @classmethod
    def from_dict(cls, d: dict[str, Any], check: bool = True) -> "Behavior":
        try:
            alph = Alphabets.from_dict(d["alphabets"])
            b = cls(alph, d["table"], meta=d.get("meta"))
        except (KeyError, TypeError, ValueError) as exc:
            raise BehaviorError(f"malformed behavior document: {exc}") from exc
        if check:
            report = validate(b)
            if not report.ok:
                raise BehaviorError("behavior violates invariants: " + "; ".join(report.violations))
        return b

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path: str | Path, check: bool = True) -> "Behavior":
        return cls.from_dict(json.loads(Path(path).read_text()), check=check)


@dataclass
class BehaviorEstimate:
    """Integer tallies indexed ``(u, v, x, y)``."""

    alphabets: Alphabets
    counts: np.ndarray

    def __post_init__(self) -> None:
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.shape != self.alphabets.shape:
            raise BehaviorError(f"counts shape {self.counts.shape} does not match {self.alphabets.shape}")
        if np.any(self.counts < 0):
            raise BehaviorError("counts must be non-negative")

    @property
    def totals(self) -> np.ndarray:
        return self.counts.sum(axis=(2, 3))

    @classmethod
    def from_rounds(cls, alphabets: Alphabets, u, v, x, y) -> "BehaviorEstimate":
        counts = np.zeros(alphabets.shape, dtype=np.int64)
        np.add.at(counts, (np.asarray(u), np.asarray(v), np.asarray(x), np.asarray(y)), 1)
        return cls(alphabets, counts)


@dataclass(frozen=True)
class MeasurementAngles:
    """Polarization angles in degrees for each input."""

    alice: tuple[float, ...]
    bob: tuple[float, ...]
    bob_flip: bool = True

    def __post_init__(self) -> None:
        if not self.alice or not self.bob:
            raise BehaviorError("each party needs at least one measurement angle")
        object.__setattr__(self, "alice", tuple(float(a) for a in self.alice))
        object.__setattr__(self, "bob", tuple(float(b) for b in self.bob))

    @classmethod
    def ekert(cls, bob_flip: bool = True) -> "MeasurementAngles":
        """Alice {45, 0} for U0, U1; Bob {22.5, 67.5, 45} for V0, V1, V2."""
        return cls(alice=(45.0, 0.0), bob=(22.5, 67.5, 45.0), bob_flip=bob_flip)

    @classmethod
    def chsh(cls, bob_flip: bool = True) -> "MeasurementAngles":
        """The Ekert bases without V2 (two inputs per party)."""
        return cls(alice=(45.0, 0.0), bob=(22.5, 67.5), bob_flip=bob_flip)


PRESETS = {"ekert": MeasurementAngles.ekert, "chsh": MeasurementAngles.chsh}

# raw-key input pair (U0, V2) of the Ekert preset
EKERT_KEY_INPUTS = (0, 2)


def singlet_behavior(rho: float, angles: MeasurementAngles) -> Behavior:
    """Noisy singlet measured in linear-polarization bases.

    The state is ``(1 - rho) |Psi-><Psi-| + rho * I/4``. Without the flip the
    singlet gives anti-correlated outcomes at equal angles; with ``bob_flip``
    Bob relabels his outcome so equal angles give identical bits.
    """
    if not (0.0 <= rho <= 1.0) or math.isnan(rho):
        raise BehaviorError(f"noise weight rho={rho!r} outside [0, 1]")
    theta_a = np.radians(np.array(angles.alice))
    theta_b = np.radians(np.array(angles.bob))
    diff = theta_a[:, None] - theta_b[None, :]
    p_equal = np.sin(diff) ** 2
    if angles.bob_flip:
        p_equal = 1.0 - p_equal
    nu, nv = len(angles.alice), len(angles.bob)
    singlet = np.empty((nu, nv, 2, 2))
    singlet[:, :, 0, 0] = singlet[:, :, 1, 1] = p_equal / 2
    singlet[:, :, 0, 1] = singlet[:, :, 1, 0] = (1.0 - p_equal) / 2
    table = (1.0 - rho) * singlet + rho * 0.25
    meta = {"generator": "singlet", "rho": rho, "alice_angles": list(angles.alice),
            "bob_angles": list(angles.bob), "bob_flip": angles.bob_flip}
    return Behavior(Alphabets(2, 2, nu, nv), table, meta=meta)


@dataclass
class ValidationReport:
    normalization: float
    positivity: float
    no_signalling_alice: float
    no_signalling_bob: float
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def validate(b: Behavior, norm_tol: float = NORMALIZATION_TOL,
             ns_tol: float = NO_SIGNALLING_TOL) -> ValidationReport:
    """Residuals of normalization, positivity and no-signalling."""
    t = b.table
    if t.shape != b.alphabets.shape:
        raise BehaviorError("table shape does not match alphabets")
    norm = float(np.max(np.abs(t.sum(axis=(2, 3)) - 1.0)))
    pos = float(max(0.0, -t.min()))
    pa = t.sum(axis=3)  # (u, v, x)
    pb = t.sum(axis=2)  # (u, v, y)
    ns_a = float(np.max(pa.max(axis=1) - pa.min(axis=1)))
    ns_b = float(np.max(pb.max(axis=0) - pb.min(axis=0)))
    report = ValidationReport(norm, pos, ns_a, ns_b)
    if norm > norm_tol:
        report.violations.append(f"normalization residual {norm:.3g}")
    if pos > 0:
        report.violations.append(f"negative entry {-pos:.3g}")
    if ns_a > ns_tol:
        report.violations.append(f"Alice marginal depends on Bob's input ({ns_a:.3g})")
    if ns_b > ns_tol:
        report.violations.append(f"Bob marginal depends on Alice's input ({ns_b:.3g})")
    return report


def estimate_from_counts(est: BehaviorEstimate, cells=None) -> Behavior:
    """Relative-frequency estimate of the conditional distribution.

    ``cells`` lists the (u, v) pairs that must be estimable; by default all of
    them. Unrequested cells without data are filled with the uniform
    distribution.
    """
    a = est.alphabets
    totals = est.totals
    if cells is None:
        cells = [(u, v) for u in range(a.nu) for v in range(a.nv)]
    for u, v in cells:
        if totals[u, v] <= 0:
            raise BehaviorError(f"no counts for input pair (u={u}, v={v})")
    table = np.full(a.shape, 1.0 / (a.nx * a.ny))
    seen = totals > 0
    table[seen] = est.counts[seen] / totals[seen][:, None, None]
    return Behavior(a, table, meta={"estimated_from": int(totals.sum())})


def _as_joint(p) -> np.ndarray:
    return p.joint() if isinstance(p, Behavior) else np.asarray(p, dtype=float)


def statistical_distance(p, q) -> float:
    """Half the L1 distance between joint distributions.

    Behaviors are converted to joints with uniform inputs; arrays are taken
    to already be joints.
    """
    jp, jq = _as_joint(p), _as_joint(q)
    if jp.shape != jq.shape:
        raise BehaviorError(f"shape mismatch {jp.shape} vs {jq.shape}")
    return 0.5 * float(np.abs(jp - jq).sum())


def qber(b: Behavior, u_key: int, v_key: int) -> float:
    a = b.alphabets
    if not (0 <= u_key < a.nu and 0 <= v_key < a.nv):
        raise BehaviorError(f"key inputs ({u_key}, {v_key}) out of range")
    cell = b.table[u_key, v_key]
    n = min(a.nx, a.ny)
    return float(cell.sum() - sum(cell[i, i] for i in range(n)))


def chsh_value(b: Behavior, inputs: Sequence[int] = (0, 1, 0, 1)) -> float:
    """CHSH expression S = E00 + E01 + E10 - E11 on the chosen inputs.

    ``inputs`` is ``(u0, u1, v0, v1)``.
    """
    if b.alphabets.nx != 2 or b.alphabets.ny != 2:
        raise BehaviorError("CHSH value needs binary outcomes")
    u0, u1, v0, v1 = inputs
    sign = np.array([[1.0, -1.0], [-1.0, 1.0]])
    s = 0.0
    for i, u in enumerate((u0, u1)):
        for j, v in enumerate((v0, v1)):
            corr = float((b.table[u, v] * sign).sum())
            s += -corr if (i and j) else corr
    return s


def deterministic_behavior(alphabets: Alphabets, x_of_u: Sequence[int], y_of_v: Sequence[int]) -> Behavior:
    """Local deterministic behavior with fixed outputs per input."""
    t = np.zeros(alphabets.shape)
    for u in range(alphabets.nu):
        for v in range(alphabets.nv):
            t[u, v, x_of_u[u], y_of_v[v]] = 1.0
    return Behavior(alphabets, t, meta={"generator": "deterministic"})


def uniform_behavior(alphabets: Alphabets) -> Behavior:
    return Behavior(alphabets, np.full(alphabets.shape, 1.0 / (alphabets.nx * alphabets.ny)),
                    meta={"generator": "uniform"})


def sample_outcomes(b: Behavior, u: np.ndarray, v: np.ndarray, rng: np.random.Generator):
    """Draw (x, y) for each round given its inputs."""
    a = b.alphabets
    cdf = np.cumsum(b.table.reshape(a.nu, a.nv, a.nx * a.ny), axis=2)
    cdf[..., -1] = 1.0
    r = rng.random(len(u))
    flat = np.empty(len(u), dtype=np.int64)
    rows = cdf[u, v]
    flat[:] = (r[:, None] >= rows).sum(axis=1)
    return flat // a.ny, flat % a.ny
