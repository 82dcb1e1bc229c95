"""Finite-key protocol: simulation, parameter estimation, reconciliation,
privacy amplification and the epsilon bookkeeping that ties them together.

Every epsilon is computed in log2 form first; linear values are derived from
it and may underflow to zero, which is harmless.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linprog

from . import kernels
from .behavior import (
    EKERT_KEY_INPUTS,
    Alphabets,
    Behavior,
    BehaviorEstimate,
    estimate_from_counts,
    qber,
    sample_outcomes,
)
from .guess import DualCertificate

log = logging.getLogger(__name__)

LN2 = math.log(2.0)
MAX_RECONCILE_BITS = 24


class ProtocolError(ValueError):
    pass


def _log2_sum(*terms: float) -> float:
    """log2 of a sum of numbers given by their log2."""
    finite = [t for t in terms if t != -math.inf]
    if not finite:
        return -math.inf
    top = max(finite)
    return top + math.log2(sum(2.0 ** (t - top) for t in finite))


def _lin(log2_value: float) -> float:
    return 0.0 if log2_value == -math.inf else 2.0 ** log2_value


def binary_entropy(p: float) -> float:
    if not 0.0 <= p <= 1.0:
        raise ProtocolError(f"probability {p} outside [0, 1]")
    if p in (0.0, 1.0):
        return 0.0
    return -p * math.log2(p) - (1 - p) * math.log2(1 - p)


@dataclass(frozen=True)
class ProtocolParams:
    n: int
    k: float = 0.1
    p: float = 0.9
    eta: float = 1e-3
    delta_max: float = 0.02
    kappa: float = 0.05
    m: int = 0
    s: int = 0
    level: object = 2
    seed: int = 0
    key_inputs: tuple[int, int] = EKERT_KEY_INPUTS

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ProtocolError(f"round count must be positive, got {self.n}")
        if not 0 < self.k < 1:
            raise ProtocolError(f"test probability k={self.k} must lie in (0, 1)")
        if not 0 < self.p < 1:
            raise ProtocolError(f"threshold fraction p={self.p} must lie in (0, 1)")
        if self.eta < 0:
            raise ProtocolError(f"eta={self.eta} must be non-negative")
        if self.kappa <= 0:
            raise ProtocolError(f"kappa={self.kappa} must be positive")
        if not 0 <= self.m <= self.n:
            raise ProtocolError(f"syndrome length m={self.m} must lie in [0, n]")
        if self.s < 0:
            raise ProtocolError(f"key length s={self.s} must be non-negative")
        if not 0 <= self.seed < 2**64:
            raise ProtocolError("seed must be a 64-bit unsigned integer")
        object.__setattr__(self, "key_inputs", tuple(int(i) for i in self.key_inputs))

    @property
    def key_round_floor(self) -> float:
        return (1 - self.k) ** 2 * self.p * self.n

    def cell_floor(self, a: Alphabets) -> float:
        return self.k**2 * self.p * self.n / (a.nu * a.nv)

    @property
    def n_key(self) -> int:
        """Raw-key rounds the accounting assumes (the abort floor)."""
        return int(math.floor(self.key_round_floor))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["key_inputs"] = list(self.key_inputs)
        return d


# -- transcripts ----------------------------------------------------------------


@dataclass
class Transcript:
    """Inputs, outputs and key/test tags of every round."""

    alphabets: Alphabets
    u: np.ndarray
    v: np.ndarray
    x: np.ndarray
    y: np.ndarray
    key: np.ndarray  # True where both parties took the key-input branch
    seed: int = 0

    def __post_init__(self) -> None:
        arrays = [np.asarray(a) for a in (self.u, self.v, self.x, self.y)]
        self.u, self.v, self.x, self.y = (a.astype(np.int64) for a in arrays)
        self.key = np.asarray(self.key, dtype=bool)
        n = len(self.u)
        if any(len(a) != n for a in (self.v, self.x, self.y, self.key)):
            raise ProtocolError("transcript arrays have different lengths")
        a = self.alphabets
        for arr, bound, name in ((self.u, a.nu, "u"), (self.v, a.nv, "v"), (self.x, a.nx, "x"), (self.y, a.ny, "y")):
            if n and (arr.min() < 0 or arr.max() >= bound):
                raise ProtocolError(f"transcript symbol {name} out of range")

    def __len__(self) -> int:
        return len(self.u)

    def head(self, n: int) -> "Transcript":
        return Transcript(self.alphabets, self.u[:n], self.v[:n], self.x[:n], self.y[:n], self.key[:n], self.seed)

    def to_dict(self) -> dict:
        rounds = np.stack([self.u, self.v, self.x, self.y], axis=1)
        return {
            "alphabets": self.alphabets.to_dict(),
            "seed": int(self.seed),
            "rounds": rounds.tolist(),
            "tags": ["key" if t else "test" for t in self.key],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Transcript":
        try:
            alph = Alphabets.from_dict(d["alphabets"])
            rounds = np.asarray(d["rounds"], dtype=np.int64).reshape(-1, 4)
            tags = d["tags"]
            if any(t not in ("key", "test") for t in tags):
                raise ProtocolError("tags must be 'key' or 'test'")
            key = np.array([t == "key" for t in tags], dtype=bool)
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"malformed transcript: {exc}") from exc
        return cls(alph, *rounds.T, key=key, seed=int(d.get("seed", 0)))

    def dump(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path) -> "Transcript":
        return cls.from_dict(json.loads(Path(path).read_text()))


def simulate_rounds(b: Behavior, params: ProtocolParams) -> Transcript:
    """Run ``params.n`` rounds of the honest devices with seeded randomness."""
    a = b.alphabets
    u_key, v_key = params.key_inputs
    if not (0 <= u_key < a.nu and 0 <= v_key < a.nv):
        raise ProtocolError(f"key inputs {params.key_inputs} out of range for {a}")
    rng = np.random.default_rng(params.seed)
    n = params.n
    test_a = rng.random(n) < params.k
    test_b = rng.random(n) < params.k
    u = np.where(test_a, rng.integers(0, a.nu, n), u_key)
    v = np.where(test_b, rng.integers(0, a.nv, n), v_key)
    x, y = sample_outcomes(b, u, v, rng)
    return Transcript(a, u, v, x, y, key=~test_a & ~test_b, seed=params.seed)


# -- parameter estimation ---------------------------------------------------------


@dataclass
class EstimationResult:
    accepted: bool
    reason: str
    estimate: Behavior | None = None
    distance: float = math.nan
    guess_estimate: float = math.nan
    qber_estimate: float = math.nan
    threshold: float = math.nan
    key_rounds: int = 0
    min_cell_count: int = 0

    def to_dict(self) -> dict:
        return {
            "accepted": self.accepted,
            "reason": self.reason,
            "distance": self.distance,
            "guess_estimate": self.guess_estimate,
            "qber_estimate": self.qber_estimate,
            "threshold": self.threshold,
            "key_rounds": self.key_rounds,
            "min_cell_count": self.min_cell_count,
        }


def distance_to_accept_set(est: Behavior, cert: DualCertificate, threshold: float,
                           key_inputs: tuple[int, int], delta_max: float) -> float:
    """Smallest statistical distance from ``est`` to a behavior Q with
    ``Q . lambda <= threshold`` and QBER(Q) <= ``delta_max``.

    Q ranges over normalized tables; the set is a polytope so this is a
    linear program in (Q, t+, t-) with Q - P = t+ - t-.
    """
    a = est.alphabets
    N = a.size
    P = est.table.ravel()
    w = 0.5 / (a.nu * a.nv)  # statistical distance of joints with uniform inputs
    c = np.concatenate([np.zeros(N), np.full(2 * N, w)])
    I = np.eye(N)
    A_eq = [np.hstack([I, -I, I])]
    b_eq = [P]
    norm = np.zeros((a.nu * a.nv, N))
    for r in range(a.nu * a.nv):
        norm[r, r * a.nx * a.ny:(r + 1) * a.nx * a.ny] = 1.0
    A_eq.append(np.hstack([norm, np.zeros((a.nu * a.nv, 2 * N))]))
    b_eq.append(np.ones(a.nu * a.nv))
    err = np.zeros(a.shape)
    u_key, v_key = key_inputs
    err[u_key, v_key] = 1.0
    for i in range(min(a.nx, a.ny)):
        err[u_key, v_key, i, i] = 0.0
    A_ub = np.array([
        np.concatenate([cert.lam.ravel(), np.zeros(2 * N)]),
        np.concatenate([err.ravel(), np.zeros(2 * N)]),
    ])
    b_ub = np.array([threshold, delta_max])
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=np.vstack(A_eq), b_eq=np.concatenate(b_eq),
                  bounds=[(0, 1)] * N + [(0, None)] * (2 * N), method="highs")
    if res.status == 2:
        return math.inf
    if res.status != 0:
        raise ProtocolError(f"accept-set distance LP failed: {res.message}")
    return float(res.fun)


def parameter_estimation(t: Transcript, params: ProtocolParams, reference_certificate: DualCertificate,
                         threshold: float | None = None) -> EstimationResult:
    """Count checks, then the distance of the test-round estimate to the accept set.

    ``threshold`` defaults to the certificate's value at its reference
    behavior.
    """
    a = t.alphabets
    if reference_certificate.alphabets != a:
        raise ProtocolError("certificate alphabets do not match the transcript")
    threshold = reference_certificate.bound_at_origin if threshold is None else threshold
    key_rounds = int(t.key.sum())
    test = ~t.key
    counts = BehaviorEstimate.from_rounds(a, t.u[test], t.v[test], t.x[test], t.y[test])
    min_cell = int(counts.totals.min())
    base = dict(threshold=threshold, key_rounds=key_rounds, min_cell_count=min_cell)
    if key_rounds < params.key_round_floor:
        return EstimationResult(False, f"only {key_rounds} key rounds, need {params.key_round_floor:.1f}", **base)
    if min_cell < params.cell_floor(a):
        return EstimationResult(False, f"an input pair occurred {min_cell} times, need {params.cell_floor(a):.1f}",
                                **base)
    est = estimate_from_counts(counts)
    dist = distance_to_accept_set(est, reference_certificate, threshold, params.key_inputs, params.delta_max)
    result = EstimationResult(
        accepted=dist <= params.eta,
        reason="accepted" if dist <= params.eta else f"estimate is {dist:.4g} from the accept set (eta={params.eta})",
        estimate=est,
        distance=dist,
        guess_estimate=reference_certificate.inner(est),
        qber_estimate=qber(est, *params.key_inputs),
        **base,
    )
    return result


# -- epsilons -------------------------------------------------------------------------


def _sizes(a: Alphabets) -> tuple[int, int, int, int]:
    return a.nx, a.ny, a.nu, a.nv


def log2_eps_filter(params: ProtocolParams, a: Alphabets) -> float:
    nx, ny, nu, nv = _sizes(a)
    t_prime = params.k**2 * params.p * params.n / (nu * nv)
    return math.log2(nx * ny * nu * nv) - t_prime * params.eta**2 / (8 * nx * ny) / LN2


def eps_filter(params: ProtocolParams, a: Alphabets) -> float:
    """Probability that a system outside the eta-neighbourhood passes the tests."""
    return _lin(log2_eps_filter(params, a))


def log2_eps_robust(params: ProtocolParams, a: Alphabets) -> float:
    nu, nv = a.nu, a.nv
    n, k, p = params.n, params.k, params.p
    key_term = -2 * n * ((1 - p) * (1 - k) ** 2) ** 2 / LN2
    cell_term = math.log2(nu * nv) - 2 * n * ((1 - p) * k**2 / (nu * nv)) ** 2 / LN2
    return _log2_sum(log2_eps_filter(params, a), key_term, cell_term)


def eps_robust(params: ProtocolParams, a: Alphabets) -> float:
    """Filtering epsilon plus the two count-abort Chernoff terms."""
    return _lin(log2_eps_robust(params, a))


def penalized_guess(c: DualCertificate, p_guess_ref: float, eta: float, a: Alphabets) -> float:
    """Worst per-round guessing probability among systems that pass the filter."""
    value = p_guess_ref + a.nu * a.nv * eta * c.l1_norm
    if value > 1.0:
        log.info("penalized guessing probability %.6g exceeds 1; clamped", value)
        return 1.0
    return value


def log2_ir_error_bound(n: int, delta: float, kappa: float, m: int) -> float:
    if kappa <= 0:
        raise ProtocolError(f"kappa={kappa} must be positive")
    if delta < 0 or delta + kappa >= 0.5:
        raise ProtocolError(f"need 0 <= delta and delta + kappa < 1/2, got {delta} + {kappa}")
    return _log2_sum(-2 * kappa**2 * n / LN2, n * binary_entropy(delta + kappa) - m)


def ir_error_bound(n: int, delta: float, kappa: float, m: int) -> float:
    """Failure probability of syndrome decoding when the error rate is at most delta."""
    return _lin(log2_ir_error_bound(n, delta, kappa, m))


def log2_pa_distance(h_min: float, s: float) -> float:
    return min(0.0, -(h_min - s) / 2)


def pa_distance(h_min: float, s: float) -> float:
    return _lin(log2_pa_distance(h_min, s))


def chain_rule(h_min: float, m: float) -> float:
    return h_min - m


def key_rate(p_guess: float, delta: float) -> float:
    if not 0 < p_guess <= 1:
        raise ProtocolError(f"p_guess={p_guess} outside (0, 1]")
    if not 0 <= delta <= 0.5:
        raise ProtocolError(f"delta={delta} outside [0, 1/2]")
    return -math.log2(p_guess) - binary_entropy(delta)


def post_selection_factor(n: int, a: Alphabets) -> float:
    """log2 of (n+1)^(d^2-1) with d the product of the four alphabet sizes."""
    if n < 0:
        raise ProtocolError("round count must be non-negative")
    d = a.nx * a.ny * a.nu * a.nv
    return (d * d - 1) * math.log2(n + 1)


# -- hashing and reconciliation ---------------------------------------------------------


@dataclass(frozen=True)
class HashSeed:
    """Toeplitz matrix over GF(2) mapping n bits to m bits."""

    bits: tuple[int, ...]
    n: int
    m: int

    def __post_init__(self) -> None:
        if self.n < 1 or self.m < 1:
            raise ProtocolError("hash dimensions must be positive")
        if len(self.bits) != self.n + self.m - 1:
            raise ProtocolError(f"seed has {len(self.bits)} bits, need {self.n + self.m - 1}")
        if any(b not in (0, 1) for b in self.bits):
            raise ProtocolError("seed bits must be 0 or 1")

    @classmethod
    def random(cls, n: int, m: int, rng: np.random.Generator) -> "HashSeed":
        return cls(tuple(int(b) for b in rng.integers(0, 2, n + m - 1)), n, m)

    def array(self) -> np.ndarray:
        return np.array(self.bits, dtype=np.uint8)

    def matrix(self) -> np.ndarray:
        """Row j is ``bits[j : j + n]`` reversed."""
        s = self.array()
        return np.array([s[j:j + self.n][::-1] for j in range(self.m)], dtype=np.uint8)


def _bits(x, n: int | None = None) -> np.ndarray:
    arr = np.asarray(x, dtype=np.int64)
    if arr.ndim != 1 or (len(arr) and (arr.min() < 0 or arr.max() > 1)):
        raise ProtocolError("expected a flat 0/1 vector")
    if n is not None and len(arr) != n:
        raise ProtocolError(f"expected {n} bits, got {len(arr)}")
    return arr.astype(np.uint8)


def toeplitz_hash(seed: HashSeed, x, m: int | None = None) -> np.ndarray:
    if m is not None and m != seed.m:
        raise ProtocolError(f"seed produces {seed.m} bits, asked for {m}")
    xb = _bits(x, seed.n)
    return kernels.toeplitz_hash_batch(seed.array()[None, :], xb)[0]


def _mask(bits: np.ndarray) -> int:
    return int(sum(int(b) << i for i, b in enumerate(bits)))


@dataclass
class Reconciliation:
    corrected: np.ndarray
    success: bool
    weight: int
    ties: int


def reconcile(x, y, m: int, seed: HashSeed, rng: np.random.Generator | int = 0) -> Reconciliation:
    """Bob's closest string to ``y`` that shares Alice's syndrome.

    Ties among equally close candidates are broken uniformly using ``rng``.
    """
    xb = _bits(x)
    n = len(xb)
    yb = _bits(y, n)
    if n > MAX_RECONCILE_BITS:
        raise ProtocolError(f"brute-force decoding is capped at {MAX_RECONCILE_BITS} bits, got {n}")
    if seed.n != n or seed.m != m:
        raise ProtocolError(f"seed is for ({seed.n}, {seed.m}), need ({n}, {m})")
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    H = seed.matrix()
    cols = [_mask(H[:, i]) for i in range(n)]
    syndrome = _mask(toeplitz_hash(seed, xb) ^ toeplitz_hash(seed, yb))
    r = int(rng.integers(0, 2**62))
    pattern, weight, ties = kernels.decode_min_weight(np.array(cols, dtype=np.uint64), syndrome, r)
    err = np.array([(pattern >> i) & 1 for i in range(n)], dtype=np.uint8)
    corrected = yb ^ err
    return Reconciliation(corrected, bool(np.array_equal(corrected, xb)), int(weight), int(ties))


# -- security report --------------------------------------------------------------------


@dataclass
class SecurityReport:
    params: ProtocolParams
    n_key: int
    p_guess_ref: float
    p_guess_penalized: float
    l1_norm: float
    h_min_certified: float
    h_min_after_ir: float
    log2_eps_pe: float
    log2_eps_robust: float
    log2_eps_ir: float
    log2_d_pa: float
    log2_eps_iid: float
    log2_g_factor: float
    log2_eps_total: float
    key_length: int
    s_max: int
    key_rate: float
    no_key: bool
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = {"params": self.params.to_dict()}
        for name in ("n_key", "p_guess_ref", "p_guess_penalized", "l1_norm", "h_min_certified",
                     "h_min_after_ir", "key_length", "s_max", "key_rate", "no_key"):
            d[name] = getattr(self, name)
        for name in ("eps_pe", "eps_robust", "eps_ir", "d_pa", "eps_iid", "g_factor", "eps_total"):
            lg = getattr(self, "log2_" + name)
            # linear values above 2^1000 are meaningless as probabilities; log2 keeps them
            d[name] = _lin(lg) if lg < 1000 else None
            d[name + "_log2"] = lg if math.isfinite(lg) else None
        d["notes"] = list(self.notes)
        return d


def security_report(b: Behavior, params: ProtocolParams, certificate: DualCertificate,
                    p_guess_ref: float | None = None) -> SecurityReport:
    """Every epsilon and the key length for one run with these parameters.

    ``b`` supplies the alphabets the accounting refers to. ``p_guess_ref``
    defaults to the certificate's value at its reference behavior.
    """
    a = b.alphabets
    if certificate.alphabets != a:
        raise ProtocolError("certificate alphabets do not match the behavior")
    if certificate.kind != "guess":
        raise ProtocolError("the report needs a guessing certificate")
    p_ref = certificate.bound_at_origin if p_guess_ref is None else p_guess_ref
    n_key = params.n_key
    notes = []
    p_tilde = penalized_guess(certificate, p_ref, params.eta, a)
    raw = p_ref + a.nu * a.nv * params.eta * certificate.l1_norm
    if raw > 1.0:
        notes.append(f"eta penalty pushes the guessing bound to {raw:.6g}; clamped to 1")
    h_min = -n_key * math.log2(p_tilde) if p_tilde > 0 else math.inf
    h_after = chain_rule(h_min, params.m)
    s_max = max(0, int(math.floor(h_after)))
    no_key = s_max == 0
    if no_key:
        notes.append("no key: residual min-entropy after reconciliation is not positive")
    lg_pe = log2_eps_filter(params, a)
    lg_rob = log2_eps_robust(params, a)
    lg_ir = log2_ir_error_bound(n_key, params.delta_max, params.kappa, params.m)
    lg_pa = log2_pa_distance(h_after, params.s)
    lg_iid = _log2_sum(lg_pa, lg_ir, lg_pe)
    lg_g = post_selection_factor(params.n, a)
    lg_total = lg_g + lg_iid
    if lg_total >= 0:
        notes.append("post-selection total is vacuous at this n")
    return SecurityReport(
        params=params,
        n_key=n_key,
        p_guess_ref=p_ref,
        p_guess_penalized=p_tilde,
        l1_norm=certificate.l1_norm,
        h_min_certified=h_min,
        h_min_after_ir=h_after,
        log2_eps_pe=lg_pe,
        log2_eps_robust=lg_rob,
        log2_eps_ir=lg_ir,
        log2_d_pa=lg_pa,
        log2_eps_iid=lg_iid,
        log2_g_factor=lg_g,
        log2_eps_total=lg_total,
        key_length=params.s,
        s_max=s_max,
        key_rate=params.s / params.n,
        no_key=no_key,
        notes=notes,
    )
