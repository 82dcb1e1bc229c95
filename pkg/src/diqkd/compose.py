"""Bounds for several systems from single-system dual certificates.

A certificate is a vector lambda over ``(u, v, x, y)``. For k systems the
composed certificate is the tensor product of the factors, evaluated against a
joint table over the product alphabet. The joint table is contracted one
factor at a time, so the product vector itself never exists in memory.

Composite symbols follow :meth:`Behavior.tensor`: first factor major.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import reduce

import numpy as np

from .behavior import Alphabets, Behavior
from .guess import DualCertificate, evaluate_certificate

log = logging.getLogger(__name__)

KINDS = ("guess-product", "xor")


class ComposeError(ValueError):
    pass


def product_alphabets(factors) -> Alphabets:
    return reduce(Alphabets.tensor, [c.alphabets for c in factors])


def contract(table: np.ndarray, lams: list[np.ndarray]) -> float:
    """``sum table * (lam_1 (x) ... (x) lam_k)`` over a joint table.

    ``table`` has shape ``(prod nu, prod nv, prod nx, prod ny)``; each lam has
    shape ``(nu_i, nv_i, nx_i, ny_i)``.
    """
    k = len(lams)
    dims = [lam.shape for lam in lams]
    # split every composite axis into its per-factor components
    split = [d[axis] for axis in range(4) for d in dims]
    t = np.asarray(table, dtype=float).reshape(split)
    # axes ordered (u_1..u_k, v_1..v_k, x_1..x_k, y_1..y_k); bring factor 1's axes first
    order = [axis * k + i for i in range(k) for axis in range(4)]
    t = t.transpose(order)
    for lam in lams:
        t = np.tensordot(lam, t, axes=4)
    return float(t)


@dataclass
class ComposedCertificate:
    """Tensor product of certificates, kept as its factors."""

    factors: list[DualCertificate]
    kind: str = "guess-product"

    def __post_init__(self) -> None:
        if not self.factors:
            raise ComposeError("need at least one factor")
        if self.kind not in KINDS:
            raise ComposeError(f"unknown composition kind {self.kind!r}")
        want = "distance" if self.kind == "xor" else "guess"
        bad = [c.kind for c in self.factors if c.kind != want]
        if bad:
            raise ComposeError(f"{self.kind} composition needs {want} certificates, got {bad}")

    @property
    def alphabets(self) -> Alphabets:
        return product_alphabets(self.factors)

    @property
    def factor_alphabets(self) -> list[Alphabets]:
        return [c.alphabets for c in self.factors]

    def evaluate(self, b: Behavior) -> float:
        if b.alphabets != self.alphabets:
            raise ComposeError(f"behavior alphabets {b.alphabets} do not match product {self.alphabets}")
        value = contract(b.table, [c.lam for c in self.factors])
        return 0.5 * value if self.kind == "xor" else value

    def to_dict(self) -> dict:
        return {"kind": self.kind, "factors": [c.to_dict() for c in self.factors]}

    @classmethod
    def from_dict(cls, d: dict) -> "ComposedCertificate":
        return cls([DualCertificate.from_dict(f) for f in d["factors"]], kind=d["kind"])


def tensor_guess_bound(factors: list[DualCertificate], b: Behavior) -> float:
    """Upper bound on guessing all k values jointly, for any joint behavior.

    Independence is not required: the tensor product of dual feasible points
    stays dual feasible because operators of different systems commute.
    """
    return ComposedCertificate(list(factors), "guess-product").evaluate(b)


def xor_bound(c1: DualCertificate, c2: DualCertificate, b: Behavior) -> float:
    """Distance from uniform of ``f(X1) xor g(X2)``, from two bit certificates."""
    return ComposedCertificate([c1, c2], "xor").evaluate(b)


def xor_bound_many(factors: list[DualCertificate], b: Behavior) -> float:
    """Iterated XOR of k bits: ``1/2 P^T (lam_1 (x) ... (x) lam_k)``.

    Applying the two-system lemma repeatedly: the scale factors of 1/2 on
    each factor and on the result combine to the same single 1/2.
    """
    return ComposedCertificate(list(factors), "xor").evaluate(b)


def nfold_key_entropy(c: DualCertificate, b_single: Behavior, n: int) -> float:
    """Certified min-entropy of n independent copies, in bits."""
    if n < 1:
        raise ComposeError(f"copy count must be positive, got {n}")
    if c.kind != "guess":
        raise ComposeError("min-entropy needs a guessing certificate")
    p = evaluate_certificate(c, b_single)
    if p >= 1.0:
        log.warning("certificate bound %.9g >= 1 on this behavior; no entropy certified", p)
        return 0.0
    return n * -math.log2(p)
