"""Independent reference computations used by the tests.

Nothing here imports the solver or program builders; behaviors come from
explicit density matrices and moment matrices from explicit operators.
"""

from __future__ import annotations

import numpy as np

SINGLET = np.array([0.0, 1.0, -1.0, 0.0]) / np.sqrt(2.0)


def polarizer(deg: float) -> np.ndarray:
    t = np.radians(deg)
    v = np.array([np.cos(t), np.sin(t)])
    return np.outer(v, v)


def singlet_table(rho: float, alice_deg, bob_deg, flip: bool = True) -> np.ndarray:
    """P(x, y | u, v) from tr(state * (A_u^x kron B_v^y)), shape (nu, nv, 2, 2)."""
    state = (1 - rho) * np.outer(SINGLET, SINGLET) + rho * np.eye(4) / 4
    out = np.zeros((len(alice_deg), len(bob_deg), 2, 2))
    for u, a in enumerate(alice_deg):
        A = [polarizer(a), polarizer(a + 90)]
        for v, b in enumerate(bob_deg):
            B = [polarizer(b), polarizer(b + 90)]
            for x in range(2):
                for y in range(2):
                    yy = 1 - y if flip else y
                    out[u, v, x, yy] = np.trace(state @ np.kron(A[x], B[y]))
    return out


def word_operator(word, alice_ops, bob_ops, dim_a: int, dim_b: int) -> np.ndarray:
    """Product of projectors for a word; letter (party, input, outcome)."""
    op = np.eye(dim_a * dim_b)
    for party, inp, out in word:
        if party == 0:
            m = np.kron(alice_ops[inp][out], np.eye(dim_b))
        else:
            m = np.kron(np.eye(dim_a), bob_ops[inp][out])
        op = op @ m
    return op


def moment_matrix(words, alice_ops, bob_ops, psi, dim_a: int, dim_b: int) -> np.ndarray:
    ops = [word_operator(w, alice_ops, bob_ops, dim_a, dim_b) for w in words]
    vecs = [o @ psi for o in ops]
    n = len(words)
    G = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            G[i, j] = vecs[i] @ vecs[j]
    return G


def singlet_operators(alice_deg, bob_deg):
    """Qubit projectors realizing the flipped singlet behavior on ``SINGLET``."""
    alice = [[polarizer(a), polarizer(a + 90)] for a in alice_deg]
    bob = [[polarizer(b + 90), polarizer(b)] for b in bob_deg]
    return alice, bob


def random_projective_measurements(rng, n_inputs: int, n_outcomes: int, dim: int):
    """Real projective measurements splitting R^dim into n_outcomes blocks."""
    meas = []
    sizes = [dim // n_outcomes + (1 if i < dim % n_outcomes else 0) for i in range(n_outcomes)]
    for _ in range(n_inputs):
        q, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
        projs, start = [], 0
        for s in sizes:
            cols = q[:, start:start + s]
            projs.append(cols @ cols.T)
            start += s
        meas.append(projs)
    return meas


def dense_slack(problem, y):
    """Sum_i y_i A_i - C per block, built straight from the functionals."""
    mats = [np.zeros((n, n)) for n in problem.blocks]

    def add(f, scale):
        for (k, i, j), c in f.items():
            if i == j:
                mats[k][i, i] += scale * c
            else:
                mats[k][i, j] += scale * c / 2
                mats[k][j, i] += scale * c / 2

    for yi, (f, _) in zip(y, problem.constraints):
        add(f, yi)
    add(problem.objective, -1.0)
    return mats


def dual_bound(problem, y) -> float:
    return float(sum(yi * r for yi, (_, r) in zip(y, problem.constraints)))


def h2(p: float) -> float:
    if p <= 0 or p >= 1:
        return 0.0
    return float(-p * np.log2(p) - (1 - p) * np.log2(1 - p))
