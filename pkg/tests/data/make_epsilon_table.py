"""Regenerate epsilon_table.json with 40-digit arithmetic.

Formulas are typed in from scratch here, independent of the package:
    python3 tests/data/make_epsilon_table.py
"""

import json
from pathlib import Path

import mpmath as mp

mp.mp.dps = 40

ROWS = [
    dict(n=10**4, k=0.5, p=0.5, eta=0.2, sizes=[2, 2, 2, 3], l1=17.13, p_ref=0.6076, delta=0.02, kappa=0.05, m=3000, h_min=5000.5, s=2000),
    dict(n=10**5, k=0.3, p=0.9, eta=0.02, sizes=[2, 2, 2, 3], l1=2.5, p_ref=0.5, delta=0.0, kappa=0.1, m=800, h_min=1234.25, s=1100),
    dict(n=10**6, k=0.1, p=0.9, eta=1e-3, sizes=[2, 2, 2, 3], l1=17.13, p_ref=0.6076, delta=0.01, kappa=0.05, m=200000, h_min=300000.0, s=99000),
    dict(n=10**7, k=0.5, p=0.5, eta=0.2, sizes=[2, 2, 2, 3], l1=1.0, p_ref=0.7285, delta=0.06, kappa=0.1, m=4000000, h_min=5e6, s=4e6),
    dict(n=12345, k=0.25, p=0.75, eta=0.05, sizes=[2, 2, 2, 2], l1=4.0, p_ref=0.55, delta=0.03, kappa=0.07, m=4000, h_min=700.0, s=600),
    dict(n=10**8, k=0.05, p=0.95, eta=5e-4, sizes=[2, 2, 2, 2], l1=30.0, p_ref=0.51, delta=0.005, kappa=0.02, m=10**6, h_min=2.5e7, s=2e7),
    dict(n=500, k=0.9, p=0.2, eta=0.3, sizes=[3, 3, 2, 2], l1=0.5, p_ref=0.34, delta=0.1, kappa=0.2, m=450, h_min=80.0, s=79.0),
]


def h(x):
    x = mp.mpf(x)
    if x <= 0 or x >= 1:
        return mp.mpf(0)
    return -x * mp.log(x, 2) - (1 - x) * mp.log(1 - x, 2)


def row_values(r):
    X, Y, U, V = (mp.mpf(s) for s in r["sizes"])
    n, k, p, eta = mp.mpf(r["n"]), mp.mpf(r["k"]), mp.mpf(r["p"]), mp.mpf(r["eta"])
    t_prime = k * k * p * n / (U * V)
    filt = X * Y * U * V * mp.exp(-t_prime * eta**2 / (8 * X * Y))
    robust = filt + mp.exp(-2 * n * ((1 - p) * (1 - k) ** 2) ** 2) + U * V * mp.exp(-2 * n * ((1 - p) * k * k / (U * V)) ** 2)
    pen = mp.mpf(r["p_ref"]) + U * V * eta * mp.mpf(r["l1"])
    n_ir, delta, kappa, m = mp.mpf(r["n"]), mp.mpf(r["delta"]), mp.mpf(r["kappa"]), mp.mpf(r["m"])
    ir = mp.exp(-2 * kappa**2 * n_ir) + mp.power(2, n_ir * h(delta + kappa) - m)
    gap = mp.mpf(r["h_min"]) - mp.mpf(r["s"])
    pa = min(mp.mpf(1), mp.power(2, -gap / 2))
    d = X * Y * U * V
    ps = (d * d - 1) * mp.log(n + 1, 2)
    return {
        "log2_eps_filter": mp.log(filt, 2),
        "log2_eps_robust": mp.log(robust, 2),
        "penalized_guess_unclamped": pen,
        "log2_ir_error_bound": mp.log(ir, 2),
        "log2_pa_distance": mp.log(pa, 2),
        "log2_post_selection": ps,
    }


def main():
    table = []
    for r in ROWS:
        vals = {key: mp.nstr(v, 25) for key, v in row_values(r).items()}
        table.append({"params": r, "expected": vals})
    out = Path(__file__).with_name("epsilon_table.json")
    out.write_text(json.dumps(table, indent=1) + "\n")


if __name__ == "__main__":
    main()
