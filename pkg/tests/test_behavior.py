import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diqkd.behavior import (
    Alphabets,
    Behavior,
    BehaviorError,
    BehaviorEstimate,
    MeasurementAngles,
    chsh_value,
    deterministic_behavior,
    estimate_from_counts,
    qber,
    sample_outcomes,
    singlet_behavior,
    statistical_distance,
    uniform_behavior,
    validate,
)
from oracles import singlet_table

HI = (2 + math.sqrt(2)) / 8
LO = (2 - math.sqrt(2)) / 8


@given(rho=st.floats(0, 1), flip=st.booleans(),
       alice=st.lists(st.floats(-180, 180), min_size=1, max_size=3),
       bob=st.lists(st.floats(-180, 180), min_size=1, max_size=3))
@settings(max_examples=60, deadline=None)
def test_singlet_matches_density_matrix(rho, flip, alice, bob):
    b = singlet_behavior(rho, MeasurementAngles(tuple(alice), tuple(bob), bob_flip=flip))
    np.testing.assert_allclose(b.table, singlet_table(rho, alice, bob, flip), atol=1e-13)
    assert validate(b).ok


def test_flipped_chsh_table_is_the_published_box():
    t = singlet_behavior(0.0, MeasurementAngles.chsh()).table
    corr = np.array([[HI, LO], [LO, HI]])
    anti = np.array([[LO, HI], [HI, LO]])
    for u, v in [(0, 0), (0, 1), (1, 0)]:
        np.testing.assert_allclose(t[u, v], corr, atol=1e-15)
    np.testing.assert_allclose(t[1, 1], anti, atol=1e-15)


def test_no_flip_relabels_bob():
    a = singlet_behavior(0.1, MeasurementAngles.ekert(bob_flip=False)).table
    b = singlet_behavior(0.1, MeasurementAngles.ekert()).table
    np.testing.assert_allclose(a, b[:, :, :, ::-1])


def test_ekert_key_pair_and_chsh_value():
    b = singlet_behavior(0.0, MeasurementAngles.ekert())
    assert qber(b, 0, 2) == pytest.approx(0.0, abs=1e-15)
    assert chsh_value(singlet_behavior(0.0, MeasurementAngles.chsh())) == pytest.approx(2 * math.sqrt(2))
    for rho in (0.0, 0.1, 0.3):
        # the raw-key error of the noise model is half the noise weight
        assert qber(singlet_behavior(rho, MeasurementAngles.ekert()), 0, 2) == pytest.approx(rho / 2)


def test_full_noise_is_uniform():
    b = singlet_behavior(1.0, MeasurementAngles.ekert())
    np.testing.assert_allclose(b.table, 0.25)


@pytest.mark.parametrize("rho", [-0.1, 1.5, float("nan")])
def test_rejects_bad_noise(rho):
    with pytest.raises(BehaviorError):
        singlet_behavior(rho, MeasurementAngles.chsh())


def test_json_round_trip(tmp_path):
    b = singlet_behavior(0.07, MeasurementAngles.ekert())
    path = tmp_path / "b.json"
    b.dump(path)
    c = Behavior.load(path)
    assert c.alphabets == b.alphabets
    np.testing.assert_array_equal(c.table, b.table)
    assert c.meta["rho"] == 0.07


def test_load_rejects_signalling_table(tmp_path):
    t = np.full((2, 2, 2, 2), 0.25)
    t[0, 0] = [[0.5, 0.0], [0.5, 0.0]]  # Bob's marginal now depends on u
    doc = {"alphabets": Alphabets(2, 2, 2, 2).to_dict(), "table": t.tolist()}
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(BehaviorError, match="marginal"):
        Behavior.load(path)
    assert not validate(Behavior.load(path, check=False)).ok


def test_shape_mismatch():
    with pytest.raises(BehaviorError):
        Behavior(Alphabets(2, 2, 2, 2), np.zeros((2, 2, 2)))
    with pytest.raises(BehaviorError):
        Alphabets(0, 2, 2, 2)


def test_tensor_product_layout():
    b1 = singlet_behavior(0.1, MeasurementAngles.chsh())
    b2 = deterministic_behavior(Alphabets(2, 2, 1, 3), [1], [0, 1, 1])
    t = b1.tensor(b2)
    a2 = b2.alphabets
    assert t.alphabets == Alphabets(4, 4, 2, 6)
    for u1, v1, x1, y1, u2, v2, x2, y2 in np.ndindex(2, 2, 2, 2, 1, 3, 2, 2):
        got = t.table[u1 * a2.nu + u2, v1 * a2.nv + v2, x1 * a2.nx + x2, y1 * a2.ny + y2]
        assert got == pytest.approx(b1.table[u1, v1, x1, y1] * b2.table[u2, v2, x2, y2], abs=1e-15)
    assert validate(t).ok


def test_deterministic_and_uniform():
    a = Alphabets(2, 3, 2, 2)
    d = deterministic_behavior(a, [0, 1], [2, 0])
    assert validate(d).ok
    assert d.table[1, 0, 1, 2] == 1.0
    assert statistical_distance(d, d) == 0.0
    u = uniform_behavior(a)
    np.testing.assert_allclose(u.table.sum(axis=(2, 3)), 1.0)
    assert 0 < statistical_distance(d, u) <= 1


def test_estimate_recovers_behavior_within_hoeffding():
    # envelope 4 * sqrt(ln(2/alpha) / 2T) per cell at alpha = 0.01
    b = singlet_behavior(0.2, MeasurementAngles.ekert())
    rng = np.random.default_rng(7)
    n = 200_000
    u = rng.integers(0, 2, n)
    v = rng.integers(0, 3, n)
    x, y = sample_outcomes(b, u, v, rng)
    est = BehaviorEstimate.from_rounds(b.alphabets, u, v, x, y)
    p = estimate_from_counts(est)
    T = est.totals
    env = 4 * np.sqrt(np.log(2 / 0.01) / (2 * T))
    assert np.all(np.abs(p.table - b.table) <= env[:, :, None, None])


def test_estimate_needs_requested_cells():
    a = Alphabets(2, 2, 2, 2)
    counts = np.zeros(a.shape, dtype=int)
    counts[0, 0, 0, 0] = 5
    with pytest.raises(BehaviorError):
        estimate_from_counts(BehaviorEstimate(a, counts))
    p = estimate_from_counts(BehaviorEstimate(a, counts), cells=[(0, 0)])
    assert p.table[0, 0, 0, 0] == 1.0 and p.table[1, 1, 0, 0] == 0.25
    with pytest.raises(BehaviorError):
        BehaviorEstimate(a, -counts - 1)
