import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pufhsm import puf
from pufhsm.errors import UnknownChallengeError, UnsupportedOperationError
from pufhsm.puf import (CrpRow, CrpTable, PufInstance, Verdict, bits_str, eval_noisy, evaluate,
                        inter_instance_uniqueness, load_table3, new_simulated_puf, paper_uniqueness,
                        parity_features, reliability, to_bits)

TABLE3_PAIRS = [
    ("0000000000000000", "1111111111011110"),
    ("1000000000000000", "1111111111011110"),
    ("0010000000000000", "1111111111011110"),
    ("0001000000000000", "1111111111011110"),
    ("0100000000000000", "0111111111011110"),
    ("0000100000000000", "1111111111111110"),
    ("0000010000000000", "1111111111111010"),
    ("0000001000000000", "1111111111011000"),
    ("0000000100000000", "1111111011111100"),
    ("0000000010000000", "1001111111111101"),
    ("0000000000000001", "1001000010101001"),
]


def direct_features(c):
    n = len(c)
    return [int(np.prod([1 - 2 * c[j] for j in range(i, n)])) for i in range(n)] + [1]


def test_parity_features_brute_force():
    for n in range(1, 5):
        for c in itertools.product((0, 1), repeat=n):
            assert parity_features(np.array([c]))[0].tolist() == direct_features(c)


def test_flipping_bit_j_changes_features_only_up_to_j():
    for n in range(1, 5):
        for c in itertools.product((0, 1), repeat=n):
            base = direct_features(c)
            for j in range(n):
                flipped = list(c)
                flipped[j] ^= 1
                changed = [i for i, (a, b) in enumerate(zip(base, direct_features(flipped))) if a != b]
                assert changed == list(range(j + 1))


def test_seeded_instances_are_identical():
    a, b = new_simulated_puf(7, 16, 16), new_simulated_puf(7, 16, 16)
    assert np.array_equal(a.weights, b.weights)
    assert a.weights.shape == (16, 17)


def test_different_seeds_disagree_somewhere():
    a, b = new_simulated_puf(7), new_simulated_puf(8)
    ch = puf.random_challenges(100, seed=1)
    assert np.any(puf.eval_many(a, ch) != puf.eval_many(b, ch))


@pytest.mark.parametrize("stages,bits", [(0, 16), (16, 0)])
def test_zero_dimensions_rejected(stages, bits):
    with pytest.raises(ValueError):
        new_simulated_puf(7, stages, bits)


def test_table3_fixture_matches_transcription():
    table = load_table3()
    assert len(table) == 22
    assert [(bits_str(r.challenge), bits_str(r.response)) for r in table.rows] == TABLE3_PAIRS * 2
    verdicts = "".join(r.verdict.value for r in table.rows)
    assert verdicts == "VVVVxxxxxxx" * 2


def test_table_backed_lookup():
    p = PufInstance.from_table(load_table3())
    assert bits_str(evaluate(p, "0000000000000000")) == "1111111111011110"
    assert bits_str(evaluate(p, "0000000000000001")) == "1001000010101001"
    for c, r in TABLE3_PAIRS:
        assert bits_str(evaluate(p, c)) == r


def test_table_backed_miss_is_an_error():
    p = PufInstance.from_table(load_table3())
    with pytest.raises(UnknownChallengeError):
        evaluate(p, "1111111111111111")


def test_width_mismatch_rejected():
    with pytest.raises(ValueError):
        evaluate(new_simulated_puf(1), "0101")
    with pytest.raises(ValueError):
        evaluate(PufInstance.from_table(load_table3()), "0" * 15)


def test_dominant_positive_constant_forces_ones():
    w = np.random.default_rng(0).uniform(0, 1, size=(4, 9))
    w[2, -1] = 100.0
    w[2, :-1] = np.abs(w[2, :-1])
    p = PufInstance(weights=w)
    for c in itertools.product((0, 1), repeat=8):
        assert evaluate(p, c)[2] == 1


def test_zero_sum_tie_gives_zero():
    p = PufInstance(weights=np.zeros((3, 5)))
    assert evaluate(p, (1, 0, 1, 1)) == (0, 0, 0)


@given(seed=st.integers(0, 2**32), challenge=st.lists(st.integers(0, 1), min_size=16, max_size=16))
@settings(max_examples=50)
def test_eval_deterministic_and_width_closed(seed, challenge):
    p = new_simulated_puf(seed)
    r1, r2 = evaluate(p, challenge), evaluate(p, challenge)
    assert r1 == r2 and len(r1) == len(challenge)


def test_eval_matches_direct_dot_product():
    p = new_simulated_puf(3, 8, 5)
    for c in itertools.product((0, 1), repeat=8):
        expected = tuple(int(np.dot(p.weights[k], direct_features(c)) > 0) for k in range(5))
        assert evaluate(p, c) == expected


def test_noisy_eval_with_zero_noise_is_exact():
    p = new_simulated_puf(4)
    for c in puf.random_challenges(20, seed=2):
        assert eval_noisy(p, c, 0.0, 123) == evaluate(p, c)


def test_huge_noise_makes_bits_coin_flips():
    p = new_simulated_puf(4)
    c = tuple(puf.random_challenges(1, seed=3)[0])
    ref = np.array(evaluate(p, c))
    sigma = 10 * np.abs(p.weights).max() * (p.n_stages + 1)
    draws = np.array([eval_noisy(p, c, sigma, s) for s in range(1000)])
    flip_rate = (draws != ref).mean(axis=0)
    assert np.all((flip_rate > 0.35) & (flip_rate < 0.65)), flip_rate


def test_noisy_eval_rejects_table_and_negative_sigma():
    with pytest.raises(UnsupportedOperationError):
        eval_noisy(PufInstance.from_table(load_table3()), "0" * 16, 0.0, 1)
    with pytest.raises(ValueError):
        eval_noisy(new_simulated_puf(1), "0" * 16, -1.0, 1)


def test_paper_uniqueness_on_table3():
    assert paper_uniqueness(load_table3()) == pytest.approx(16 / 22)


def _single_experiment(responses):
    rows = [CrpRow(1, to_bits(format(i, "016b")), to_bits(r), Verdict.REJECTED) for i, r in enumerate(responses)]
    return CrpTable(tuple(rows))


def test_paper_uniqueness_trivial_cases():
    assert paper_uniqueness(_single_experiment(["1" * 16] * 5)) == pytest.approx(0.2)
    assert paper_uniqueness(_single_experiment([format(i, "016b") for i in range(5)])) == 1.0
    with pytest.raises(ValueError):
        paper_uniqueness(CrpTable(()))


@given(st.lists(st.integers(0, 3), min_size=1, max_size=30))
def test_paper_uniqueness_bounds(codes):
    t = _single_experiment([format(c, "016b") for c in codes])
    u = paper_uniqueness(t)
    assert 0 < u <= 1
    assert (u == 1) == (len(set(codes)) == len(codes))


def test_crp_table_invariants():
    row = CrpRow(1, to_bits("01"), to_bits("10"), Verdict.ACCEPTED)
    with pytest.raises(ValueError):
        CrpTable((row, row))
    with pytest.raises(ValueError):
        CrpTable((row, CrpRow(1, to_bits("011"), to_bits("101"), Verdict.ACCEPTED)))


def test_crp_csv_roundtrip(tmp_path):
    t = load_table3()
    assert t.to_csv().splitlines()[0] == "experiment,challenge,response,verdict"
    t.save(tmp_path / "t.csv")
    assert CrpTable.load(tmp_path / "t.csv") == t
    with pytest.raises(ValueError):
        CrpTable.from_csv("exp,c,r,v\n")


def test_inter_instance_uniqueness():
    table = load_table3()
    clones = [PufInstance.from_table(table), PufInstance.from_table(table)]
    chs = [c for c, _ in TABLE3_PAIRS]
    assert inter_instance_uniqueness(clones, chs) == 0.0
    with pytest.raises(ValueError):
        inter_instance_uniqueness(clones[:1], chs)


def test_inter_instance_uniqueness_brute_force_small():
    pop = [new_simulated_puf(s, 6, 4) for s in range(4)]
    chs = list(itertools.product((0, 1), repeat=6))
    got = inter_instance_uniqueness(pop, chs)
    dists = [puf.hamming(evaluate(a, c), evaluate(b, c)) / 4
             for a, b in itertools.combinations(pop, 2) for c in chs]
    assert got == pytest.approx(np.mean(dists))


def test_reliability():
    p = new_simulated_puf(5)
    chs = puf.random_challenges(200, seed=4)
    assert reliability(p, chs, 5, 0.0) == 0.0
    assert reliability(p, chs, 1000, 1e6, rng_seed=1) == pytest.approx(0.5, abs=0.01)
    mid = reliability(p, chs, 20, 0.5, rng_seed=1)
    assert 0.0 < mid < 0.5
    with pytest.raises(ValueError):
        reliability(p, chs, 1, 0.0)


def test_puf_stats_bounds():
    puf.PufStats(0.7, 0.5, 0.0)
    with pytest.raises(ValueError):
        puf.PufStats(1.2, 0.5, 0.0)
