import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pufhsm.rsa import (RsaKeyPair, choose_exponent, egcd, is_probable_prime, load_keypair, modinv,
                        private_key_json, rsa_apply, rsa_keygen)


def brute_force_inverse(e, phi):
    return next(d for d in range(1, phi) if d * e % phi == 1)


def test_toy_textbook_pair():
    pair = rsa_keygen(fixed_primes=(61, 53), public_exponent=17)
    assert (pair.n, pair.phi, pair.e) == (3233, 3120, 17)
    assert pair.d == brute_force_inverse(17, 3120) == 2753


def test_toy_encrypt_decrypt():
    assert rsa_apply(65, 17, 3233) == 2790 == pow(65, 17, 3233)
    assert rsa_apply(2790, 2753, 3233) == 65


def test_fixed_points():
    pair = rsa_keygen(fixed_primes=(61, 53), public_exponent=17)
    for m in (0, 1):
        assert rsa_apply(m, pair.e, pair.n) == m
        assert rsa_apply(m, pair.d, pair.n) == m


def test_message_must_be_below_modulus():
    with pytest.raises(ValueError):
        rsa_apply(3233, 17, 3233)
    with pytest.raises(ValueError):
        rsa_apply(-1, 17, 3233)


@given(m=st.integers(min_value=0), e=st.integers(min_value=0, max_value=2**70), n=st.integers(min_value=2))
@settings(max_examples=200)
def test_square_and_multiply_matches_builtin_pow(m, e, n):
    m %= n
    assert rsa_apply(m, e, n) == pow(m, e, n)


def test_egcd_and_modinv():
    g, x, y = egcd(240, 46)
    assert g == 2 and 240 * x + 46 * y == 2
    assert modinv(17, 3120) == 2753
    with pytest.raises(ValueError):
        modinv(6, 3120)


def test_primality_against_trial_division():
    def slow(n):
        return n >= 2 and all(n % d for d in range(2, math.isqrt(n) + 1))
    for n in range(0, 5000):
        assert is_probable_prime(n) == slow(n), n
    # Carmichael numbers fool Fermat but not Miller-Rabin
    for n in (561, 1105, 1729, 2465, 2821, 6601, 8911, 41041, 825265):
        assert not is_probable_prime(n)
    assert is_probable_prime(2**127 - 1)
    assert not is_probable_prime(2**128 + 1)


def test_exponent_fallback():
    assert choose_exponent(3120) == 7  # 65537 >= phi, smallest odd coprime from 3
    phi = 2 * 3 * 65537 * 1009
    expected = next(e for e in range(65539, phi, 2) if math.gcd(e, phi) == 1)
    assert choose_exponent(phi) == expected


@pytest.mark.parametrize("bits", [32, 64, 256, 512])
def test_generated_pairs_satisfy_invariants(bits):
    pair = rsa_keygen(bits, rng_seed=bits)
    assert pair.n == pair.p * pair.q and pair.p != pair.q
    assert pair.n.bit_length() == bits
    assert 1 < pair.e < pair.phi
    assert pair.d * pair.e % pair.phi == 1
    rng = random.Random(bits)
    for _ in range(100):
        m = rng.randrange(pair.n)
        assert rsa_apply(rsa_apply(m, pair.e, pair.n), pair.d, pair.n) == m


def test_keygen_is_deterministic():
    assert rsa_keygen(256, rng_seed=9) == rsa_keygen(256, rng_seed=9)
    assert rsa_keygen(256, rng_seed=9) != rsa_keygen(256, rng_seed=10)


@pytest.mark.parametrize("bits", [0, 16, 30, 33])
def test_keygen_rejects_bad_sizes(bits):
    with pytest.raises(ValueError):
        rsa_keygen(bits, rng_seed=1)


def test_key_file_roundtrip():
    pair = rsa_keygen(256, rng_seed=4)
    assert load_keypair(private_key_json(pair)) == pair
    with pytest.raises(ValueError):
        load_keypair('{"kind": "rsa-public", "n": "0x5", "e": "0x3"}')
    broken = RsaKeyPair(pair.n + 2, pair.e, pair.d, pair.p, pair.q)
    with pytest.raises(ValueError):
        load_keypair(private_key_json(broken))
