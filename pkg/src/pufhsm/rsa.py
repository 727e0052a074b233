"""Textbook RSA: seeded key generation and square-and-multiply exponentiation.

No padding scheme is applied here; callers embed their own block layout.
This is NOT semantically secure and is meant for the simulated HSM only.
"""
from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass
from typing import Optional, Tuple

DEFAULT_EXPONENT = 65537
MIN_MODULUS_BITS = 32
MR_ROUNDS = 64

_SMALL_PRIMES = [p for p in range(3, 2000, 2) if all(p % d for d in range(3, int(p ** 0.5) + 1, 2))]


@dataclass(frozen=True)
class RsaKeyPair:
    n: int
    e: int
    d: int
    p: int
    q: int

    @property
    def phi(self) -> int:
        return (self.p - 1) * (self.q - 1)

    @property
    def public(self) -> Tuple[int, int]:
        return self.e, self.n

    @property
    def private(self) -> Tuple[int, int]:
        return self.d, self.n

    @property
    def modulus_bits(self) -> int:
        return self.n.bit_length()


def rsa_apply(m: int, exponent: int, modulus: int) -> int:
    """Return ``m ** exponent mod modulus`` by left-to-right square-and-multiply."""
    if modulus < 2:
        raise ValueError("modulus must be at least 2")
    if exponent < 0:
        raise ValueError("exponent must be non-negative")
    if not 0 <= m < modulus:
        raise ValueError(f"message must satisfy 0 <= m < modulus (got m with {m.bit_length()} bits)")
    result = 1
    for bit in bin(exponent)[2:]:
        result = result * result % modulus
        if bit == "1":
            result = result * m % modulus
    return result % modulus


def egcd(a: int, b: int) -> Tuple[int, int, int]:
    """Extended Euclid: returns ``(g, x, y)`` with ``a*x + b*y == g``."""
    x0, x1, y0, y1 = 1, 0, 0, 1
    while b:
        q, a, b = a // b, b, a % b
        x0, x1 = x1, x0 - q * x1
        y0, y1 = y1, y0 - q * y1
    return a, x0, y0


def modinv(a: int, m: int) -> int:
    g, x, _ = egcd(a % m, m)
    if g != 1:
        raise ValueError(f"{a} has no inverse modulo {m}")
    return x % m


def is_probable_prime(n: int, rounds: int = MR_ROUNDS, rng: Optional[random.Random] = None) -> bool:
    """Miller-Rabin with ``rounds`` random bases drawn from ``rng``."""
    if n < 2:
        return False
    for p in (2, *_SMALL_PRIMES):
        if n == p:
            return True
        if n % p == 0:
            return False
    rng = rng or random.Random(n)
    d, s = n - 1, 0
    while d % 2 == 0:
        d //= 2
        s += 1
    for _ in range(rounds):
        a = rng.randrange(2, n - 1)
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(s - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


def _random_prime(bits: int, rng: random.Random) -> int:
    while True:
        # top two bits set so that p*q has exactly 2*bits bits
        cand = rng.getrandbits(bits) | (3 << (bits - 2)) | 1
        if is_probable_prime(cand, MR_ROUNDS, rng):
            return cand


def choose_exponent(phi: int, preferred: int = DEFAULT_EXPONENT) -> int:
    """``preferred`` if it is a valid exponent for ``phi``, else the next odd coprime one.

    Searching restarts from 3 when ``preferred`` is not below ``phi``.
    """
    e = preferred if 1 < preferred < phi else 3
    if e % 2 == 0:
        e += 1
    while e < phi:
        if math.gcd(e, phi) == 1:
            return e
        e += 2
    raise ValueError(f"no valid public exponent below phi={phi}")


def rsa_keygen(
    modulus_bits: int = 2048,
    rng_seed: int = 0,
    *,
    public_exponent: int = DEFAULT_EXPONENT,
    fixed_primes: Optional[Tuple[int, int]] = None,
) -> RsaKeyPair:
    """Generate an RSA key pair deterministically from ``rng_seed``.

    ``fixed_primes`` bypasses prime generation (and the size check), which
    is how the toy textbook example with p=61, q=53 is reproduced.
    """
    if fixed_primes is not None:
        p, q = fixed_primes
        if p == q:
            raise ValueError("p and q must differ")
    else:
        if modulus_bits < MIN_MODULUS_BITS or modulus_bits % 2:
            raise ValueError(f"modulus_bits must be an even number >= {MIN_MODULUS_BITS}, got {modulus_bits}")
        rng = random.Random(rng_seed)
        while True:
            p = _random_prime(modulus_bits // 2, rng)
            q = _random_prime(modulus_bits // 2, rng)
            if p != q and math.gcd(public_exponent, (p - 1) * (q - 1)) == 1:
                break
    n = p * q
    phi = (p - 1) * (q - 1)
    e = choose_exponent(phi, public_exponent)
    d = modinv(e, phi)
    pair = RsaKeyPair(n=n, e=e, d=d, p=p, q=q)
    assert pair.n == pair.p * pair.q and pair.d * pair.e % phi == 1
    return pair


# --- key files: small JSON documents with hex integers ---

def public_key_json(pair: RsaKeyPair) -> str:
    return json.dumps({"kind": "rsa-public", "n": hex(pair.n), "e": hex(pair.e)}, indent=1) + "\n"


def private_key_json(pair: RsaKeyPair) -> str:
    doc = {"kind": "rsa-private", **{k: hex(getattr(pair, k)) for k in ("n", "e", "d", "p", "q")}}
    return json.dumps(doc, indent=1) + "\n"


def parse_key_file(text: str) -> dict:
    """Parse a key file into ``{"kind": ..., "n": int, ...}``."""
    try:
        doc = json.loads(text)
        kind = doc["kind"]
        fields = ("n", "e") if kind == "rsa-public" else ("n", "e", "d", "p", "q")
        if kind not in ("rsa-public", "rsa-private"):
            raise ValueError
        return {"kind": kind, **{f: int(doc[f], 16) for f in fields}}
    except (ValueError, KeyError, TypeError):
        raise ValueError("not a valid key file") from None


def load_keypair(text: str) -> RsaKeyPair:
    doc = parse_key_file(text)
    if doc["kind"] != "rsa-private":
        raise ValueError("expected a private key file")
    pair = RsaKeyPair(doc["n"], doc["e"], doc["d"], doc["p"], doc["q"])
    if pair.n != pair.p * pair.q or pair.d * pair.e % pair.phi != 1:
        raise ValueError("private key file is inconsistent")
    return pair
