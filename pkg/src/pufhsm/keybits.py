"""Turn a private-key file plus PIN into eight PUF challenges and an auth token."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .puf import Bits, PufInstance, bits_str, evaluate

N_BUFFERS = 8
BUFFER_BITS = 16
CHUNK_BITS = N_BUFFERS * BUFFER_BITS
TOKEN_BITS = N_BUFFERS * BUFFER_BITS
PIN_MIN, PIN_MAX = 4, 12


@dataclass(frozen=True)
class Pin:
    digits: str

    def __post_init__(self):
        d = self.digits
        if not (PIN_MIN <= len(d) <= PIN_MAX) or not d.isascii() or not d.isdigit():
            raise ValueError(f"PIN must be {PIN_MIN}-{PIN_MAX} decimal digits")

    def __repr__(self) -> str:
        return "Pin(****)"

    def mask(self) -> int:
        """16-bit mask: XOR of the digit bytes, repeated into both halves."""
        folded = 0
        for b in self.digits.encode("ascii"):
            folded ^= b
        return (folded << 8) | folded


@dataclass(frozen=True)
class ChallengeSet:
    challenges: Tuple[Bits, ...]

    def __post_init__(self):
        if len(self.challenges) != N_BUFFERS:
            raise ValueError(f"a challenge set holds exactly {N_BUFFERS} challenges")

    def __iter__(self):
        return iter(self.challenges)


@dataclass(frozen=True)
class AuthToken:
    bits: Bits

    def __post_init__(self):
        if len(self.bits) != TOKEN_BITS:
            raise ValueError(f"auth token must be {TOKEN_BITS} bits, got {len(self.bits)}")

    def to_bytes(self) -> bytes:
        return np.packbits(np.array(self.bits, dtype=np.uint8)).tobytes()

    @classmethod
    def from_bytes(cls, raw: bytes) -> "AuthToken":
        return cls(tuple(int(b) for b in np.unpackbits(np.frombuffer(raw, dtype=np.uint8))))

    def hex(self) -> str:
        return self.to_bytes().hex()

    def __str__(self) -> str:
        return bits_str(self.bits)


def key_to_bits(key_file: bytes) -> np.ndarray:
    """Key bytes as a 0/1 array, most significant bit of each byte first."""
    if not key_file:
        raise ValueError("key file is empty")
    return np.unpackbits(np.frombuffer(bytes(key_file), dtype=np.uint8))


def derive_challenges(bits: np.ndarray, pin: Pin) -> ChallengeSet:
    """Fold the key bits into eight 16-bit buffers and mask them with the PIN.

    Bits are zero-padded to a multiple of 128; 16-bit word ``i`` feeds
    buffer ``i mod 8``, and each buffer is the XOR of its words.
    """
    bits = np.asarray(bits, dtype=np.uint8).ravel()
    if bits.size == 0:
        raise ValueError("need at least one key bit")
    if np.any(bits > 1):
        raise ValueError("key bits must be 0 or 1")
    pad = (-bits.size) % CHUNK_BITS
    words = np.concatenate([bits, np.zeros(pad, dtype=np.uint8)]).reshape(-1, N_BUFFERS, BUFFER_BITS)
    folded = np.bitwise_xor.reduce(words, axis=0)
    mask = np.array([(pin.mask() >> (BUFFER_BITS - 1 - i)) & 1 for i in range(BUFFER_BITS)], dtype=np.uint8)
    return ChallengeSet(tuple(tuple(int(b) for b in row ^ mask) for row in folded))


def derive_auth_token(puf: PufInstance, cs: ChallengeSet) -> AuthToken:
    if puf.n_stages != BUFFER_BITS or puf.n_bits != BUFFER_BITS:
        raise ValueError(f"auth tokens need a {BUFFER_BITS}-bit PUF, got {puf.n_stages}->{puf.n_bits}")
    out: Tuple[int, ...] = ()
    for c in cs:
        out += evaluate(puf, c)
    return AuthToken(out)


def token_for(puf: PufInstance, key_file: bytes, pin: Pin) -> AuthToken:
    return derive_auth_token(puf, derive_challenges(key_to_bits(key_file), pin))
