"""AES-128 block cipher and counter mode.

The single-block functions follow the textbook round structure
(SubBytes, ShiftRows, MixColumns, AddRoundKey) on a 16-byte state in
column-major order.  Counter mode encrypts many counter blocks at once
with numpy T-tables, which is what makes multi-megabyte payloads usable.
"""
from __future__ import annotations

from typing import Iterator, List, Sequence

import numpy as np

BLOCK_SIZE = 16
KEY_SIZE = 16
ROUNDS = 10


def _build_sbox() -> List[int]:
    # multiplicative inverse in GF(2^8) followed by the affine map
    sbox = [0] * 256
    p = q = 1
    while True:
        p = p ^ ((p << 1) & 0xFF) ^ (0x1B if p & 0x80 else 0)
        q ^= q << 1
        q ^= q << 2
        q ^= q << 4
        q &= 0xFF
        if q & 0x80:
            q ^= 0x09
        x = q ^ _rotl8(q, 1) ^ _rotl8(q, 2) ^ _rotl8(q, 3) ^ _rotl8(q, 4)
        sbox[p] = x ^ 0x63
        if p == 1:
            break
    sbox[0] = 0x63
    return sbox


def _rotl8(x: int, shift: int) -> int:
    return ((x << shift) | (x >> (8 - shift))) & 0xFF


def xtime(a: int) -> int:
    a <<= 1
    return (a ^ 0x11B) if a & 0x100 else a


def gmul(a: int, b: int) -> int:
    """Multiply two bytes in GF(2^8) modulo x^8 + x^4 + x^3 + x + 1."""
    out = 0
    while b:
        if b & 1:
            out ^= a
        a = xtime(a)
        b >>= 1
    return out


SBOX = _build_sbox()
INV_SBOX = [0] * 256
for _i, _v in enumerate(SBOX):
    INV_SBOX[_v] = _i

RCON = [0x01, 0x02, 0x04, 0x08, 0x10, 0x20, 0x40, 0x80, 0x1B, 0x36]

# ShiftRows as a permutation of the column-major state: out[i] = in[SHIFT[i]]
SHIFT = [(i + 4 * (i % 4)) % 16 for i in range(16)]
INV_SHIFT = [0] * 16
for _i, _v in enumerate(SHIFT):
    INV_SHIFT[_v] = _i

_MUL2 = [gmul(x, 2) for x in range(256)]
_MUL3 = [gmul(x, 3) for x in range(256)]
_MUL9 = [gmul(x, 9) for x in range(256)]
_MUL11 = [gmul(x, 11) for x in range(256)]
_MUL13 = [gmul(x, 13) for x in range(256)]
_MUL14 = [gmul(x, 14) for x in range(256)]


def _check_key(key: bytes) -> bytes:
    key = bytes(key)
    if len(key) != KEY_SIZE:
        raise ValueError(f"AES-128 key must be {KEY_SIZE} bytes, got {len(key)}")
    return key


def aes_key_expansion(key: bytes) -> List[bytes]:
    """Expand a 16-byte key into the 11 round keys of AES-128.

    Round key 0 is the key itself; each later word is the word four
    positions back XORed with the previous word, passed through
    RotWord/SubWord/Rcon at every fourth position.
    """
    key = _check_key(key)
    words = [list(key[4 * i:4 * i + 4]) for i in range(4)]
    for i in range(4, 4 * (ROUNDS + 1)):
        temp = list(words[i - 1])
        if i % 4 == 0:
            temp = temp[1:] + temp[:1]
            temp = [SBOX[b] for b in temp]
            temp[0] ^= RCON[i // 4 - 1]
        words.append([a ^ b for a, b in zip(words[i - 4], temp)])
    return [bytes(sum(words[4 * r:4 * r + 4], [])) for r in range(ROUNDS + 1)]


def _check_schedule(schedule: Sequence[bytes]) -> None:
    if len(schedule) != ROUNDS + 1 or any(len(rk) != BLOCK_SIZE for rk in schedule):
        raise ValueError("round key schedule must hold 11 keys of 16 bytes")


def _check_block(block: bytes) -> bytes:
    block = bytes(block)
    if len(block) != BLOCK_SIZE:
        raise ValueError(f"block must be {BLOCK_SIZE} bytes, got {len(block)}")
    return block


def _add_round_key(state: List[int], round_key: bytes) -> List[int]:
    return [s ^ k for s, k in zip(state, round_key)]


def _mix_columns(s: List[int]) -> List[int]:
    out = [0] * 16
    for c in range(0, 16, 4):
        a0, a1, a2, a3 = s[c:c + 4]
        out[c] = _MUL2[a0] ^ _MUL3[a1] ^ a2 ^ a3
        out[c + 1] = a0 ^ _MUL2[a1] ^ _MUL3[a2] ^ a3
        out[c + 2] = a0 ^ a1 ^ _MUL2[a2] ^ _MUL3[a3]
        out[c + 3] = _MUL3[a0] ^ a1 ^ a2 ^ _MUL2[a3]
    return out


def _inv_mix_columns(s: List[int]) -> List[int]:
    out = [0] * 16
    for c in range(0, 16, 4):
        a0, a1, a2, a3 = s[c:c + 4]
        out[c] = _MUL14[a0] ^ _MUL11[a1] ^ _MUL13[a2] ^ _MUL9[a3]
        out[c + 1] = _MUL9[a0] ^ _MUL14[a1] ^ _MUL11[a2] ^ _MUL13[a3]
        out[c + 2] = _MUL13[a0] ^ _MUL9[a1] ^ _MUL14[a2] ^ _MUL11[a3]
        out[c + 3] = _MUL11[a0] ^ _MUL13[a1] ^ _MUL9[a2] ^ _MUL14[a3]
    return out


def aes_encrypt_block(block: bytes, schedule: Sequence[bytes]) -> bytes:
    _check_schedule(schedule)
    state = _add_round_key(list(_check_block(block)), schedule[0])
    for rnd in range(1, ROUNDS + 1):
        state = [SBOX[b] for b in state]
        state = [state[j] for j in SHIFT]
        if rnd != ROUNDS:
            state = _mix_columns(state)
        state = _add_round_key(state, schedule[rnd])
    return bytes(state)


def aes_decrypt_block(block: bytes, schedule: Sequence[bytes]) -> bytes:
    _check_schedule(schedule)
    state = _add_round_key(list(_check_block(block)), schedule[ROUNDS])
    for rnd in range(ROUNDS - 1, -1, -1):
        state = [state[j] for j in INV_SHIFT]
        state = [INV_SBOX[b] for b in state]
        state = _add_round_key(state, schedule[rnd])
        if rnd:
            state = _inv_mix_columns(state)
    return bytes(state)


# --- vectorised encryption (counter mode only ever encrypts) ---------------

def _te_tables() -> np.ndarray:
    # column word packed little-endian: byte r of the column sits at bits 8r
    te0 = np.array(
        [_MUL2[s] | (s << 8) | (s << 16) | (_MUL3[s] << 24) for s in SBOX],
        dtype=np.uint32,
    )
    return np.stack([te0, _rot(te0, 8), _rot(te0, 16), _rot(te0, 24)])


def _rot(t: np.ndarray, n: int) -> np.ndarray:
    return ((t << np.uint32(n)) | (t >> np.uint32(32 - n))).astype(np.uint32)


_TE = _te_tables()
_SBOX_NP = np.array(SBOX, dtype=np.uint8)


def encrypt_blocks(blocks: np.ndarray, schedule: Sequence[bytes]) -> np.ndarray:
    """Encrypt an ``(N, 16)`` uint8 array of blocks; returns a new array."""
    _check_schedule(schedule)
    blocks = np.ascontiguousarray(blocks, dtype=np.uint8)
    if blocks.ndim != 2 or blocks.shape[1] != BLOCK_SIZE:
        raise ValueError("blocks must have shape (N, 16)")
    rk = [np.frombuffer(k, dtype="<u4") for k in schedule]
    te0, te1, te2, te3 = _TE
    state = blocks.view("<u4") ^ rk[0]
    for rnd in range(1, ROUNDS):
        b = state.view(np.uint8)
        nxt = np.empty_like(state)
        for c in range(4):
            nxt[:, c] = (
                te0[b[:, 4 * c]]
                ^ te1[b[:, 4 * ((c + 1) % 4) + 1]]
                ^ te2[b[:, 4 * ((c + 2) % 4) + 2]]
                ^ te3[b[:, 4 * ((c + 3) % 4) + 3]]
                ^ rk[rnd][c]
            )
        state = nxt
    out = _SBOX_NP[state.view(np.uint8)[:, SHIFT]]
    return out ^ np.frombuffer(schedule[ROUNDS], dtype=np.uint8)


_MASK64 = (1 << 64) - 1


def _counter_blocks(iv: bytes, start: int, count: int) -> np.ndarray:
    # block i of the keystream encrypts (iv + i) mod 2^128, big-endian
    blocks = np.empty((count, BLOCK_SIZE), dtype=np.uint8)
    value = (int.from_bytes(iv, "big") + start) % (1 << 128)
    done = 0
    while done < count:
        low = value & _MASK64
        run = min(count - done, (1 << 64) - low)
        blocks[done:done + run, :8] = np.frombuffer((value >> 64).to_bytes(8, "big"), dtype=np.uint8)
        lows = np.arange(run, dtype=np.uint64) + np.uint64(low)
        blocks[done:done + run, 8:] = lows.astype(">u8").view(np.uint8).reshape(run, 8)
        done += run
        value = (value + run) % (1 << 128)
    return blocks


class CtrStream:
    """Incremental counter-mode transformer.

    Feeding the data in pieces of any size gives the same output as a
    single :func:`ctr_transform` call over the concatenation.
    """

    def __init__(self, key: bytes, iv: bytes):
        self._schedule = aes_key_expansion(key)
        self._iv = _check_iv(iv)
        self._offset = 0

    def update(self, data: bytes) -> bytes:
        n = len(data)
        if n == 0:
            return b""
        first = self._offset // BLOCK_SIZE
        skip = self._offset % BLOCK_SIZE
        count = -(-(skip + n) // BLOCK_SIZE)
        ks = encrypt_blocks(_counter_blocks(self._iv, first, count), self._schedule)
        ks = ks.reshape(-1)[skip:skip + n]
        self._offset += n
        buf = np.frombuffer(data, dtype=np.uint8)
        return (buf ^ ks).tobytes()


def _check_iv(iv: bytes) -> bytes:
    iv = bytes(iv)
    if len(iv) != BLOCK_SIZE:
        raise ValueError(f"IV must be {BLOCK_SIZE} bytes, got {len(iv)}")
    return iv


CHUNK = 1 << 20


def iter_chunks(data: bytes, size: int = CHUNK) -> Iterator[memoryview]:
    view = memoryview(data)
    for i in range(0, len(view), size):
        yield view[i:i + size]


def ctr_transform(key: bytes, iv: bytes, data: bytes) -> bytes:
    """Encrypt or decrypt ``data`` in counter mode; output length equals input length."""
    stream = CtrStream(_check_key(key), iv)
    return b"".join(stream.update(chunk) for chunk in iter_chunks(data))
