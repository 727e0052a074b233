"""Hybrid envelope: AES-128-CTR payload plus an RSA-wrapped AES key.

File layouts (all integers big-endian)::

    envelope  : "PUFHSM01" | version u8 | cipher_id u8 | iv[16] | payload_len u64
                | payload[payload_len] | sha256(plaintext)[32]
    wrapped   : "PUFWKEY1" | modulus_bits u16 | rsa(block)[modulus_bits / 8]

The wrapped block is ``0x01 | 13 random nonzero bytes | 0x00 | key[16]``,
left-padded with zeros to the modulus length (textbook RSA, no OAEP).
"""
from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Tuple, Union

import numpy as np

from .aes import BLOCK_SIZE, KEY_SIZE, CtrStream, ctr_transform
from .errors import CorruptionError, FormatError, WrongKeyError
from .rsa import rsa_apply

ENVELOPE_MAGIC = b"PUFHSM01"
WRAPPED_MAGIC = b"PUFWKEY1"
VERSION_SHA256 = 0x01
CIPHER_AES128_CTR = 0x01
DIGEST_SIZE = 32
FILLER_SIZE = 13
PADDED_KEY_SIZE = 1 + FILLER_SIZE + 1 + KEY_SIZE
MIN_MODULUS_BYTES = 32
IO_CHUNK = 1 << 20

_ENV_HEADER = struct.Struct(">8sBB16sQ")
_WKEY_HEADER = struct.Struct(">8sH")

PathLike = Union[str, os.PathLike]


@dataclass(frozen=True)
class Envelope:
    iv: bytes
    payload: bytes
    payload_digest: bytes
    version: int = VERSION_SHA256
    cipher_id: int = CIPHER_AES128_CTR

    @property
    def payload_len(self) -> int:
        return len(self.payload)

    def to_bytes(self) -> bytes:
        head = _ENV_HEADER.pack(ENVELOPE_MAGIC, self.version, self.cipher_id, self.iv, len(self.payload))
        return head + self.payload + self.payload_digest


@dataclass(frozen=True)
class WrappedKey:
    modulus_bits: int
    wrapped: bytes

    def __post_init__(self):
        if self.modulus_bits % 8 or len(self.wrapped) != self.modulus_bits // 8:
            raise FormatError(
                f"wrapped key holds {len(self.wrapped)} bytes but modulus_bits={self.modulus_bits}"
            )

    def to_bytes(self) -> bytes:
        return _WKEY_HEADER.pack(WRAPPED_MAGIC, self.modulus_bits) + self.wrapped


def _modulus_bytes(n: int) -> int:
    return (n.bit_length() + 7) // 8


class _SeededBytes:
    def __init__(self, seed: int):
        self._rng = np.random.default_rng(seed)

    def take(self, n: int) -> bytes:
        return self._rng.bytes(n)

    def nonzero(self, n: int) -> bytes:
        return bytes(self._rng.integers(1, 256, size=n, dtype=np.uint8))


def _fresh_secrets(rng_seed: int) -> Tuple[bytes, bytes, bytes]:
    rng = _SeededBytes(rng_seed)
    return rng.take(KEY_SIZE), rng.take(BLOCK_SIZE), rng.nonzero(FILLER_SIZE)


def wrap_key(aes_key: bytes, filler: bytes, public_key: Tuple[int, int]) -> WrappedKey:
    e, n = public_key
    k = _modulus_bytes(n)
    if k < MIN_MODULUS_BYTES:
        raise ValueError(f"modulus of {k} bytes is too small; need >= {MIN_MODULUS_BYTES}")
    if len(filler) != FILLER_SIZE or 0 in filler:
        raise ValueError("filler must be 13 nonzero bytes")
    block = b"\x01" + filler + b"\x00" + aes_key
    m = int.from_bytes(block, "big")
    return WrappedKey(8 * k, rsa_apply(m, e, n).to_bytes(k, "big"))


def unwrap_key(wrapped: WrappedKey, private_key: Tuple[int, int]) -> bytes:
    d, n = private_key
    k = _modulus_bytes(n)
    if wrapped.modulus_bits != 8 * k:
        raise WrongKeyError(f"wrapped key is for a {wrapped.modulus_bits}-bit modulus, private key has {8 * k}")
    c = int.from_bytes(wrapped.wrapped, "big")
    if c >= n:
        raise WrongKeyError("wrapped value is not below this private modulus")
    block = rsa_apply(c, d, n).to_bytes(k, "big")
    pad = k - PADDED_KEY_SIZE
    filler = block[pad + 1:pad + 1 + FILLER_SIZE]
    if (
        any(block[:pad])
        or block[pad] != 0x01
        or 0 in filler
        or block[pad + 1 + FILLER_SIZE] != 0x00
    ):
        raise WrongKeyError("wrapped AES key does not decode under this private key")
    return block[-KEY_SIZE:]


def seal(plaintext: bytes, public_key: Tuple[int, int], rng_seed: int) -> Tuple[Envelope, WrappedKey]:
    """Encrypt ``plaintext`` under a fresh AES key and wrap that key for ``public_key``."""
    aes_key, iv, filler = _fresh_secrets(rng_seed)
    wrapped = wrap_key(aes_key, filler, public_key)
    env = Envelope(iv=iv, payload=ctr_transform(aes_key, iv, plaintext),
                   payload_digest=hashlib.sha256(plaintext).digest())
    return env, wrapped


def _check_envelope(env: Envelope) -> None:
    if env.version != VERSION_SHA256:
        raise FormatError(f"unsupported envelope version {env.version:#04x}")
    if env.cipher_id != CIPHER_AES128_CTR:
        raise FormatError(f"unsupported cipher id {env.cipher_id:#04x}")


def unseal(envelope: Envelope, wrapped: WrappedKey, private_key: Tuple[int, int]) -> bytes:
    _check_envelope(envelope)
    aes_key = unwrap_key(wrapped, private_key)
    plaintext = ctr_transform(aes_key, envelope.iv, envelope.payload)
    if hashlib.sha256(plaintext).digest() != envelope.payload_digest:
        raise CorruptionError("payload digest mismatch after decryption")
    return plaintext


# --- codecs -----------------------------------------------------------------

def _read_exact(source: BinaryIO, n: int, what: str) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = source.read(min(n - len(buf), IO_CHUNK * 16))
        if not chunk:
            raise FormatError(f"truncated {what}: expected {n} bytes, got {len(buf)}")
        buf += chunk
    return bytes(buf)


def _read_env_header(source: BinaryIO) -> Tuple[int, int, bytes, int]:
    magic, version, cipher_id, iv, length = _ENV_HEADER.unpack(
        _read_exact(source, _ENV_HEADER.size, "envelope header"))
    if magic != ENVELOPE_MAGIC:
        raise FormatError(f"bad envelope magic {magic!r}, expected {ENVELOPE_MAGIC!r}")
    return version, cipher_id, iv, length


def _expect_eof(source: BinaryIO, what: str) -> None:
    if source.read(1):
        raise FormatError(f"trailing bytes after {what}")


def write_envelope(env: Envelope, sink: BinaryIO) -> None:
    sink.write(env.to_bytes())


def read_envelope(source: BinaryIO) -> Envelope:
    version, cipher_id, iv, length = _read_env_header(source)
    payload = _read_exact(source, length, "envelope payload")
    digest = _read_exact(source, DIGEST_SIZE, "envelope digest")
    _expect_eof(source, "envelope")
    return Envelope(iv=iv, payload=payload, payload_digest=digest, version=version, cipher_id=cipher_id)


def write_wrapped_key(wk: WrappedKey, sink: BinaryIO) -> None:
    sink.write(wk.to_bytes())


def read_wrapped_key(source: BinaryIO) -> WrappedKey:
    magic, bits = _WKEY_HEADER.unpack(_read_exact(source, _WKEY_HEADER.size, "wrapped-key header"))
    if magic != WRAPPED_MAGIC:
        raise FormatError(f"bad wrapped-key magic {magic!r}, expected {WRAPPED_MAGIC!r}")
    if bits % 8:
        raise FormatError(f"modulus_bits {bits} is not a multiple of 8")
    wrapped = _read_exact(source, bits // 8, "wrapped key")
    _expect_eof(source, "wrapped key")
    return WrappedKey(bits, wrapped)


def load_envelope(path: PathLike) -> Envelope:
    with open(path, "rb") as fh:
        return read_envelope(fh)


def load_wrapped_key(path: PathLike) -> WrappedKey:
    with open(path, "rb") as fh:
        return read_wrapped_key(fh)


# --- streaming file helpers ---------------------------------------------------

def seal_file(src: PathLike, env_path: PathLike, wkey_path: PathLike,
              public_key: Tuple[int, int], rng_seed: int) -> None:
    """Stream ``src`` into an envelope file without holding it in memory."""
    aes_key, iv, filler = _fresh_secrets(rng_seed)
    wrapped = wrap_key(aes_key, filler, public_key)
    size = os.path.getsize(src)
    stream = CtrStream(aes_key, iv)
    digest = hashlib.sha256()
    with open(src, "rb") as fin, open(env_path, "wb") as fout:
        fout.write(_ENV_HEADER.pack(ENVELOPE_MAGIC, VERSION_SHA256, CIPHER_AES128_CTR, iv, size))
        done = 0
        while chunk := fin.read(IO_CHUNK):
            digest.update(chunk)
            fout.write(stream.update(chunk))
            done += len(chunk)
        if done != size:
            raise OSError(f"{src} changed size while sealing")
        fout.write(digest.digest())
    with open(wkey_path, "wb") as fh:
        write_wrapped_key(wrapped, fh)


def unseal_file(env_path: PathLike, wkey_path: PathLike, private_key: Tuple[int, int],
                out_path: PathLike) -> None:
    """Stream-decrypt an envelope file; ``out_path`` appears only if the digest verifies."""
    wrapped = load_wrapped_key(wkey_path)
    tmp = Path(str(out_path) + ".partial")
    with open(env_path, "rb") as fin:
        version, cipher_id, iv, length = _read_env_header(fin)
        _check_envelope(Envelope(iv, b"", b"", version, cipher_id))
        aes_key = unwrap_key(wrapped, private_key)
        stream = CtrStream(aes_key, iv)
        digest = hashlib.sha256()
        try:
            with open(tmp, "wb") as fout:
                remaining = length
                while remaining:
                    chunk = fin.read(min(IO_CHUNK, remaining))
                    if not chunk:
                        raise FormatError(f"truncated envelope payload: {remaining} bytes missing")
                    plain = stream.update(chunk)
                    digest.update(plain)
                    fout.write(plain)
                    remaining -= len(chunk)
            stored = _read_exact(fin, DIGEST_SIZE, "envelope digest")
            _expect_eof(fin, "envelope")
            if digest.digest() != stored:
                raise CorruptionError("payload digest mismatch after decryption")
            os.replace(tmp, out_path)
        finally:
            if tmp.exists():
                tmp.unlink()
