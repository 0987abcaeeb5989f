"""Keyed register derivation, bit commitment, and bit-string helpers.

The keyed PRF is instantiated as counter-mode HMAC-SHA256 and treated as an
opaque deterministic expansion; the commitment is hash(tag || salt || value).
Neither carries a security proof here - determinism, prefix consistency and
avalanche are what the simulator needs.

Bit strings are plain tuples of 0/1 ints throughout the package.
"""

from __future__ import annotations

import hashlib
import hmac
from dataclasses import dataclass
from enum import Enum
from random import Random

Bits = tuple[int, ...]

DEFAULT_KEY_BYTES = 16
NONCE_BITS = 128  # lambda
_COMMIT_TAG = b"qdb-commit-v1"
_PRF_TAG = b"qdb-prf-v1"
_ENC_NONCE_A = b"qdb-enc-keystream-a"
_ENC_NONCE_B = b"qdb-enc-keystream-b"


def random_bits(rng: Random, length: int) -> Bits:
    if length == 0:
        return ()
    value = rng.getrandbits(length)
    return tuple((value >> (length - 1 - i)) & 1 for i in range(length))


def random_key(rng: Random, length: int = DEFAULT_KEY_BYTES) -> bytes:
    return rng.getrandbits(8 * length).to_bytes(length, "big")


def bits_to_bytes(bits: Bits) -> bytes:
    """Pack bits MSB-first, zero-padded to a whole number of bytes."""
    n = len(bits)
    if n == 0:
        return b""
    nbytes = (n + 7) // 8
    acc = 0
    for bit in bits:
        acc = (acc << 1) | bit
    acc <<= 8 * nbytes - n
    return acc.to_bytes(nbytes, "big")


def bytes_to_bits(data: bytes, length: int) -> Bits:
    return tuple((data[i // 8] >> (7 - i % 8)) & 1 for i in range(length))


def xor_bits(a: Bits, b: Bits) -> Bits:
    if len(a) != len(b):
        raise ValueError("xor of unequal-length bit strings")
    return tuple(x ^ y for x, y in zip(a, b))


def hamming_distance(a: Bits, b: Bits) -> int:
    if len(a) != len(b):
        raise ValueError("Hamming distance of unequal-length bit strings")
    return sum(x ^ y for x, y in zip(a, b))


def bits_to_str(bits: Bits) -> str:
    return "".join(str(b) for b in bits)


def parse_bits(text: str) -> Bits:
    if any(ch not in "01" for ch in text):
        raise ValueError(f"not a bit string: {text!r}")
    return tuple(int(ch) for ch in text)


class RegisterMode(Enum):
    PRF = "prf"
    TF_RESISTANT = "tf_resistant"


@dataclass(frozen=True)
class Registers:
    """Per-round basis-selection registers; c is present only for mutual DB."""

    a: Bits
    b: Bits
    c: Bits | None = None

    def __post_init__(self) -> None:
        if len(self.a) != len(self.b):
            raise ValueError("registers a and b must have equal length")
        if self.c is not None and len(self.c) != len(self.a):
            raise ValueError("register c must match the length of a and b")

    @property
    def n(self) -> int:
        return len(self.a)


def prf_expand(key: bytes, nonce_a: Bits, nonce_b: Bits, out_len: int) -> Bits:
    """Deterministic keyed expansion of (nonce_a, nonce_b) to out_len bits.

    Counter-mode HMAC-SHA256, so expanding to a longer length extends the
    shorter output (prefix consistency).
    """
    if out_len <= 0:
        raise ValueError("out_len must be positive")
    message_base = (
        _PRF_TAG
        + len(nonce_a).to_bytes(4, "big")
        + bits_to_bytes(nonce_a)
        + len(nonce_b).to_bytes(4, "big")
        + bits_to_bytes(nonce_b)
    )
    blocks = bytearray()
    counter = 0
    while len(blocks) * 8 < out_len:
        blocks += hmac.new(key, message_base + counter.to_bytes(8, "big"), hashlib.sha256).digest()
        counter += 1
    return bytes_to_bits(bytes(blocks), out_len)


def _keystream_from_register(a: Bits, length: int) -> Bits:
    """Stream-cipher keystream keyed by register a (fixed nonce labels)."""
    key = bits_to_bytes(a) + len(a).to_bytes(4, "big")
    nonce_a = bytes_to_bits(_ENC_NONCE_A, 8 * len(_ENC_NONCE_A))
    nonce_b = bytes_to_bits(_ENC_NONCE_B, 8 * len(_ENC_NONCE_B))
    return prf_expand(key, nonce_a, nonce_b, length)


def derive_registers(
    mode: RegisterMode,
    key: bytes,
    nonce_a: Bits,
    nonce_b: Bits,
    n: int,
    count: int = 2,
) -> Registers:
    """Derive the rapid-phase registers from the shared key and nonces.

    PRF mode splits one expansion into ``count`` registers of n bits.  The
    terrorist-fraud-resistant mode keeps a pseudorandom but derives b by
    stream-encrypting the long-term key under a, so revealing (a, b) reveals
    the first n key bits (see :func:`recover_key`).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if count not in (2, 3):
        raise ValueError("count must be 2 or 3")
    if mode is RegisterMode.PRF:
        stream = prf_expand(key, nonce_a, nonce_b, count * n)
        parts = [stream[i * n : (i + 1) * n] for i in range(count)]
        return Registers(*parts) if count == 3 else Registers(parts[0], parts[1])
    if count != 2:
        raise ValueError("TF-resistant derivation defines two registers only")
    if n > 8 * len(key):
        raise ValueError("TF-resistant mode needs n <= key length in bits")
    a = prf_expand(key, nonce_a, nonce_b, n)
    key_bits = bytes_to_bits(key, n)
    b = xor_bits(key_bits, _keystream_from_register(a, n))
    return Registers(a, b)


def recover_key(a: Bits, b: Bits) -> Bits:
    """Invert the TF-resistant derivation: the first len(a) key bits."""
    return xor_bits(b, _keystream_from_register(a, len(a)))


@dataclass(frozen=True)
class Commitment:
    digest: bytes


def commit(value: Bits, salt: bytes) -> Commitment:
    """Hash commitment to a bit string; binding and hiding under SHA-256."""
    if len(salt) != 16:
        raise ValueError("salt must be 16 bytes")
    material = _COMMIT_TAG + salt + len(value).to_bytes(4, "big") + bits_to_bytes(value)
    return Commitment(hashlib.sha256(material).digest())


def open_commitment(commitment: Commitment, value: Bits, salt: bytes) -> bool:
    """True iff (value, salt) matches the committed digest."""
    if len(salt) != 16:
        return False
    return hmac.compare_digest(commit(value, salt).digest, commitment.digest)
