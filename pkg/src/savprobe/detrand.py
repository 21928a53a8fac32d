"""Seed-keyed deterministic randomness.

Schedules must replay byte-identically for a fixed seed, across processes
and Python versions, so ordering decisions and nonces are derived from
keyed blake2b digests instead of RNG state.
"""

import hashlib

ALPHANUM = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789"


def _encode(parts) -> bytes:
    out = bytearray()
    for part in parts:
        if isinstance(part, bytes):
            out += part
        else:
            out += int(part).to_bytes(8, "big", signed=True)
    return bytes(out)


class Stream:
    def __init__(self, seed: int):
        self._key = hashlib.blake2b(
            (seed & 0xFFFFFFFFFFFFFFFF).to_bytes(8, "big"),
            digest_size=32,
        ).digest()

    def key(self, tag: bytes) -> bytes:
        """A derived sub-key, e.g. for transaction-id hashing."""
        return hashlib.blake2b(tag, digest_size=16, key=self._key).digest()

    def digest(self, *parts, size: int = 8) -> bytes:
        return hashlib.blake2b(
            _encode(parts), digest_size=size, key=self._key
        ).digest()

    def u64(self, *parts) -> int:
        return int.from_bytes(self.digest(*parts, size=8), "big")

    def unit(self, *parts) -> float:
        """Uniform in [0, 1) with 53-bit resolution."""
        return (self.u64(*parts) >> 11) / float(1 << 53)

    def nonce(self, *parts) -> str:
        """6 alphanumerics; the byte-mod-62 bias is irrelevant here."""
        raw = self.digest(*parts, size=6)
        return "".join(ALPHANUM[b % 62] for b in raw)
