"""Credential issuance and stateless verification at the network attachment point.

The NAP holds two 128-bit master keys. ``k1`` encrypts the ForwardingId the
topology manager computed; a truncated keyed tag under the current epoch's
``k2`` binds the ciphertext. The publisher only ever sees ``{eFId, h}`` and
places it, unchanged, in every packet header.
"""
import hashlib
import hmac
import secrets
from dataclasses import dataclass, replace
from enum import Enum
from functools import cached_property, lru_cache
from typing import Optional, Union

import numpy as np
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from app.core.errors import CredentialFormatError, ParameterError
from app.services.bloom import ForwardingId
from app.utils.rng import stream

KEY_BYTES = 16
BLOCK_BYTES = 16
TAG_FIELD_BYTES = 8
EPOCH_FIELD_BYTES = 4
TAG_WIDTHS = (16, 32, 48, 64)
_ZERO_IV = bytes(BLOCK_BYTES)


def derive_tag_key(root: bytes, epoch: int) -> bytes:
    """Per-epoch tag key: HMAC-SHA256 of the epoch number under the root key."""
    return hmac.digest(root, epoch.to_bytes(8, "big"), hashlib.sha256)[:KEY_BYTES]


@dataclass(frozen=True)
class MasterKeys:
    """Immutable key snapshot held by a NAP; rotation returns a new snapshot."""
    k1: bytes
    root_k2: bytes
    epoch: int = 0
    hash_bits: int = 64

    def __post_init__(self):
        if len(self.k1) != KEY_BYTES or len(self.root_k2) != KEY_BYTES:
            raise ParameterError("master keys must be exactly 128 bits")
        if self.epoch < 0:
            raise ParameterError(f"epoch must be >= 0, got {self.epoch}")
        if self.hash_bits not in TAG_WIDTHS:
            raise ParameterError(f"hash_bits must be one of {TAG_WIDTHS}, got {self.hash_bits}")

    @cached_property
    def k2(self) -> bytes:
        return derive_tag_key(self.root_k2, self.epoch)

    def at_epoch(self, epoch: int) -> "MasterKeys":
        return replace(self, epoch=epoch)

    @classmethod
    def from_seed(cls, seed: int, hash_bits: int = 64) -> "MasterKeys":
        """Reproducible keys for simulations and tests."""
        rng = stream(seed, "master-keys")
        return cls(rng.bytes(KEY_BYTES), rng.bytes(KEY_BYTES), 0, hash_bits)

    @classmethod
    def generate(cls, hash_bits: int = 64) -> "MasterKeys":
        return cls(secrets.token_bytes(KEY_BYTES), secrets.token_bytes(KEY_BYTES), 0, hash_bits)


@dataclass(frozen=True)
class EncryptedFid:
    data: bytes


@dataclass(frozen=True)
class Tag:
    value: int
    bits: int = 64

    def to_bytes(self) -> bytes:
        return self.value.to_bytes(TAG_FIELD_BYTES, "big")


@dataclass(frozen=True)
class Credential:
    """The pair {eFId, h} handed to a publisher, plus the epoch that produced h."""
    efid: EncryptedFid
    tag: Tag
    epoch: int

    def to_bytes(self) -> bytes:
        """Header layout: eFId bytes, 8-byte tag, 4-byte epoch, both big-endian."""
        return self.efid.data + self.tag.to_bytes() + self.epoch.to_bytes(EPOCH_FIELD_BYTES, "big")

    @classmethod
    def from_bytes(cls, data: bytes, m: int, hash_bits: int = 64) -> "Credential":
        n = m // 8
        if len(data) != n + TAG_FIELD_BYTES + EPOCH_FIELD_BYTES:
            raise CredentialFormatError(
                f"credential must be {n + TAG_FIELD_BYTES + EPOCH_FIELD_BYTES} bytes, got {len(data)}"
            )
        tag = int.from_bytes(data[n:n + TAG_FIELD_BYTES], "big")
        epoch = int.from_bytes(data[n + TAG_FIELD_BYTES:], "big")
        return cls(EncryptedFid(data[:n]), Tag(tag, hash_bits), epoch)

    def flip_bit(self, index: int) -> "Credential":
        """Copy with one bit flipped; indices cover the eFId bits then the tag bits."""
        nbits = len(self.efid.data) * 8
        if index < nbits:
            raw = bytearray(self.efid.data)
            raw[index // 8] ^= 1 << (index % 8)
            return replace(self, efid=EncryptedFid(bytes(raw)))
        return replace(self, tag=replace(self.tag, value=self.tag.value ^ (1 << (index - nbits))))


class RejectReason(str, Enum):
    BAD_TAG = "bad_tag"
    STALE_EPOCH = "stale_epoch"
    MALFORMED = "malformed"
    MISSING_CREDENTIAL = "missing_credential"
    FILL_EXCEEDED = "fill_exceeded"


@dataclass(frozen=True)
class Accept:
    fid: ForwardingId


@dataclass(frozen=True)
class Reject:
    reason: RejectReason


CheckResult = Union[Accept, Reject]


@lru_cache(maxsize=64)
def _aes_cbc(k1: bytes) -> Cipher:
    if len(k1) != KEY_BYTES:
        raise ParameterError("k1 must be exactly 128 bits")
    return Cipher(algorithms.AES(k1), modes.CBC(_ZERO_IV))


def _reverse_blocks(data: bytes) -> bytes:
    blocks = [data[i:i + BLOCK_BYTES] for i in range(0, len(data), BLOCK_BYTES)]
    return b"".join(reversed(blocks))


def _cbc_pass(k1: bytes, data: bytes, decrypt: bool = False) -> bytes:
    ctx = _aes_cbc(k1).decryptor() if decrypt else _aes_cbc(k1).encryptor()
    return ctx.update(data) + ctx.finalize()


def encrypt_fid(fid: ForwardingId, k1: bytes) -> EncryptedFid:
    """Two zero-IV AES-128-CBC passes, the second over the reversed block order.

    Deterministic and length preserving. The last block of the first pass
    depends on the whole filter and seeds the second pass, so every output
    block does too.
    """
    if fid.m % (BLOCK_BYTES * 8):
        raise ParameterError(f"filter width {fid.m} is not a multiple of the 128-bit cipher block")
    first = _cbc_pass(k1, fid.to_bytes())
    return EncryptedFid(_cbc_pass(k1, _reverse_blocks(first)))


def decrypt_fid(efid: EncryptedFid, k1: bytes, m: Optional[int] = None) -> ForwardingId:
    if m is not None and len(efid.data) * 8 != m:
        raise CredentialFormatError(f"eFId is {len(efid.data) * 8} bits, expected {m}")
    if not efid.data or len(efid.data) % BLOCK_BYTES:
        raise CredentialFormatError(f"eFId length {len(efid.data)} is not a whole number of blocks")
    first = _reverse_blocks(_cbc_pass(k1, efid.data, decrypt=True))
    return ForwardingId.from_bytes(_cbc_pass(k1, first, decrypt=True))


def compute_tag(efid: EncryptedFid, k2: bytes, bits: int = 64) -> Tag:
    """Most significant ``bits`` of HMAC-SHA256(k2, eFId)."""
    mac = hmac.digest(k2, efid.data, hashlib.sha256)
    return Tag(int.from_bytes(mac[:TAG_FIELD_BYTES], "big") >> (64 - bits), bits)


def issue_credential(fid: ForwardingId, keys: MasterKeys) -> Credential:
    efid = encrypt_fid(fid, keys.k1)
    return Credential(efid, compute_tag(efid, keys.k2, keys.hash_bits), keys.epoch)


def tag_matches(cred: Credential, keys: MasterKeys) -> bool:
    """Constant-time comparison of the presented tag against the current epoch's."""
    expected = compute_tag(cred.efid, keys.k2, keys.hash_bits)
    return hmac.compare_digest(expected.to_bytes(), cred.tag.to_bytes())


def security_check(cred: Credential, keys: MasterKeys, m: Optional[int] = None) -> CheckResult:
    """Verify a credential statelessly; on success recover the plaintext FId."""
    data = cred.efid.data
    if not data or len(data) % BLOCK_BYTES or (m is not None and len(data) * 8 != m):
        return Reject(RejectReason.MALFORMED)
    if cred.tag.bits != keys.hash_bits:
        return Reject(RejectReason.MALFORMED)
    if not tag_matches(cred, keys):
        if cred.epoch != keys.epoch:
            return Reject(RejectReason.STALE_EPOCH)
        return Reject(RejectReason.BAD_TAG)
    return Accept(decrypt_fid(cred.efid, keys.k1))


def rotate_key(keys: MasterKeys) -> MasterKeys:
    return keys.at_epoch(keys.epoch + 1)


def random_credential(rng: np.random.Generator, m: int, keys: MasterKeys) -> Credential:
    """A uniformly guessed {eFId, h} pair claiming the current epoch."""
    efid = EncryptedFid(rng.bytes(m // 8))
    tag = int.from_bytes(rng.bytes(TAG_FIELD_BYTES), "big") >> (64 - keys.hash_bits)
    return Credential(efid, Tag(tag, keys.hash_bits), keys.epoch)
