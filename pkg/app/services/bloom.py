"""m-bit Bloom-filter identifiers for stateless source routing.

A LinkId names one unidirectional edge and has exactly ``k`` bits set.
A ForwardingId is the OR of the LinkIds of a delivery path (or tree); a
forwarding node passes a packet over an edge when every bit of the edge's
LinkId is present in the packet's ForwardingId.

Bit ``i`` of a filter is bit ``i % 8`` of byte ``i // 8``; filters are
held as Python ints, so the byte codec is plain little-endian.
"""
import operator
from dataclasses import dataclass
from functools import reduce
from typing import List, Sequence, Tuple

import numpy as np

from app.core.errors import FillFactorExceeded, ParameterError, WidthMismatch
from app.models.schemas import FilterParams


@dataclass(frozen=True)
class BitFilter:
    """An immutable m-bit set."""
    bits: int
    m: int

    def __post_init__(self):
        if self.m <= 0 or self.m % 8:
            raise ParameterError(f"filter width {self.m} is not a positive multiple of 8")
        if self.bits < 0 or self.bits >> self.m:
            raise ParameterError(f"bits do not fit in {self.m} positions")

    @property
    def popcount(self) -> int:
        return self.bits.bit_count()

    def positions(self) -> List[int]:
        return [i for i in range(self.m) if self.bits >> i & 1]

    def to_bytes(self) -> bytes:
        return self.bits.to_bytes(self.m // 8, "little")

    def to_hex(self) -> str:
        return self.to_bytes().hex()

    @classmethod
    def from_bytes(cls, data: bytes):
        return cls(int.from_bytes(data, "little"), len(data) * 8)

    @classmethod
    def from_hex(cls, text: str):
        try:
            data = bytes.fromhex(text)
        except ValueError as e:
            raise ParameterError(f"not a hex filter: {text!r}") from e
        return cls.from_bytes(data)


class LinkId(BitFilter):
    """Identifier of one unidirectional link."""

    def check(self, params: FilterParams) -> "LinkId":
        """Raise unless this LinkId matches ``params`` (width m, exactly k bits)."""
        if self.m != params.m:
            raise WidthMismatch(f"LinkId is {self.m} bits wide, expected {params.m}")
        if self.popcount != params.k:
            raise ParameterError(f"LinkId has {self.popcount} bits set, expected {params.k}")
        return self


class ForwardingId(BitFilter):
    """In-packet Bloom filter encoding a delivery path."""


def _require_same_width(a: BitFilter, b: BitFilter) -> None:
    if a.m != b.m:
        raise WidthMismatch(f"filter widths differ: {a.m} vs {b.m}")


def new_link_id(params: FilterParams, rng: np.random.Generator) -> LinkId:
    """Draw k distinct positions uniformly without replacement."""
    positions = rng.choice(params.m, size=params.k, replace=False)
    bits = 0
    for p in positions:
        bits |= 1 << int(p)
    return LinkId(bits, params.m)


def build_fid(lids: Sequence[LinkId], params: FilterParams) -> ForwardingId:
    """OR the LinkIds together, enforcing the maximum fill factor."""
    if not lids:
        raise ParameterError("cannot build a ForwardingId from an empty LinkId list")
    for lid in lids:
        if lid.m != params.m:
            raise WidthMismatch(f"LinkId is {lid.m} bits wide, expected {params.m}")
    fid = ForwardingId(reduce(operator.or_, (lid.bits for lid in lids)), params.m)
    actual = fill_factor(fid)
    if actual > params.rho_max:
        raise FillFactorExceeded(actual, params.rho_max)
    return fid


def membership_check(fid: ForwardingId, lid: LinkId) -> bool:
    _require_same_width(fid, lid)
    return fid.bits & lid.bits == lid.bits


def fill_factor(fid: BitFilter) -> float:
    return fid.popcount / fid.m


def false_positive_prob(rho_m: float, k: int, l: int) -> float:
    """Probability that a guessed filter passes ``l`` consecutive forwarding checks."""
    if not 0.0 < rho_m <= 1.0:
        raise ParameterError(f"rho_m must be in (0, 1], got {rho_m}")
    if k < 1:
        raise ParameterError(f"k must be >= 1, got {k}")
    if l < 1:
        raise ParameterError(f"path length must be >= 1, got {l}")
    return rho_m ** (k * l)


def expected_fill(m: int, k: int, n: int) -> float:
    """Expected fill factor after inserting n random k-bit LinkIds into m bits."""
    if m < 1 or k < 1 or n < 0:
        raise ParameterError(f"invalid geometry m={m}, k={k}, n={n}")
    return 1.0 - (1.0 - 1.0 / m) ** (k * n)


def saturated_fid(params: FilterParams) -> ForwardingId:
    return ForwardingId((1 << params.m) - 1, params.m)


def random_fid_bits(m: int, rho: float, rng: np.random.Generator, count: int) -> List[int]:
    """``count`` filters with each bit set independently with probability rho."""
    if not 0.0 <= rho <= 1.0:
        raise ParameterError(f"fill must be in [0, 1], got {rho}")
    out: List[int] = []
    for start in range(0, count, 4096):
        rows = min(4096, count - start)
        packed = np.packbits(rng.random((rows, m)) < rho, axis=1, bitorder="little")
        out.extend(int.from_bytes(row.tobytes(), "little") for row in packed)
    return out


def random_fid(params: FilterParams, rho: float, rng: np.random.Generator) -> ForwardingId:
    return ForwardingId(random_fid_bits(params.m, rho, rng, 1)[0], params.m)


def membership_rate(
    m: int,
    k: int,
    rho: float,
    trials: int,
    rng: np.random.Generator,
    batch: int = 20_000,
) -> Tuple[int, int]:
    """Monte Carlo of fresh k-bit LinkIds tested against fill-rho filters.

    Returns ``(hits, trials)``; the hit rate converges to rho**k.
    """
    hits = 0
    done = 0
    while done < trials:
        b = min(batch, trials - done)
        fids = rng.random((b, m), dtype=np.float32) < rho
        positions = rng.random((b, m), dtype=np.float32).argpartition(k - 1, axis=1)[:, :k]
        hits += int(fids[np.arange(b)[:, None], positions].all(axis=1).sum())
        done += b
    return hits, trials

