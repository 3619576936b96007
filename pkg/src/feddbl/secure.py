"""Encrypted weight aggregation.

Weights are fixed-point encoded, many slots are packed into one big-integer
plaintext to exploit the width of the ciphertext space, and the packed
blocks are encrypted under an additively homomorphic key. The server then
sums scaled ciphertexts without ever decrypting; only the key holder
divides by the total sample count after decryption.

Signed slots are stored offset-binary: each carries a bias of one unit at
the sign-bit position of the value range (2^(frac_bits + int_bits)), which
keeps packed addition carry-free; the bias is removed at unpack time scaled
by the number of accumulated additions.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import (
    BadMagicError,
    CapacityError,
    EncodingRangeError,
    IncompatibilityError,
    IntegrityError,
    InvalidInputError,
    KeyMismatchError,
    TruncatedFileError,
    UnsupportedVersionError,
)
from .paillier import Ciphertext, PublicKey, SecretKey, decrypt, encrypt, he_add, he_scale
from .solver import BlWeights

DEFAULT_FRAC_BITS = 32
DEFAULT_INT_BITS = 16

MAGIC = b"FDBE"
VERSION = 1


@dataclass(frozen=True)
class FixedPointCodec:
    """Signed fixed-point encoding of weight entries into integer slots.

    guard_bits reserve headroom above the value range so that a weighted sum
    over at most max_additions samples cannot overflow a slot.
    """

    frac_bits: int = DEFAULT_FRAC_BITS
    int_bits: int = DEFAULT_INT_BITS
    guard_bits: int = 12

    def __post_init__(self):
        if self.frac_bits < 1 or self.int_bits < 1 or self.guard_bits < 2:
            raise InvalidInputError(
                f"codec needs frac_bits, int_bits >= 1 and guard_bits >= 2, got {self}"
            )

    @classmethod
    def for_max_samples(
        cls,
        max_total_samples: int,
        frac_bits: int = DEFAULT_FRAC_BITS,
        int_bits: int = DEFAULT_INT_BITS,
    ) -> "FixedPointCodec":
        """Size the guard bits for an aggregation over at most this many samples."""
        if max_total_samples < 1:
            raise InvalidInputError("max_total_samples must be >= 1")
        return cls(
            frac_bits=frac_bits,
            int_bits=int_bits,
            guard_bits=max(2, math.ceil(math.log2(max_total_samples)) + 1)
            if max_total_samples > 1
            else 2,
        )

    @property
    def slot_bits(self) -> int:
        return self.frac_bits + self.int_bits + self.guard_bits

    @property
    def bias(self) -> int:
        return 1 << (self.frac_bits + self.int_bits)

    @property
    def max_additions(self) -> int:
        return 1 << (self.guard_bits - 1)

    @property
    def scale(self) -> int:
        return 1 << self.frac_bits


@dataclass(frozen=True)
class SlotLayout:
    """How a flat slot array maps onto big-integer plaintext blocks."""

    codec: FixedPointCodec
    total_slots: int
    slots_per_block: int

    def __post_init__(self):
        if self.total_slots < 1 or self.slots_per_block < 1:
            raise InvalidInputError(f"degenerate layout: {self}")

    @classmethod
    def for_key(cls, codec: FixedPointCodec, total_slots: int, plaintext_bits: int) -> "SlotLayout":
        per_block = plaintext_bits // codec.slot_bits
        if per_block < 1:
            raise InvalidInputError(
                f"slot width {codec.slot_bits} does not fit a {plaintext_bits}-bit plaintext"
            )
        return cls(codec=codec, total_slots=total_slots, slots_per_block=per_block)

    @property
    def num_blocks(self) -> int:
        return -(-self.total_slots // self.slots_per_block)

    def to_dict(self) -> dict:
        return {
            "frac_bits": self.codec.frac_bits,
            "int_bits": self.codec.int_bits,
            "guard_bits": self.codec.guard_bits,
            "total_slots": self.total_slots,
            "slots_per_block": self.slots_per_block,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SlotLayout":
        return cls(
            codec=FixedPointCodec(
                frac_bits=int(d["frac_bits"]),
                int_bits=int(d["int_bits"]),
                guard_bits=int(d["guard_bits"]),
            ),
            total_slots=int(d["total_slots"]),
            slots_per_block=int(d["slots_per_block"]),
        )


def encode_values(values: np.ndarray, codec: FixedPointCodec) -> list[int]:
    """Round a flat float array onto the codec's integer grid."""
    flat = np.asarray(values, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(flat)):
        raise InvalidInputError("cannot encode non-finite values")
    limit = float(1 << codec.int_bits)
    slots: list[int] = []
    for i, v in enumerate(flat):
        s = round(v * codec.scale)
        if abs(s) >= codec.bias:
            raise EncodingRangeError(
                f"value {v!r} at flat index {i} exceeds the +/-{limit:g} integer range"
            )
        slots.append(s)
    return slots


def decode_values(slots: list[int], codec: FixedPointCodec) -> np.ndarray:
    return np.array([s / codec.scale for s in slots], dtype=np.float64)


def encode_weights(weights: BlWeights, codec: FixedPointCodec) -> list[int]:
    return encode_values(weights.values, codec)


def pack_slots(slots: list[int], layout: SlotLayout) -> list[int]:
    """Embed biased slots into big integers, little-endian slot order."""
    codec = layout.codec
    if len(slots) != layout.total_slots:
        raise InvalidInputError(f"expected {layout.total_slots} slots, got {len(slots)}")
    blocks: list[int] = []
    for start in range(0, len(slots), layout.slots_per_block):
        block = 0
        for j, s in enumerate(slots[start : start + layout.slots_per_block]):
            if abs(s) >= codec.bias:
                raise EncodingRangeError(f"slot at flat index {start + j} exceeds the value range")
            block |= (s + codec.bias) << (j * codec.slot_bits)
        blocks.append(block)
    return blocks


def unpack_slots(packed: list[int], layout: SlotLayout, additions: int = 1) -> list[int]:
    """Recover signed slot sums from (possibly accumulated) packed blocks.

    `additions` must be the total weight of the accumulation (the sum of the
    scalar factors applied to the packed operands; 1 for a lone block).
    """
    if additions < 1:
        raise InvalidInputError(f"additions must be >= 1, got {additions}")
    codec = layout.codec
    mask = (1 << codec.slot_bits) - 1
    offset = additions * codec.bias
    slots: list[int] = []
    for block in packed:
        if block < 0:
            raise InvalidInputError("packed blocks must be non-negative")
        for j in range(layout.slots_per_block):
            if len(slots) == layout.total_slots:
                break
            slots.append(((block >> (j * codec.slot_bits)) & mask) - offset)
    if len(slots) != layout.total_slots:
        raise InvalidInputError(
            f"{len(packed)} blocks hold fewer than the {layout.total_slots} expected slots"
        )
    return slots


@dataclass(frozen=True, eq=False)
class EncryptedUpdate:
    """A client's upload in the encrypted protocol variant.

    weights_meta carries the plaintext weight header {d, C, lambda,
    normalization_mode} so the key holder can reconstruct a BlWeights after
    decryption; the weight values themselves exist only inside ciphertexts.
    """

    client_id: str
    num_samples: int
    ciphertexts: tuple[Ciphertext, ...]
    layout: SlotLayout
    key_fingerprint: str
    weights_meta: dict

    def __post_init__(self):
        if self.num_samples < 1:
            raise InvalidInputError(f"client {self.client_id!r} reports {self.num_samples} samples")
        if len(self.ciphertexts) != self.layout.num_blocks:
            raise InvalidInputError(
                f"client {self.client_id!r}: {len(self.ciphertexts)} ciphertext blocks for a "
                f"layout of {self.layout.num_blocks}"
            )
        expected = int(self.weights_meta["d"]) * int(self.weights_meta["C"])
        if expected != self.layout.total_slots:
            raise InvalidInputError(
                f"layout holds {self.layout.total_slots} slots but weights are "
                f"{self.weights_meta['d']}x{self.weights_meta['C']}"
            )


def encrypt_update(
    weights: BlWeights,
    pk: PublicKey,
    codec: FixedPointCodec,
    client_id: str,
    num_samples: int,
    rng: random.Random | None = None,
) -> EncryptedUpdate:
    """Encode, pack and encrypt one client's weights."""
    layout = SlotLayout.for_key(codec, weights.values.size, pk.plaintext_bits)
    blocks = pack_slots(encode_weights(weights, codec), layout)
    cts = tuple(encrypt(pk, block, rng=rng) for block in blocks)
    return EncryptedUpdate(
        client_id=client_id,
        num_samples=num_samples,
        ciphertexts=cts,
        layout=layout,
        key_fingerprint=pk.fingerprint,
        weights_meta={
            "d": weights.feature_dim,
            "C": weights.num_classes,
            "lambda": weights.lam,
            "normalization_mode": weights.normalization_mode,
        },
    )


def check_aggregation_capacity(updates: list[EncryptedUpdate]) -> int:
    """Validate layouts, keys and guard capacity; returns the total sample count.

    Must run (and does run) before any homomorphic operation: a weighted sum
    whose total exceeds the guard headroom would silently corrupt neighbor
    slots rather than fail, so it is rejected up front from metadata alone.
    """
    if not updates:
        raise InvalidInputError("cannot aggregate an empty update list")
    first = updates[0]
    for u in updates[1:]:
        if u.layout != first.layout:
            raise IncompatibilityError(
                f"client {u.client_id!r} uses layout {u.layout.to_dict()} but "
                f"{first.client_id!r} uses {first.layout.to_dict()}"
            )
        if u.key_fingerprint != first.key_fingerprint:
            raise KeyMismatchError(
                f"client {u.client_id!r} encrypted under key {u.key_fingerprint}, "
                f"expected {first.key_fingerprint}"
            )
    total = sum(u.num_samples for u in updates)
    limit = first.layout.codec.max_additions
    if total > limit:
        raise CapacityError(
            f"total sample count {total} exceeds the guard capacity {limit}; "
            f"re-encode with larger guard_bits"
        )
    return total


def encrypted_aggregate(
    updates: list[EncryptedUpdate], pk: PublicKey
) -> tuple[tuple[Ciphertext, ...], int]:
    """Sample-count-weighted sum in the encrypted domain.

    The server computes sum_k n_k * c_k blockwise without decrypting
    anything. Division by the total count and fixed-point decoding happen
    only after decryption by the key holder.
    """
    total = check_aggregation_capacity(updates)
    if updates[0].key_fingerprint != pk.fingerprint:
        raise KeyMismatchError(
            f"updates are under key {updates[0].key_fingerprint}, not {pk.fingerprint}"
        )
    ordered = sorted(updates, key=lambda u: u.client_id)
    acc: list[Ciphertext] | None = None
    for u in ordered:
        scaled = [he_scale(pk, ct, u.num_samples) for ct in u.ciphertexts]
        acc = scaled if acc is None else [he_add(pk, a, b) for a, b in zip(acc, scaled)]
    assert acc is not None
    return tuple(acc), total


def decrypt_aggregate(
    sk: SecretKey,
    ciphertexts: tuple[Ciphertext, ...],
    layout: SlotLayout,
    total_samples: int,
    weights_meta: dict,
) -> BlWeights:
    """Key-holder side: decrypt, unpack, rescale to the averaged weights."""
    blocks = [decrypt(sk, ct) for ct in ciphertexts]
    slots = unpack_slots(blocks, layout, additions=total_samples)
    divisor = total_samples * layout.codec.scale
    values = np.array([s / divisor for s in slots], dtype=np.float64)
    return BlWeights(
        values=values.reshape(int(weights_meta["d"]), int(weights_meta["C"])),
        lam=float(weights_meta["lambda"]),
        normalization_mode=str(weights_meta["normalization_mode"]),
    )


def update_to_bytes(update: EncryptedUpdate) -> bytes:
    header = {
        "client_id": update.client_id,
        "n_k": update.num_samples,
        "layout": update.layout.to_dict(),
        "key_fingerprint": update.key_fingerprint,
        "weights_meta": update.weights_meta,
        "num_ciphertexts": len(update.ciphertexts),
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [
        MAGIC,
        VERSION.to_bytes(2, "little"),
        len(header_bytes).to_bytes(4, "little"),
        header_bytes,
    ]
    for ct in update.ciphertexts:
        raw = ct.value.to_bytes((ct.value.bit_length() + 7) // 8 or 1, "big")
        parts.append(len(raw).to_bytes(4, "little"))
        parts.append(raw)
    return b"".join(parts)


def update_from_bytes(data: bytes) -> EncryptedUpdate:
    if len(data) < 10:
        raise TruncatedFileError(f"file too short to hold the fixed header ({len(data)} bytes)")
    if data[:4] != MAGIC:
        raise BadMagicError(f"expected magic {MAGIC!r}, found {data[:4]!r}")
    version = int.from_bytes(data[4:6], "little")
    if version != VERSION:
        raise UnsupportedVersionError(f"unknown format version {version}")
    header_len = int.from_bytes(data[6:10], "little")
    if len(data) < 10 + header_len:
        raise TruncatedFileError("file ends inside the JSON header")
    try:
        header = json.loads(data[10 : 10 + header_len].decode("utf-8"))
        layout = SlotLayout.from_dict(header["layout"])
        client_id = str(header["client_id"])
        num_samples = int(header["n_k"])
        fingerprint = str(header["key_fingerprint"])
        weights_meta = dict(header["weights_meta"])
        num_cts = int(header["num_ciphertexts"])
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise IntegrityError(f"bad FDBE header: {exc}") from exc

    cts: list[Ciphertext] = []
    offset = 10 + header_len
    for _ in range(num_cts):
        if len(data) < offset + 4:
            raise TruncatedFileError("file ends inside a ciphertext length prefix")
        ct_len = int.from_bytes(data[offset : offset + 4], "little")
        offset += 4
        if len(data) < offset + ct_len:
            raise TruncatedFileError("file ends inside a ciphertext block")
        cts.append(
            Ciphertext(
                value=int.from_bytes(data[offset : offset + ct_len], "big"),
                key_fingerprint=fingerprint,
            )
        )
        offset += ct_len
    if offset != len(data):
        raise IntegrityError("trailing bytes after the declared ciphertexts")
    try:
        return EncryptedUpdate(
            client_id=client_id,
            num_samples=num_samples,
            ciphertexts=tuple(cts),
            layout=layout,
            key_fingerprint=fingerprint,
            weights_meta=weights_meta,
        )
    except InvalidInputError as exc:
        raise IntegrityError(f"payload violates update invariants: {exc}") from exc


def write_update(update: EncryptedUpdate, path: str | Path) -> None:
    Path(path).write_bytes(update_to_bytes(update))


def read_update(path: str | Path) -> EncryptedUpdate:
    return update_from_bytes(Path(path).read_bytes())
