import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from feddbl.exceptions import (
    BadMagicError,
    CapacityError,
    EncodingRangeError,
    IncompatibilityError,
    KeyMismatchError,
    TruncatedFileError,
)
from feddbl.federation import ClientUpdate, aggregate
from feddbl.paillier import keygen
from feddbl.secure import (
    EncryptedUpdate,
    FixedPointCodec,
    SlotLayout,
    check_aggregation_capacity,
    decode_values,
    decrypt_aggregate,
    encode_values,
    encode_weights,
    encrypt_update,
    encrypted_aggregate,
    pack_slots,
    unpack_slots,
    update_from_bytes,
    update_to_bytes,
)
from feddbl.solver import BlWeights

KEYS = keygen(512, seed=4242)


def weights_of(values):
    return BlWeights(np.asarray(values, dtype=float), lam=1e-6, normalization_mode="l2")


class TestCodec:
    def test_zero_matrix_encodes_to_zero_slots(self):
        codec = FixedPointCodec()
        assert encode_weights(weights_of(np.zeros((3, 2))), codec) == [0] * 6

    def test_one_encodes_to_scale(self):
        codec = FixedPointCodec(frac_bits=32)
        assert encode_weights(weights_of([[1.0]]), codec) == [2**32]

    def test_roundtrip_error_bound(self):
        g = np.random.default_rng(10)
        codec = FixedPointCodec(frac_bits=32)
        values = g.uniform(-4.0, 4.0, 500)
        decoded = decode_values(encode_values(values, codec), codec)
        max_err = np.abs(decoded - values).max()
        assert max_err <= 2.4e-10  # 2^-32 ~ 2.33e-10, plus rounding slack

    def test_overflow_names_flat_index(self):
        codec = FixedPointCodec(int_bits=2)
        with pytest.raises(EncodingRangeError, match="index 2"):
            encode_values(np.array([0.0, 1.0, 5.0]), codec)

    def test_guard_sizing(self):
        codec = FixedPointCodec.for_max_samples(1000)
        assert codec.guard_bits == math.ceil(math.log2(1000)) + 1
        assert codec.max_additions >= 1000
        assert codec.slot_bits == codec.frac_bits + codec.int_bits + codec.guard_bits


class TestPacking:
    def layout(self, codec, total, per_block):
        return SlotLayout(codec=codec, total_slots=total, slots_per_block=per_block)

    def test_single_slot_block_is_biased_identity(self):
        codec = FixedPointCodec(frac_bits=4, int_bits=3, guard_bits=3)
        layout = self.layout(codec, 3, 1)
        slots = [-5, 0, 7]
        packed = pack_slots(slots, layout)
        assert packed == [s + codec.bias for s in slots]
        assert unpack_slots(packed, layout) == slots

    @given(seed=st.integers(0, 2**32 - 1))
    @settings(max_examples=60, deadline=None)
    def test_pack_unpack_roundtrip(self, seed):
        g = np.random.default_rng(seed)
        codec = FixedPointCodec(
            frac_bits=int(g.integers(2, 34)),
            int_bits=int(g.integers(1, 10)),
            guard_bits=int(g.integers(2, 8)),
        )
        total = int(g.integers(1, 40))
        layout = SlotLayout.for_key(codec, total, plaintext_bits=511)
        slots = [int(s) for s in g.integers(-codec.bias + 1, codec.bias, total)]
        assert unpack_slots(pack_slots(slots, layout), layout) == slots

    @given(seed=st.integers(0, 2**32 - 1))
    @settings(max_examples=60, deadline=None)
    def test_packed_addition_matches_slotwise_oracle(self, seed):
        g = np.random.default_rng(seed)
        codec = FixedPointCodec(frac_bits=8, int_bits=4, guard_bits=4)
        total = int(g.integers(1, 30))
        layout = SlotLayout.for_key(codec, total, plaintext_bits=511)
        a = [int(s) for s in g.integers(-codec.bias + 1, codec.bias, total)]
        b = [int(s) for s in g.integers(-codec.bias + 1, codec.bias, total)]
        packed_sum = [x + y for x, y in zip(pack_slots(a, layout), pack_slots(b, layout))]
        direct = [x + y for x, y in zip(a, b)]
        assert unpack_slots(packed_sum, layout, additions=2) == direct

    def test_slot_exceeding_range_rejected(self):
        codec = FixedPointCodec(frac_bits=4, int_bits=2, guard_bits=3)
        layout = self.layout(codec, 1, 2)
        with pytest.raises(EncodingRangeError):
            pack_slots([codec.bias], layout)

    def test_block_count_law(self):
        codec = FixedPointCodec()
        for total in (1, 5, 39, 40, 41, 6912):
            layout = SlotLayout.for_key(codec, total, plaintext_bits=2047)
            assert layout.num_blocks == math.ceil(total / layout.slots_per_block)


class TestEncryptedAggregation:
    def make_update(self, client_id, n_k, values, codec, rng=None):
        return encrypt_update(
            weights_of(values), KEYS.public, codec, client_id, n_k, rng=rng
        )

    def test_single_client_roundtrip(self, rng):
        codec = FixedPointCodec.for_max_samples(8)
        w = rng.standard_normal((6, 3))
        upd = self.make_update("solo", 1, w, codec)
        cts, total = encrypted_aggregate([upd], KEYS.public)
        out = decrypt_aggregate(KEYS.secret, cts, upd.layout, total, upd.weights_meta)
        assert np.abs(out.values - w).max() <= 2.0**-codec.frac_bits

    def test_matches_plaintext_aggregate(self, rng):
        codec = FixedPointCodec.for_max_samples(2000)
        sizes = [17, 200, 3, 41]
        mats = [rng.standard_normal((8, 4)) for _ in sizes]
        plain = aggregate(
            [
                ClientUpdate.from_weights(f"c{i}", n, weights_of(m))
                for i, (n, m) in enumerate(zip(sizes, mats))
            ]
        )
        updates = [
            self.make_update(f"c{i}", n, m, codec) for i, (n, m) in enumerate(zip(sizes, mats))
        ]
        cts, total = encrypted_aggregate(updates, KEYS.public)
        out = decrypt_aggregate(
            KEYS.secret, cts, updates[0].layout, total, updates[0].weights_meta
        )
        tol = 2.0**-codec.frac_bits * (1 + sum(sizes) / total)
        assert np.abs(out.values - plain.weights.values).max() <= tol

    def test_capacity_checked_before_any_homomorphic_op(self, rng, monkeypatch):
        import feddbl.secure as secure_mod

        codec = FixedPointCodec(guard_bits=3)  # max_additions == 4
        updates = [
            self.make_update("a", 3, rng.standard_normal((2, 2)), codec),
            self.make_update("b", 3, rng.standard_normal((2, 2)), codec),
        ]

        def forbidden(*args, **kwargs):
            raise AssertionError("homomorphic op ran despite capacity violation")

        monkeypatch.setattr(secure_mod, "he_add", forbidden)
        monkeypatch.setattr(secure_mod, "he_scale", forbidden)
        with pytest.raises(CapacityError):
            encrypted_aggregate(updates, KEYS.public)

    def test_mixed_layouts_rejected(self, rng):
        u1 = self.make_update("a", 1, rng.standard_normal((2, 2)), FixedPointCodec(guard_bits=8))
        u2 = self.make_update("b", 1, rng.standard_normal((2, 2)), FixedPointCodec(guard_bits=9))
        with pytest.raises(IncompatibilityError):
            check_aggregation_capacity([u1, u2])

    def test_mixed_keys_rejected(self, rng):
        other = keygen(512, seed=999)
        codec = FixedPointCodec.for_max_samples(8)
        u1 = self.make_update("a", 1, rng.standard_normal((2, 2)), codec)
        u2 = encrypt_update(
            weights_of(rng.standard_normal((2, 2))), other.public, codec, "b", 1
        )
        with pytest.raises(KeyMismatchError):
            encrypted_aggregate([u1, u2], KEYS.public)

    def test_deterministic_rng_gives_reproducible_ciphertexts(self, rng):
        codec = FixedPointCodec.for_max_samples(8)
        w = rng.standard_normal((3, 2))
        u1 = self.make_update("a", 2, w, codec, rng=random.Random(5))
        u2 = self.make_update("a", 2, w, codec, rng=random.Random(5))
        assert [c.value for c in u1.ciphertexts] == [c.value for c in u2.ciphertexts]


def test_production_key_payload_stays_small():
    # 2048-bit key, 768x9 weights (d*C = 6912): packed payload must stay far
    # under the tens-of-megabytes regime of unpacked per-element encryption.
    keys = keygen(2048, seed=77)
    g = np.random.default_rng(0)
    codec = FixedPointCodec.for_max_samples(500_000)
    upd = encrypt_update(
        weights_of(g.standard_normal((768, 9)) * 0.1), keys.public, codec, "c", 1000
    )
    size = len(update_to_bytes(upd))
    assert upd.layout.num_blocks == math.ceil(6912 / upd.layout.slots_per_block)
    assert size <= 35_000_000
    assert size < 1_000_000  # our packing keeps it near 120 KB


class TestUpdateSerialization:
    def test_roundtrip(self, rng):
        codec = FixedPointCodec.for_max_samples(100)
        upd = encrypt_update(
            weights_of(rng.standard_normal((5, 3))), KEYS.public, codec, "clinic-1", 42
        )
        out = update_from_bytes(update_to_bytes(upd))
        assert out.client_id == "clinic-1"
        assert out.num_samples == 42
        assert out.layout == upd.layout
        assert [c.value for c in out.ciphertexts] == [c.value for c in upd.ciphertexts]
        assert out.weights_meta == upd.weights_meta

    def test_bad_magic(self, rng):
        codec = FixedPointCodec.for_max_samples(4)
        upd = encrypt_update(weights_of(rng.standard_normal((2, 2))), KEYS.public, codec, "c", 1)
        data = update_to_bytes(upd)
        with pytest.raises(BadMagicError):
            update_from_bytes(b"ZZZZ" + data[4:])

    def test_truncated_ciphertext(self, rng):
        codec = FixedPointCodec.for_max_samples(4)
        upd = encrypt_update(weights_of(rng.standard_normal((2, 2))), KEYS.public, codec, "c", 1)
        data = update_to_bytes(upd)
        with pytest.raises(TruncatedFileError):
            update_from_bytes(data[:-5])

    def test_decrypt_after_roundtrip(self, rng):
        codec = FixedPointCodec.for_max_samples(4)
        w = rng.standard_normal((4, 2))
        upd = encrypt_update(weights_of(w), KEYS.public, codec, "c", 1)
        upd2 = update_from_bytes(update_to_bytes(upd))
        cts, total = encrypted_aggregate([upd2], KEYS.public)
        out = decrypt_aggregate(KEYS.secret, cts, upd2.layout, total, upd2.weights_meta)
        assert np.abs(out.values - w).max() <= 2.0**-codec.frac_bits
