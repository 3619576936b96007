import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from feddbl.bank import (
    FeatureBank,
    concat_stages,
    merge_banks,
    normalize_bank,
    pool_stage,
    split_train_test,
    subsample,
)
from feddbl.exceptions import (
    IncompatibilityError,
    InvalidInputError,
    InvalidStateError,
)

from conftest import make_bank


class TestPoolStage:
    def test_mean_of_2x2(self):
        t = np.array([1.0, 2.0, 3.0, 4.0]).reshape(2, 2, 1)
        assert pool_stage(t).tolist() == [2.5]

    def test_single_cell_identity(self):
        t = np.array([7.0, -1.0, 0.0]).reshape(1, 1, 3)
        assert pool_stage(t).tolist() == [7.0, -1.0, 0.0]

    def test_constant_channels(self):
        t = np.empty((3, 2, 2))
        t[:, :, 0] = 5.0
        t[:, :, 1] = -5.0
        assert pool_stage(t).tolist() == [5.0, -5.0]

    def test_zero_area_rejected(self):
        with pytest.raises(InvalidInputError):
            pool_stage(np.empty((0, 4, 2)))

    def test_non_finite_rejected(self):
        t = np.ones((2, 2, 1))
        t[0, 0, 0] = np.nan
        with pytest.raises(InvalidInputError):
            pool_stage(t)

    @given(
        t1=hnp.arrays(np.float64, (3, 4, 2), elements=st.floats(-1e6, 1e6)),
        t2=hnp.arrays(np.float64, (3, 4, 2), elements=st.floats(-1e6, 1e6)),
        a=st.floats(-100, 100),
        b=st.floats(-100, 100),
    )
    @settings(max_examples=50, deadline=None)
    def test_linearity(self, t1, t2, a, b):
        combined = pool_stage(a * t1 + b * t2)
        separate = a * pool_stage(t1) + b * pool_stage(t2)
        np.testing.assert_allclose(combined, separate, rtol=1e-12, atol=1e-9)


class TestConcatStages:
    def test_list_order(self):
        out = concat_stages([np.array([1.0, 2.0]), np.array([3.0])])
        assert out.tolist() == [1.0, 2.0, 3.0]

    def test_single_stage_identity(self):
        assert concat_stages([np.array([4.25])]).tolist() == [4.25]

    def test_resnet50_stage_widths_sum(self):
        stages = [np.zeros(w) for w in (256, 512, 1024, 2048)]
        assert concat_stages(stages).shape == (3840,)

    def test_empty_rejected(self):
        with pytest.raises(InvalidInputError):
            concat_stages([])

    def test_values_land_at_predictable_offsets(self, rng):
        vecs = [rng.standard_normal(k) for k in (3, 1, 5)]
        out = concat_stages(vecs)
        offset = 0
        for v in vecs:
            np.testing.assert_array_equal(out[offset : offset + v.size], v)
            offset += v.size


class TestNormalizeBank:
    def test_l2_345_triangle(self):
        b = FeatureBank("c", [[3.0, 4.0]], [0], 2)
        out = normalize_bank(b, "l2")
        assert out.features.tolist() == [[0.6, 0.8]]
        assert out.normalized and out.normalization_mode == "l2"

    def test_l2_zero_row_untouched(self):
        b = FeatureBank("c", [[0.0, 0.0], [3.0, 4.0]], [0, 1], 2)
        out = normalize_bank(b, "l2")
        assert out.features[0].tolist() == [0.0, 0.0]

    def test_zscore_two_rows(self):
        b = FeatureBank("c", [[0.0], [2.0]], [0, 1], 2)
        out = normalize_bank(b, "zscore")
        assert out.features.tolist() == [[-1.0], [1.0]]

    def test_zscore_constant_column_zeroed(self):
        b = FeatureBank("c", [[5.0, 1.0], [5.0, 3.0]], [0, 1], 2)
        out = normalize_bank(b, "zscore")
        assert out.features[:, 0].tolist() == [0.0, 0.0]

    def test_identity_keeps_values(self, rng):
        b = make_bank(rng)
        out = normalize_bank(b, "identity")
        np.testing.assert_array_equal(out.features, b.features)
        assert out.normalized

    def test_double_normalization_rejected(self, rng):
        b = normalize_bank(make_bank(rng), "l2")
        with pytest.raises(InvalidStateError):
            normalize_bank(b, "l2")

    def test_unknown_mode_rejected(self, rng):
        with pytest.raises(InvalidInputError):
            normalize_bank(make_bank(rng), "minmax")

    @given(seed=st.integers(0, 2**32 - 1))
    @settings(max_examples=40, deadline=None)
    def test_l2_rows_have_unit_norm(self, seed):
        g = np.random.default_rng(seed)
        b = make_bank(g, n=int(g.integers(3, 30)), d=int(g.integers(1, 12)))
        out = normalize_bank(b, "l2")
        norms = np.linalg.norm(out.features, axis=1)
        zero_rows = np.linalg.norm(b.features, axis=1) == 0
        assert np.all(np.abs(norms[~zero_rows] - 1.0) <= 1e-12)


class TestSplitTrainTest:
    def test_seven_three_on_ten(self, rng):
        b = make_bank(rng, n=10, d=3, num_classes=2)
        train, test = split_train_test(b, 0.7, seed=5)
        assert (train.num_samples, test.num_samples) == (7, 3)

    def test_partition_is_exact(self, rng):
        b = make_bank(rng, n=37, d=4, num_classes=3)
        train, test = split_train_test(b, 0.7, seed=9)
        both = np.vstack([train.features, test.features])
        assert sorted(map(tuple, both.tolist())) == sorted(map(tuple, b.features.tolist()))
        assert train.num_samples + test.num_samples == b.num_samples

    def test_each_class_on_both_sides(self, rng):
        b = make_bank(rng, n=24, d=3, num_classes=4)
        train, test = split_train_test(b, 0.9, seed=2)
        for side in (train, test):
            assert np.all(side.class_counts() >= 1)

    def test_deterministic_per_seed(self, rng):
        b = make_bank(rng, n=30)
        a1 = split_train_test(b, 0.7, seed=11)[0]
        a2 = split_train_test(b, 0.7, seed=11)[0]
        np.testing.assert_array_equal(a1.features, a2.features)

    def test_bad_ratio_rejected(self, rng):
        b = make_bank(rng)
        for ratio in (0.0, 1.0, -0.2, 1.5):
            with pytest.raises(InvalidInputError):
                split_train_test(b, ratio, seed=1)


class TestSubsample:
    def test_full_proportion_is_identity_multiset(self, rng):
        b = make_bank(rng, n=25)
        out = subsample(b, 1.0, seed=3)
        assert sorted(map(tuple, out.features.tolist())) == sorted(
            map(tuple, b.features.tolist())
        )

    def test_stratification_floor(self, rng):
        b = make_bank(rng, n=1000, d=2, num_classes=4)
        out = subsample(b, 0.01, seed=4)
        assert out.num_samples >= 4
        assert np.all(out.class_counts() >= 1)

    def test_zero_yield_rejected(self, rng):
        b = make_bank(rng, n=100, d=2, num_classes=2)
        with pytest.raises(InvalidInputError):
            subsample(b, 0.001, seed=1)

    def test_count_tracks_proportion(self, rng):
        b = make_bank(rng, n=200, d=2, num_classes=3)
        out = subsample(b, 0.25, seed=8)
        assert abs(out.num_samples - 50) <= 1


class TestMergeBanks:
    def test_merge_stacks_rows(self, rng):
        b1 = make_bank(rng, n=5, client_id="a")
        b2 = make_bank(rng, n=7, client_id="b")
        merged = merge_banks([b1, b2])
        assert merged.num_samples == 12
        np.testing.assert_array_equal(merged.features[:5], b1.features)

    def test_mixed_dims_rejected(self, rng):
        b1 = make_bank(rng, d=4)
        b2 = make_bank(rng, d=5)
        with pytest.raises(IncompatibilityError):
            merge_banks([b1, b2])

    def test_mixed_normalization_rejected(self, rng):
        b1 = normalize_bank(make_bank(rng), "l2")
        b2 = make_bank(rng)
        with pytest.raises(IncompatibilityError):
            merge_banks([b1, b2])


class TestFeatureBankValidation:
    def test_label_out_of_range(self):
        with pytest.raises(InvalidInputError):
            FeatureBank("c", np.zeros((2, 2)), [0, 2], 2)

    def test_stage_dims_must_sum_to_dim(self):
        with pytest.raises(InvalidInputError):
            FeatureBank("c", np.zeros((1, 5)), [0], 2, stage_dims=(2, 2))

    def test_non_finite_rejected(self):
        with pytest.raises(InvalidInputError):
            FeatureBank("c", [[np.inf, 0.0]], [0], 2)

    def test_arrays_are_readonly(self, rng):
        b = make_bank(rng)
        with pytest.raises(ValueError):
            b.features[0, 0] = 99.0
