import numpy as np
import pytest

from fscil_tricks.augment import (
    IDENTITY_RECIPE,
    AugmentRecipe,
    PseudoClassScheme,
    apply_pseudo_transform,
    augment_view,
    make_contrastive_views,
    make_pseudo_scheme,
    make_rotation_example,
    pseudo_label,
)
from fscil_tricks.errors import ConfigError, DataError
from fscil_tricks.seeding import numpy_rng


def _image(h=8, w=8, c=3, seed=0):
    return np.random.default_rng(seed).uniform(size=(h, w, c)).astype(np.float32)


class TestPseudoLabels:
    def test_identity_transform_keeps_label(self):
        scheme = make_pseudo_scheme(60, M=2)
        assert pseudo_label(scheme, 5, 0) == 5

    def test_doubling_with_m2(self):
        scheme = make_pseudo_scheme(60, M=2)
        assert pseudo_label(scheme, 5, 1) == 65
        labels = {pseudo_label(scheme, c, m) for c in range(60) for m in range(2)}
        assert labels == set(range(120))
        assert scheme.n_labels == 120

    def test_bijection_for_m3(self):
        scheme = make_pseudo_scheme(10, M=3)
        pairs = [(c, m) for c in range(10) for m in range(3)]
        labels = [pseudo_label(scheme, c, m) for c, m in pairs]
        assert sorted(labels) == list(range(30))

    def test_out_of_range(self):
        scheme = make_pseudo_scheme(10, M=2)
        with pytest.raises(DataError):
            pseudo_label(scheme, 10, 0)
        with pytest.raises(DataError):
            pseudo_label(scheme, 0, 2)
        with pytest.raises(DataError):
            pseudo_label(scheme, -1, 0)

    def test_scheme_validation(self):
        with pytest.raises(ConfigError):
            make_pseudo_scheme(10, M=0)
        with pytest.raises(ConfigError):
            PseudoClassScheme(10, ("not-a-transform",))


class TestPseudoTransforms:
    def test_m0_returns_image_unchanged(self):
        scheme = make_pseudo_scheme(6, M=2)
        img = _image()
        out = apply_pseudo_transform(scheme, img, 0)
        assert out is img

    def test_default_hard_transform_is_an_involution(self):
        scheme = make_pseudo_scheme(6, M=2)
        img = _image(seed=1)
        once = apply_pseudo_transform(scheme, img, 1)
        twice = apply_pseudo_transform(scheme, once, 1)
        assert not np.array_equal(once, img)
        assert np.array_equal(twice, img)

    def test_rot180_matches_index_arithmetic(self):
        scheme = make_pseudo_scheme(6, M=2)
        img = _image(h=5, w=7, seed=2)
        out = apply_pseudo_transform(scheme, img, 1)
        h, w = img.shape[:2]
        for i in range(h):
            for j in range(w):
                assert np.array_equal(out[i, j], img[h - 1 - i, w - 1 - j])

    def test_out_of_range_m(self):
        scheme = make_pseudo_scheme(6, M=2)
        with pytest.raises(DataError):
            apply_pseudo_transform(scheme, _image(), 2)


class TestRotations:
    def test_index_zero_is_identity(self):
        img = _image()
        out, label = make_rotation_example(img, 0)
        assert label == 0 and np.array_equal(out, img)

    def test_group_composition(self):
        img = _image(seed=3)
        once, _ = make_rotation_example(img, 1)
        twice, _ = make_rotation_example(once, 1)
        direct, _ = make_rotation_example(img, 2)
        assert np.array_equal(twice, direct)

    def test_marker_visits_all_four_corners(self):
        img = np.zeros((6, 6, 1), dtype=np.float32)
        img[0, 0, 0] = 1.0
        corners = set()
        for k in range(4):
            out, label = make_rotation_example(img, k)
            pos = np.unravel_index(np.argmax(out[..., 0]), out.shape[:2])
            corners.add(pos)
            assert label == k
        assert corners == {(0, 0), (5, 0), (5, 5), (0, 5)}

    def test_random_index_uses_rng(self):
        img = _image()
        rng = numpy_rng("rot-test")
        seen = {make_rotation_example(img, rng=rng)[1] for _ in range(32)}
        assert seen == {0, 1, 2, 3}

    def test_errors(self):
        with pytest.raises(DataError):
            make_rotation_example(_image(h=4, w=6))
        with pytest.raises(DataError):
            make_rotation_example(_image(), 4)
        with pytest.raises(DataError):
            make_rotation_example(_image())  # no index, no rng


class TestContrastiveViews:
    def test_identity_recipe_returns_input(self):
        img = _image(seed=4)
        a, b = make_contrastive_views(img, seed=0, recipe=IDENTITY_RECIPE)
        assert np.array_equal(a, img) and np.array_equal(b, img)

    def test_same_seed_same_views(self):
        img = _image(seed=5)
        recipe = AugmentRecipe()
        a1, b1 = make_contrastive_views(img, seed=9, recipe=recipe)
        a2, b2 = make_contrastive_views(img, seed=9, recipe=recipe)
        assert np.array_equal(a1, a2) and np.array_equal(b1, b2)
        a3, _ = make_contrastive_views(img, seed=10, recipe=recipe)
        assert not np.array_equal(a1, a3)

    def test_crop_parameters_match_seeded_replay(self):
        img = _image(h=16, w=16, seed=6)
        recipe = AugmentRecipe(crop_scale=(0.5, 0.9), flip_prob=0.0, jitter=0.0)
        rng = numpy_rng("view-replay")
        out = augment_view(img, rng, recipe)

        oracle = numpy_rng("view-replay")
        scale = float(oracle.uniform(0.5, 0.9))
        ch = max(1, round(16 * scale))
        cw = max(1, round(16 * scale))
        top = int(oracle.integers(0, 16 - ch + 1))
        left = int(oracle.integers(0, 16 - cw + 1))
        crop = img[top : top + ch, left : left + cw]
        yi = (np.arange(16) * ch // 16).astype(int)
        xi = (np.arange(16) * cw // 16).astype(int)
        assert np.array_equal(out, crop[yi][:, xi])

    def test_jitter_stays_in_range(self):
        img = _image(seed=7)
        recipe = AugmentRecipe(crop_scale=(1.0, 1.0), flip_prob=0.0, jitter=0.8)
        for s in range(10):
            a, b = make_contrastive_views(img, seed=s, recipe=recipe)
            for v in (a, b):
                assert v.min() >= 0.0 and v.max() <= 1.0

    def test_recipe_validation(self):
        with pytest.raises(ConfigError):
            AugmentRecipe(crop_scale=(0.0, 1.0))
        with pytest.raises(ConfigError):
            AugmentRecipe(crop_scale=(0.9, 0.5))
        with pytest.raises(ConfigError):
            AugmentRecipe(flip_prob=1.5)
        with pytest.raises(ConfigError):
            AugmentRecipe(jitter=-0.1)
