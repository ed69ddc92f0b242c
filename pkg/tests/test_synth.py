"""Synthetic dataset generator: masks, labels, determinism, splits."""

import numpy as np
import pytest

from gmic.errors import ConfigError
from gmic.metrics import auc
from gmic.synth import SynthConfig, _placement, generate, generate_exam

FAST = SynthConfig(
    height=96, width=96, n_train=30, n_val=10, n_test=10, seed=5,
    prevalence_benign=0.3, prevalence_malignant=0.3,
    benign_sigma=(2.5, 4.0), malignant_radius=(3.0, 6.0),
)


def test_zero_prevalence_gives_all_negative():
    cfg = SynthConfig(height=96, width=96, n_train=10, n_val=4, n_test=4,
                      prevalence_benign=0.0, prevalence_malignant=0.0, seed=1)
    ds = generate(cfg)
    for split in (ds.train, ds.val, ds.test):
        assert split.labels().sum() == 0
        for exam in split.exams:
            for view in exam.views:
                assert view.mask_benign is None and view.mask_malignant is None


def test_regeneration_is_bitwise_identical():
    a = generate(FAST)
    b = generate(FAST)
    for sa, sb in zip((a.train, a.val, a.test), (b.train, b.val, b.test)):
        for ea, eb in zip(sa.exams, sb.exams):
            assert ea.breast_id == eb.breast_id
            assert (ea.y_benign, ea.y_malignant) == (eb.y_benign, eb.y_malignant)
            for va, vb in zip(ea.views, eb.views):
                np.testing.assert_array_equal(va.image, vb.image)


def test_masks_subset_of_changed_pixels_differential_oracle():
    """Every positive view's mask lies inside the set of pixels whose
    value differs from the lesion-free render of the same seed."""
    checked = 0
    for i in range(60):
        with_lesions = generate_exam(FAST, i, plant_lesions=True)
        without = generate_exam(FAST, i, plant_lesions=False)
        for vw, vo in zip(with_lesions.views, without.views):
            changed = vw.image != vo.image
            for mask in (vw.mask_benign, vw.mask_malignant):
                if mask is not None:
                    assert mask.any()
                    assert np.all(changed[mask])
                    checked += 1
    assert checked > 10


def test_label_mask_consistency_per_view():
    for i in range(60):
        exam = generate_exam(FAST, i)
        for view in exam.views:
            assert (exam.y_benign == 1) == (view.mask_benign is not None and view.mask_benign.any())
            assert (exam.y_malignant == 1) == (view.mask_malignant is not None and view.mask_malignant.any())


def test_views_share_label_and_differ_in_content():
    for i in range(20):
        exam = generate_exam(FAST, i)
        assert len(exam.views) == 2
        assert exam.views[0].view_name != exam.views[1].view_name
        assert not np.array_equal(exam.views[0].image, exam.views[1].image)


def test_split_disjointness_by_breast_id():
    ds = generate(FAST)
    ids = [frozenset(e.breast_id for e in split.exams) for split in (ds.train, ds.val, ds.test)]
    assert not (ids[0] & ids[1]) and not (ids[0] & ids[2]) and not (ids[1] & ids[2])
    assert len(ids[0]) == 30 and len(ids[1]) == 10 and len(ids[2]) == 10


def test_mean_brightness_classifier_is_weak_on_malignant():
    """A texture-free classifier (mean image brightness) must stay below
    0.7 AUC on malignant detection at the default contrast."""
    cfg = SynthConfig(seed=0)
    means, labels = [], []
    for i in range(400):
        exam = generate_exam(cfg, i)
        means.append(np.mean([v.image.mean() for v in exam.views]))
        labels.append(exam.y_malignant)
    labels = np.asarray(labels)
    assert labels.sum() >= 10
    assert auc(np.asarray(means), labels) < 0.7


def test_images_are_quantized_to_u8_grid():
    exam = generate_exam(FAST, 2)
    img = exam.views[0].image
    np.testing.assert_array_equal(img, np.rint(img * 255) / np.float32(255.0))
    assert img.min() >= 0.0 and img.max() <= 1.0


def test_prevalence_validation_names_field():
    with pytest.raises(ConfigError) as exc:
        SynthConfig(prevalence_benign=1.5).validate()
    assert "prevalence_benign" in str(exc.value)
    with pytest.raises(ConfigError) as exc2:
        SynthConfig(prevalence_malignant=-0.1).validate()
    assert "prevalence_malignant" in str(exc2.value)


def test_oversized_lesions_rejected_at_validation():
    with pytest.raises(ConfigError):
        SynthConfig(height=48, width=48, malignant_radius=(20.0, 24.0)).validate()


def test_placement_raises_when_no_room():
    cfg = SynthConfig(height=96, width=96)
    rng = np.random.default_rng(0)
    no_interior = np.zeros((96, 96), dtype=bool)
    with pytest.raises(ConfigError, match="100 attempts"):
        _placement(cfg, rng, no_interior, extent=5.0, taken=[])
