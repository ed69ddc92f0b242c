"""PGM round trips, on-disk dataset layout, checkpoint format."""

import numpy as np
import pytest

from gmic.checkpoint import load_checkpoint, save_checkpoint
from gmic.data import load_dataset, load_split, write_dataset, write_split
from gmic.errors import ConfigError
from gmic.pgm import read_pgm, to_float, to_u8, write_pgm
from gmic.synth import SynthConfig, generate

FAST = SynthConfig(
    height=96, width=96, n_train=8, n_val=4, n_test=4, seed=9,
    prevalence_benign=0.5, prevalence_malignant=0.5,
    benign_sigma=(2.5, 4.0), malignant_radius=(3.0, 6.0),
)


def test_pgm_roundtrip(tmp_path, rng):
    img = (rng.random((17, 23)) * 255).astype(np.uint8)
    write_pgm(tmp_path / "x.pgm", img)
    np.testing.assert_array_equal(read_pgm(tmp_path / "x.pgm"), img)


def test_pgm_header_with_comment(tmp_path):
    img = np.arange(6, dtype=np.uint8).reshape(2, 3)
    raw = b"P5\n# a comment\n3 2\n255\n" + img.tobytes()
    (tmp_path / "c.pgm").write_bytes(raw)
    np.testing.assert_array_equal(read_pgm(tmp_path / "c.pgm"), img)


def test_pgm_rejects_other_formats(tmp_path):
    (tmp_path / "bad.pgm").write_bytes(b"P2\n1 1\n255\n0")
    with pytest.raises(ValueError):
        read_pgm(tmp_path / "bad.pgm")


def test_u8_float_conversion_roundtrip():
    u8 = np.arange(256, dtype=np.uint8).reshape(16, 16)
    np.testing.assert_array_equal(to_u8(to_float(u8)), u8)


def test_split_disk_roundtrip(tmp_path):
    ds = generate(FAST)
    write_split(ds.train, tmp_path / "train")
    loaded = load_split(tmp_path / "train")
    assert len(loaded) == len(ds.train)
    by_id = {e.exam_id: e for e in loaded.exams}
    for exam in ds.train.exams:
        got = by_id[exam.exam_id]
        assert (got.y_benign, got.y_malignant) == (exam.y_benign, exam.y_malignant)
        for va, vb in zip(exam.views, got.views):
            np.testing.assert_array_equal(va.image, vb.image)  # images are u8-quantized
            for ma, mb in ((va.mask_benign, vb.mask_benign), (va.mask_malignant, vb.mask_malignant)):
                if ma is None or not ma.any():
                    assert mb is None
                else:
                    np.testing.assert_array_equal(ma, mb)


def test_dataset_roundtrip_and_missing_index(tmp_path):
    ds = generate(FAST)
    write_dataset(ds, tmp_path / "data")
    loaded = load_dataset(tmp_path / "data")
    assert len(loaded.test) == 4
    with pytest.raises(ConfigError):
        load_split(tmp_path / "nope")


# -- checkpoint format ---------------------------------------------------------


def test_checkpoint_roundtrip_exact(tmp_path, rng):
    arrays = {
        "conv.weight": rng.normal(size=(4, 3, 3, 3)).astype(np.float32),
        "head.bias": rng.normal(size=2).astype(np.float64),
        "scalarish": np.array([3.0], dtype=np.float32),
    }
    meta = {"epoch": 7, "pool_fraction": 0.05, "network": {"patch_size": 32}}
    save_checkpoint(tmp_path / "m.ckpt", meta, arrays)
    meta2, arrays2 = load_checkpoint(tmp_path / "m.ckpt")
    assert meta2["epoch"] == 7 and meta2["network"]["patch_size"] == 32
    assert set(arrays2) == set(arrays)
    for name, arr in arrays.items():
        assert arrays2[name].dtype == arr.dtype
        np.testing.assert_array_equal(arrays2[name], arr)


def test_checkpoint_payload_is_little_endian_floats(tmp_path):
    arr = np.array([1.0, -2.5], dtype=np.float32)
    save_checkpoint(tmp_path / "p.ckpt", {}, {"w": arr})
    raw = (tmp_path / "p.ckpt").read_bytes()
    assert raw.startswith(b"GMICCKPT")
    assert arr.astype("<f4").tobytes() in raw


def test_checkpoint_bad_magic_rejected(tmp_path):
    (tmp_path / "bad.ckpt").write_bytes(b"NOTACKPTxxxxxxx")
    with pytest.raises(ConfigError):
        load_checkpoint(tmp_path / "bad.ckpt")


def test_checkpoint_rejects_non_float_arrays(tmp_path):
    with pytest.raises(ConfigError):
        save_checkpoint(tmp_path / "i.ckpt", {}, {"idx": np.arange(3)})
