import struct

import numpy as np
import pytest

from lpfm.data import LabeledDataset, SyntheticSpec, gen_centered_pair, gen_synthetic, load_idx_images, write_idx
from lpfm.errors import DataError, FormatError
from lpfm.geometry import LabeledTokenSet, anova_decompose, token_means


def as_tokens(ds):
    return LabeledTokenSet(ds.inputs, ds.labels, ds.num_classes)


def test_noiseless_generator_is_collapsed():
    spec = SyntheticSpec(num_classes=3, per_class=5, seq_len=4, dim=6, class_noise=0, seq_noise=0, seed=2)
    a = anova_decompose(as_tokens(gen_synthetic(spec)))
    assert a.within_seq == 0.0 and a.within_class == 0.0
    assert a.between_class > 0


def test_symmetric_pair_has_zero_global_mean():
    ds = gen_centered_pair(np.array([0.3, -1.2, 2.0]), per_class=7, seq_len=3)
    assert np.abs(token_means(as_tokens(ds))[2]).max() <= 1e-10
    assert list(ds.class_counts()) == [7, 7]


def test_variance_moments():
    sc, ss, t, d, n = 0.7, 1.3, 8, 8, 500
    spec = SyntheticSpec(num_classes=4, per_class=n, seq_len=t, dim=d, class_noise=sc, seq_noise=ss, seed=5)
    a = anova_decompose(as_tokens(gen_synthetic(spec)))
    want_seq = ss ** 2 * d * (t - 1) / t
    want_class = (sc ** 2 + ss ** 2 / t) * d * (n - 1) / n
    assert a.within_seq == pytest.approx(want_seq, rel=0.05)
    assert a.within_class == pytest.approx(want_class, rel=0.05)


def test_generator_deterministic_and_splits_share_centres():
    spec = SyntheticSpec(num_classes=3, per_class=40, seq_len=2, dim=5, class_noise=0.1, seq_noise=0.1, seed=9)
    a, b = gen_synthetic(spec), gen_synthetic(spec)
    np.testing.assert_array_equal(a.inputs, b.inputs)
    test = gen_synthetic(spec, "test")
    assert not np.array_equal(a.inputs, test.inputs)
    ca, ct = token_means(as_tokens(a))[1], token_means(as_tokens(test))[1]
    assert np.abs(ca - ct).max() < 0.1
    with pytest.raises(DataError):
        gen_synthetic(SyntheticSpec(per_class=0))
    with pytest.raises(DataError):
        gen_synthetic(SyntheticSpec(seq_noise=-1))


def test_dataset_label_validation_names_index():
    with pytest.raises(DataError, match="index 2"):
        LabeledDataset(np.zeros((3, 2, 2)), [0, 1, 5], 3)
    with pytest.raises(DataError):
        LabeledDataset(np.zeros((3, 2, 2)), [0, 1], 3)


def test_npz_round_trip(tmp_path):
    ds = gen_synthetic(SyntheticSpec(num_classes=2, per_class=3, seq_len=2, dim=3))
    ds.save(tmp_path / "d.npz")
    back = LabeledDataset.load(tmp_path / "d.npz")
    np.testing.assert_array_equal(back.inputs, ds.inputs)
    np.testing.assert_array_equal(back.labels, ds.labels)
    assert back.num_classes == 2


# -- IDX -------------------------------------------------------------------

def write_fixture(dirpath):
    """Hand-packed IDX files: 4 images of 2x3 pixels."""
    pixels = bytes([0, 255, 128, 1, 2, 3,
                    10, 20, 30, 40, 50, 60,
                    255, 255, 255, 0, 0, 0,
                    7, 7, 7, 7, 7, 7])
    img = dirpath / "img.idx"
    lab = dirpath / "lab.idx"
    img.write_bytes(b"\x00\x00\x08\x03" + b"\x00\x00\x00\x04" + b"\x00\x00\x00\x02" + b"\x00\x00\x00\x03" + pixels)
    lab.write_bytes(b"\x00\x00\x08\x01" + b"\x00\x00\x00\x04" + bytes([3, 0, 2, 1]))
    return img, lab, pixels


def test_idx_fixture(tmp_path):
    img, lab, pixels = write_fixture(tmp_path)
    ds = load_idx_images(img, lab, num_classes=4)
    assert ds.inputs.shape == (4, 2, 3, 1)
    np.testing.assert_array_equal(ds.labels, [3, 0, 2, 1])
    want = np.array(list(pixels), dtype=float).reshape(4, 2, 3, 1) / 255.0
    np.testing.assert_array_equal(ds.inputs, want)
    assert ds.inputs.min() >= 0 and ds.inputs.max() <= 1


def test_idx_writer_matches_fixture(tmp_path):
    img, lab, pixels = write_fixture(tmp_path)
    write_idx(tmp_path / "a", tmp_path / "b", np.frombuffer(pixels, np.uint8).reshape(4, 2, 3), [3, 0, 2, 1])
    assert (tmp_path / "a").read_bytes() == img.read_bytes()
    assert (tmp_path / "b").read_bytes() == lab.read_bytes()


def test_idx_errors(tmp_path):
    img, lab, _ = write_fixture(tmp_path)
    empty = tmp_path / "empty"
    empty.write_bytes(b"")
    with pytest.raises(FormatError):
        load_idx_images(empty, lab)
    bad = tmp_path / "bad"
    bad.write_bytes(struct.pack(">I", 0x0801) + img.read_bytes()[4:])
    with pytest.raises(FormatError) as exc:
        load_idx_images(bad, lab)
    assert exc.value.offset == 0
    short = tmp_path / "short"
    short.write_bytes(img.read_bytes()[:-5])
    with pytest.raises(FormatError) as exc:
        load_idx_images(short, lab)
    assert exc.value.offset == len(img.read_bytes()) - 5
    with pytest.raises(DataError, match="index 0"):
        load_idx_images(img, lab, num_classes=3)
