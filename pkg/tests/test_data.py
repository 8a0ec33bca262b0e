import numpy as np
import pytest

from relpatch.data import (
    CIFAR_RECORD,
    ImageSet,
    SyntheticSpec,
    load_cifar10,
    make_synthetic,
    read_cifar_file,
    to_cifar_bytes,
)
from relpatch.errors import IngestionError


def fake_batch(path, n, seed=0):
    r = np.random.default_rng(seed)
    labels = r.integers(0, 10, n, dtype=np.uint8)
    pix = r.integers(0, 256, (n, 3072), dtype=np.uint8)
    raw = np.concatenate([labels[:, None], pix], axis=1).tobytes()
    path.write_bytes(raw)
    return raw, labels, pix


def test_record_layout(tmp_path):
    raw, labels, pix = fake_batch(tmp_path / "b.bin", 3)
    assert len(raw) == 3 * CIFAR_RECORD == 3 * 3073
    p, lab = read_cifar_file(tmp_path / "b.bin", expected_records=3)
    assert lab.tolist() == labels.tolist()
    # label byte first, then the 1024-byte R, G and B planes
    assert np.array_equal(p[1, 0].ravel(), pix[1, :1024])
    assert np.array_equal(p[1, 2].ravel(), pix[1, 2048:])
    assert p[2, 1, 3, 5] == raw[2 * 3073 + 1 + 1024 + 3 * 32 + 5]


def test_truncated_file_reports_offset(tmp_path):
    raw, _, _ = fake_batch(tmp_path / "b.bin", 2)
    (tmp_path / "t.bin").write_bytes(raw[:-100])
    with pytest.raises(IngestionError, match="byte offset 3073"):
        read_cifar_file(tmp_path / "t.bin", expected_records=None)
    with pytest.raises(IngestionError, match="expected 10000"):
        read_cifar_file(tmp_path / "b.bin")


def test_missing_file(tmp_path):
    with pytest.raises(IngestionError):
        read_cifar_file(tmp_path / "nope.bin")
    with pytest.raises(IngestionError):
        load_cifar10(tmp_path)


def test_bad_label_offset(tmp_path):
    raw = bytearray(fake_batch(tmp_path / "b.bin", 3)[0])
    raw[2 * 3073] = 11
    (tmp_path / "l.bin").write_bytes(bytes(raw))
    with pytest.raises(IngestionError, match="offset 6146"):
        read_cifar_file(tmp_path / "l.bin", expected_records=None)


def test_reserialize_roundtrip(tmp_path):
    raw, _, _ = fake_batch(tmp_path / "b.bin", 5, seed=3)
    p, lab = read_cifar_file(tmp_path / "b.bin", expected_records=5)
    s = ImageSet(p.astype(np.float32) / np.float32(255), lab, 10)
    assert to_cifar_bytes(s) == raw


def test_imageset_validation():
    with pytest.raises(ValueError):
        ImageSet(np.zeros((2, 3, 4, 4)), np.array([0, 3]), 3)
    with pytest.raises(ValueError):
        ImageSet(np.zeros((2, 4, 4)), np.array([0, 1]), 3)
    s = ImageSet(np.zeros((2, 3, 4, 4), np.float32), np.array([0, 1]), 2)
    assert len(s) == 2 and s[1].label == 1 and s.shape == (3, 4, 4)
    assert [r.label for r in s] == [0, 1]


# -- real CIFAR-10 ----------------------------------------------------------------

@pytest.fixture(scope="module")
def cifar(cifar_dir):
    return load_cifar10(cifar_dir)


def test_cifar_sizes(cifar):
    train, test = cifar
    assert len(train) == 50_000 and len(test) == 10_000
    assert train.images.shape == (50_000, 3, 32, 32) and train.images.dtype == np.float32
    assert train.images.min() >= 0 and train.images.max() <= 1
    assert np.bincount(train.labels, minlength=10).tolist() == [5000] * 10


def test_cifar_mean_matches_byte_reader(cifar, cifar_dir):
    train, _ = cifar
    total, count = 0, 0
    for k in range(1, 6):
        with open(cifar_dir / "cifar-10-batches-bin" / f"data_batch_{k}.bin", "rb") as fh:
            buf = fh.read()
        arr = np.frombuffer(buf, dtype=np.uint8).reshape(-1, 3073)
        total += int(arr[:, 1:].sum(dtype=np.int64))
        count += arr[:, 1:].size
    ref = total / count / 255.0
    assert abs(float(train.images.mean(dtype=np.float64)) - ref) < 1e-6


def test_cifar_roundtrip_bytes(cifar, cifar_dir):
    _, test = cifar
    raw = (cifar_dir / "cifar-10-batches-bin" / "test_batch.bin").read_bytes()
    assert to_cifar_bytes(test) == raw


# -- synthetic ----------------------------------------------------------------------

@pytest.mark.parametrize("gen", ["gradient-fields", "colored-shapes", "noise"])
def test_synthetic_reproducible(gen):
    spec = SyntheticSpec(seed=7, count=12, resolution=16, num_classes=3, generator=gen)
    a, b = make_synthetic(spec), make_synthetic(spec)
    assert a.images.tobytes() == b.images.tobytes() and np.array_equal(a.labels, b.labels)
    assert a.images.min() >= 0 and a.images.max() <= 1
    assert np.bincount(a.labels).tolist() == [4, 4, 4]
    c = make_synthetic(SyntheticSpec(seed=8, count=12, resolution=16, num_classes=3, generator=gen))
    assert a.images.tobytes() != c.images.tobytes()


@pytest.mark.parametrize("k", [2, 3, 5])
def test_gradient_field_class_survives_horizontal_flip(k):
    # the class cue is the top-vs-bottom brightness difference, which a left-right flip leaves alone
    d = make_synthetic(SyntheticSpec(seed=3, count=200, resolution=16, num_classes=k, generator="gradient-fields"))
    h = d.images.shape[-2] // 2
    tilt = d.images[..., h:, :].mean(axis=(1, 2, 3)) - d.images[..., :h, :].mean(axis=(1, 2, 3))
    means = [tilt[d.labels == c].mean() for c in range(k)]
    assert all(a < b for a, b in zip(means, means[1:]))
    if k == 2:
        assert np.all(tilt[d.labels == 0] < 0) and np.all(tilt[d.labels == 1] > 0)


def test_synthetic_spec_errors():
    with pytest.raises(ValueError):
        SyntheticSpec(count=0)
    with pytest.raises(ValueError):
        SyntheticSpec(generator="plasma")
