import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from lenspatch.boxes import pairwise_iou
from lenspatch.data import (
    DatasetManifest,
    GroundTruth,
    ManifestError,
    ManifestRecord,
    SplitError,
    SplitSpec,
    SyntheticConfig,
    format_manifest,
    generate_synthetic,
    load_manifest,
    scenes_from_manifest,
    self_label,
    split_dataset,
    split_indices,
    synthetic_scenes,
    write_scenes,
)
from lenspatch.detector import DetectionGrid

NAMES = ("stop_sign", "car")


# -- manifest ------------------------------------------------------------------------

def test_write_then_load_reproduces_scenes(tmp_path):
    scenes = synthetic_scenes(SyntheticConfig(n_scenes=6, seed=3))
    path = write_scenes(scenes, tmp_path)
    manifest = load_manifest(path)
    assert manifest.class_names == scenes.class_names
    back = scenes_from_manifest(manifest)
    assert torch.equal(back.images, scenes.images)
    for a, b in zip(back.truths, scenes.truths):
        np.testing.assert_allclose(a.boxes, b.boxes, atol=64 * 5e-7)
        assert a.labels.tolist() == b.labels.tolist()
    assert back.sources == ["synthetic"] * 6


def test_format_is_stable_text():
    m = DatasetManifest([ManifestRecord("images/a.png", (("car", (0.1, 0.2, 0.3, 0.4)),), "lisa")], NAMES)
    assert format_manifest(m) == "#! classes=stop_sign,car\n#! source=lisa\nimages/a.png;car=0.100000,0.200000,0.300000,0.400000\n"


def _manifest(tmp_path, body):
    path = tmp_path / "m.txt"
    path.write_text(body)
    return path


@pytest.mark.parametrize("line,msg", [
    ("a.png;car=0.1,0.2,0.3", "4 values"),
    ("a.png;car=0.5,0.2,0.3,0.4", "invalid box"),
    ("a.png;car=0.1,0.2,1.3,0.4", r"outside \[0, 1\]"),
    ("a.png;bus=0.1,0.2,0.3,0.4", "unknown class name 'bus'"),
    ("a.png;car=a,b,c,d", "non-numeric"),
    ("a.png;car", "malformed"),
])
def test_bad_lines_name_their_line_number(tmp_path, line, msg):
    path = _manifest(tmp_path, f"#! classes=stop_sign,car\n# note\na.png\n{line}\n")
    with pytest.raises(ManifestError, match=rf"m\.txt:4: .*{msg}"):
        load_manifest(path, check_images=False)


def test_missing_image_reported(tmp_path):
    path = _manifest(tmp_path, "missing.png;car=0.1,0.2,0.3,0.4\n")
    with pytest.raises(ManifestError, match="missing image file"):
        load_manifest(path)


def test_classes_collected_in_order_without_directive(tmp_path):
    path = _manifest(tmp_path, "a.png;car=0.1,0.1,0.2,0.2\nb.png;stop_sign=0.1,0.1,0.2,0.2;car=0.3,0.3,0.4,0.4\n")
    m = load_manifest(path, check_images=False)
    assert m.class_names == ("car", "stop_sign")
    assert [r.source for r in m.records] == ["m", "m"]


def test_out_of_frame_truth_detected():
    with pytest.raises(ValueError):
        GroundTruth(np.array([[0, 0, 70, 10]]), np.array([0])).check_bounds(64, 64)
    with pytest.raises(ValueError):
        GroundTruth(np.array([[5, 5, 5, 10]]), np.array([0]))


# -- splitting ------------------------------------------------------------------------

def test_held_out_source_becomes_the_test_set():
    sources = ["lisa"] * 10 + ["bdd"] * 100
    train, val, test = split_indices(sources, SplitSpec(test_sources=("lisa",), seed=1))
    assert test == list(range(10))
    assert (len(train), len(val)) == (90, 10)


@given(st.integers(3, 200), st.integers(0, 2**16))
def test_split_is_a_deterministic_partition(n, seed):
    sources = ["held"] + ["pool"] * n
    spec = SplitSpec(test_sources=("held",), seed=seed)
    try:
        parts = split_indices(sources, spec)
    except SplitError:
        assert n < 10  # too small for a non-empty 10% validation part
        return
    assert parts == split_indices(sources, spec)
    flat = sorted(i for p in parts for i in p)
    assert flat == list(range(n + 1))
    assert len(parts[0]) == int(np.floor(0.9 * n + 0.5)) and len(parts[1]) == n - len(parts[0])


def test_empty_part_is_an_error():
    with pytest.raises(SplitError, match="empty test"):
        split_indices(["a"] * 20, SplitSpec(test_sources=("lisa",)))
    with pytest.raises(SplitError):
        SplitSpec(train_fraction=0.95, val_fraction=0.1)


def test_split_dataset_keeps_records():
    recs = [ManifestRecord(f"{k}.png", (), "lisa" if k < 3 else "bdd") for k in range(23)]
    train, val, test = split_dataset(DatasetManifest(recs, NAMES), SplitSpec(test_sources=("lisa",)))
    assert [r.image_path for r in test.records] == ["0.png", "1.png", "2.png"]
    assert len(train) == 18 and len(val) == 2


# -- self-labeling ---------------------------------------------------------------------

class FixedDetector:
    """Returns the same candidates for every image."""

    class_names = NAMES

    def __init__(self, boxes, scores):
        self.boxes = torch.tensor(boxes, dtype=torch.float64)
        self.scores = torch.tensor(scores, dtype=torch.float64)

    def detect_raw(self, images):
        n = images.shape[0]
        k = len(self.boxes)
        return DetectionGrid(self.boxes.expand(n, k, 4), torch.ones(n, k, dtype=torch.float64),
                             self.scores.expand(n, k, 2), (64, 64), NAMES)


def _one_record(objects=()):
    return DatasetManifest([ManifestRecord("a.png", tuple(objects), "x")], NAMES), torch.zeros(1, 3, 64, 64)


def test_self_label_without_detections_changes_nothing():
    m, imgs = _one_record((("car", (0.1, 0.1, 0.3, 0.3)),))
    out = self_label(m, imgs, FixedDetector([[0, 0, 32, 32]], [[0.1, 0.2]]))
    assert out.records == m.records


def test_self_label_adds_new_objects():
    m, imgs = _one_record()
    out = self_label(m, imgs, FixedDetector([[0, 0, 32, 16]], [[0.9, 0.0]]))
    assert out.records[0].objects == (("stop_sign", (0.0, 0.0, 0.5, 0.25)),)


def test_self_label_keeps_existing_annotation_on_conflict():
    m, imgs = _one_record((("car", (0.0, 0.0, 0.5, 0.5)),))
    out = self_label(m, imgs, FixedDetector([[1, 1, 32, 32]], [[0.0, 0.9]]))
    assert out.records == m.records


def test_self_label_is_idempotent():
    m, imgs = _one_record()
    det = FixedDetector([[0, 0, 32, 16], [40, 40, 60, 60]], [[0.9, 0.0], [0.0, 0.8]])
    once = self_label(m, imgs, det)
    assert self_label(once, imgs, det).records == once.records
    assert len(once.records[0].objects) == 2


# -- synthetic scenes ----------------------------------------------------------------------

@pytest.fixture(scope="module")
def ten():
    return generate_synthetic(SyntheticConfig(n_scenes=10, seed=0))


def test_synthetic_shape_and_determinism(ten):
    images, manifest = ten
    again, m2 = generate_synthetic(SyntheticConfig(n_scenes=10, seed=0))
    assert images.shape == (10, 3, 64, 64)
    assert torch.equal(images, again) and manifest.records == m2.records
    assert not torch.equal(images, generate_synthetic(SyntheticConfig(n_scenes=10, seed=1))[0])


def test_synthetic_objects_are_valid_and_separated(ten):
    images, manifest = ten
    assert float(images.min()) >= 0 and float(images.max()) <= 1
    for rec in manifest.records:
        assert 1 <= len(rec.objects) <= 4
        boxes = np.array([b for _, b in rec.objects]) * 64
        assert np.all(boxes >= 0) and np.all(boxes <= 64)
        if len(boxes) > 1:
            ious = pairwise_iou(boxes, boxes)
            np.fill_diagonal(ious, 0)
            assert ious.max() < 0.05


def test_synthetic_images_are_8bit_exact(ten):
    images, _ = ten
    assert torch.equal(torch.round(images * 255) / 255, images)


def test_synthetic_rejects_unknown_classes():
    with pytest.raises(ValueError, match="no synthetic drawer"):
        generate_synthetic(SyntheticConfig(n_scenes=1, class_names=("stop_sign", "bus")))
