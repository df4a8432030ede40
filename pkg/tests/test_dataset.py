"""Manifest IO, pixel splits, and synthetic generation tests."""

import dataclasses
import json

import numpy as np
import numpy.testing as npt
import pytest
from PIL import Image

from phenovit.dataset import (AnnotationMask, ClassSignature, ImageTimeSeries,
                              PixelIndex, SyntheticSpec, UNLABELED,
                              export_visual_rhythm, generate_synthetic,
                              labeled_pixels, load_manifest, preset_spec,
                              save_manifest, split_validation,
                              visual_rhythm_csv)
from phenovit.errors import ConfigError, DataError, GenerationError

# Frozen from one generation of the default four-class preset (seed 42);
# reruns must reproduce these counts exactly.
FOUR_CLASS_PIXEL_COUNTS = {
    "evergreen": 526,
    "early-flowering": 686,
    "late-flowering": 586,
    "deciduous": 490,
}


def _tiny_manifest(tmp_path, second_frame_shape=(4, 4), mask_color_ok=True):
    """Two 4x4 frames, one class, three labeled train pixels."""
    frame0 = np.zeros((4, 4, 3), dtype=np.uint8)
    frame0[:, :, 0] = 10
    frame1 = np.zeros((*second_frame_shape, 3), dtype=np.uint8)
    frame1[:, :, 1] = 20
    Image.fromarray(frame0).save(tmp_path / "f0.png")
    Image.fromarray(frame1).save(tmp_path / "f1.png")

    mask = np.zeros((4, 4, 3), dtype=np.uint8)
    color = (255, 0, 0) if mask_color_ok else (9, 9, 9)
    for x, y in ((0, 0), (1, 1), (2, 2)):
        mask[y, x] = color
    Image.fromarray(mask).save(tmp_path / "mask.png")

    manifest = {
        "name": "tiny",
        "frames": [{"timestamp": "t0", "file": "f0.png"},
                   {"timestamp": "t1", "file": "f1.png"}],
        "mask": {"file": "mask.png",
                 "legend": [{"color": [255, 0, 0], "class": "only", "split": "train"}]},
        "unlabeled_color": [0, 0, 0],
    }
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps(manifest))
    return path


def test_load_manifest_tiny_fixture(tmp_path):
    series, mask = load_manifest(_tiny_manifest(tmp_path))
    assert series.num_frames == 2
    assert mask.num_classes == 1
    train, test = labeled_pixels(mask)
    assert len(train) == 3 and len(test) == 0
    assert {(p.x, p.y) for p in train} == {(0, 0), (1, 1), (2, 2)}


def test_load_manifest_frame_dimension_mismatch(tmp_path):
    path = _tiny_manifest(tmp_path, second_frame_shape=(4, 5))
    with pytest.raises(DataError, match="frame dimension mismatch"):
        load_manifest(path)


def test_load_manifest_unknown_mask_color(tmp_path):
    path = _tiny_manifest(tmp_path, mask_color_ok=False)
    with pytest.raises(DataError, match=r"\[9, 9, 9\].*x=0, y=0"):
        load_manifest(path)


def test_load_manifest_missing_frame(tmp_path):
    path = _tiny_manifest(tmp_path)
    (tmp_path / "f1.png").unlink()
    with pytest.raises(DataError, match="f1.png"):
        load_manifest(path)


def test_load_manifest_duplicate_class(tmp_path):
    path = _tiny_manifest(tmp_path)
    payload = json.loads(path.read_text())
    payload["mask"]["legend"].append(
        {"color": [0, 255, 0], "class": "only", "split": "train"})
    path.write_text(json.dumps(payload))
    with pytest.raises(DataError, match="duplicate class name"):
        load_manifest(path)


def test_split_validation_partition():
    pixels = [PixelIndex(i, 0, 0, "train") for i in range(10)]
    train, val = split_validation(pixels, 0.2, seed=1)
    assert len(train) == 8 and len(val) == 2
    train_xy = {(p.x, p.y) for p in train}
    val_xy = {(p.x, p.y) for p in val}
    assert train_xy.isdisjoint(val_xy)
    assert train_xy | val_xy == {(p.x, p.y) for p in pixels}
    assert all(p.split == "validation" for p in val)


def test_split_validation_deterministic():
    pixels = [PixelIndex(i, i, 0, "train") for i in range(97)]
    first = split_validation(pixels, 0.2, seed=9)
    second = split_validation(pixels, 0.2, seed=9)
    assert [(p.x, p.y) for p in first[1]] == [(p.x, p.y) for p in second[1]]


def test_split_validation_size_at_survey_scale():
    # 20% of 147,182 annotated pixels
    pixels = [PixelIndex(i % 1000, i // 1000, 0, "train") for i in range(147_182)]
    _, val = split_validation(pixels, 0.2, seed=0)
    assert len(val) == 29_436


def test_split_validation_empty_errors():
    with pytest.raises(DataError):
        split_validation([], 0.2, seed=0)


def test_generate_synthetic_degenerate_signal_is_static():
    spec = SyntheticSpec(
        classes=[ClassSignature("flat", base=0.5, amplitude=0.0)],
        num_frames=4, height=40, width=40, blob_count=2, blob_radius=(3, 3),
        noise_std=0.0, seed=1)
    series, mask = generate_synthetic(spec)
    region = mask.labels == 0
    for t in range(1, 4):
        npt.assert_array_equal(series.frames[t][region], series.frames[0][region])


def test_generate_synthetic_shared_chromaticity_differs_only_in_intensity():
    spec = SyntheticSpec(
        classes=[ClassSignature("dim", base=0.3), ClassSignature("bright", base=0.6)],
        num_frames=3, height=48, width=48, blob_count=2, blob_radius=(3, 4),
        noise_std=0.0, seed=3)
    series, mask = generate_synthetic(spec)
    dim_px = series.frames[0][mask.labels == 0][0].astype(float)
    bright_px = series.frames[0][mask.labels == 1][0].astype(float)
    assert not np.array_equal(dim_px, bright_px)
    npt.assert_allclose(dim_px / dim_px.sum(), bright_px / bright_px.sum(), atol=0.01)


def test_generate_synthetic_is_pure_function_of_spec():
    spec = preset_spec("four-class")
    series1, mask1 = generate_synthetic(spec)
    series2, mask2 = generate_synthetic(spec)
    assert np.array_equal(series1.frames, series2.frames)
    assert np.array_equal(mask1.labels, mask2.labels)
    assert np.array_equal(mask1.split, mask2.split)


def test_generate_synthetic_frozen_class_counts():
    _, mask = generate_synthetic(preset_spec("four-class"))
    counts = {name: int((mask.labels == i).sum())
              for i, name in enumerate(mask.class_names)}
    assert counts == FOUR_CLASS_PIXEL_COUNTS


def test_generate_synthetic_splits_are_disjoint_and_alternating():
    series, mask = generate_synthetic(preset_spec("four-class"))
    train, test = labeled_pixels(mask)
    assert train and test
    train_xy = {(p.x, p.y) for p in train}
    test_xy = {(p.x, p.y) for p in test}
    assert train_xy.isdisjoint(test_xy)
    # every class contributes pixels to both splits
    for class_id in range(mask.num_classes):
        assert any(p.label == class_id for p in train)
        assert any(p.label == class_id for p in test)


def test_generate_synthetic_overlap_failure_message():
    spec = SyntheticSpec(
        classes=[ClassSignature("a", base=0.5), ClassSignature("b", base=0.5)],
        num_frames=2, height=20, width=20, blob_count=8, blob_radius=(6, 6),
        noise_std=0.0, seed=0)
    with pytest.raises(GenerationError, match="smaller blob radius"):
        generate_synthetic(spec)


def test_spec_validation():
    bad = SyntheticSpec(classes=[ClassSignature("a", base=0.5,
                                                chromaticity=(0.5, 0.5, 0.5))])
    with pytest.raises(ConfigError, match="sum to 1"):
        bad.validate()
    with pytest.raises(ConfigError):
        SyntheticSpec(classes=[ClassSignature("a", base=0.5)], num_frames=1).validate()


def test_spec_json_round_trip():
    spec = preset_spec("intensity-pair")
    restored = SyntheticSpec.from_json(json.loads(json.dumps(spec.to_json())))
    assert restored == spec


def test_manifest_round_trip_is_bit_exact(tmp_path):
    spec = dataclasses.replace(preset_spec("four-class"), height=48, width=48,
                               blob_count=2, num_frames=3)
    series, mask = generate_synthetic(spec)
    manifest = save_manifest(series, mask, tmp_path / "ds")
    loaded_series, loaded_mask = load_manifest(manifest)
    assert np.array_equal(loaded_series.frames, series.frames)
    assert loaded_series.timestamps == series.timestamps
    assert np.array_equal(loaded_mask.labels, mask.labels)
    assert np.array_equal(loaded_mask.split, mask.split)
    assert loaded_mask.class_names == mask.class_names

    # and a second save of the loaded data produces identical files
    manifest2 = save_manifest(loaded_series, loaded_mask, tmp_path / "ds2")
    assert manifest.read_bytes() == manifest2.read_bytes()


def test_visual_rhythm_constant_pixel(tmp_path):
    frames = np.zeros((3, 4, 4, 3), dtype=np.uint8)
    frames[:, 1, 2] = (100, 50, 50)
    series = ImageTimeSeries(frames, ["a", "b", "c"])
    labels = np.full((4, 4), UNLABELED, dtype=np.int16)
    labels[1, 2] = 0
    split = np.zeros((4, 4), dtype=np.int8)
    split[1, 2] = 1
    mask = AnnotationMask(labels, split, ["only"])
    pixel = PixelIndex(2, 1, 0, "train")

    raw = export_visual_rhythm(series, mask, pixel, normalized=False)
    assert raw == [("a", 100.0, 50.0, 50.0), ("b", 100.0, 50.0, 50.0),
                   ("c", 100.0, 50.0, 50.0)]

    normalized = export_visual_rhythm(series, mask, pixel, normalized=True)
    for _, r, g, b in normalized:
        assert (r, g, b) == (0.5, 0.25, 0.25)

    csv_text = visual_rhythm_csv(raw)
    assert csv_text.splitlines()[0] == "timestamp,R,G,B"
    assert len(csv_text.splitlines()) == 4


def test_visual_rhythm_black_pixel_normalized_is_zero():
    frames = np.zeros((2, 2, 2, 3), dtype=np.uint8)
    series = ImageTimeSeries(frames, ["a", "b"])
    labels = np.zeros((2, 2), dtype=np.int16)
    split = np.ones((2, 2), dtype=np.int8)
    mask = AnnotationMask(labels, split, ["only"])
    rows = export_visual_rhythm(series, mask, PixelIndex(0, 0, 0, "train"),
                                normalized=True)
    assert rows == [("a", 0.0, 0.0, 0.0), ("b", 0.0, 0.0, 0.0)]


def test_visual_rhythm_unlabeled_pixel_errors():
    frames = np.zeros((2, 2, 2, 3), dtype=np.uint8)
    series = ImageTimeSeries(frames, ["a", "b"])
    labels = np.full((2, 2), UNLABELED, dtype=np.int16)
    mask = AnnotationMask(labels, np.zeros((2, 2), dtype=np.int8), ["only"])
    with pytest.raises(DataError, match="unlabeled"):
        export_visual_rhythm(series, mask, PixelIndex(0, 0, 0, "train"), False)


def test_manifest_accepts_ppm_frames(tmp_path):
    spec = SyntheticSpec(
        classes=[ClassSignature("only", base=0.5)],
        num_frames=2, height=24, width=24, blob_count=2, blob_radius=(3, 3),
        noise_std=1.0, seed=2)
    series, mask = generate_synthetic(spec)
    out = tmp_path / "ppm-ds"
    out.mkdir()
    entries = []
    for t in range(series.num_frames):
        name = f"f{t}.ppm"
        Image.fromarray(series.frames[t]).save(out / name)
        entries.append({"timestamp": series.timestamps[t], "file": name})
    mask_img = np.zeros((24, 24, 3), dtype=np.uint8)
    mask_img[(mask.labels == 0) & (mask.split == 1)] = (255, 0, 0)
    mask_img[(mask.labels == 0) & (mask.split == 2)] = (0, 0, 255)
    Image.fromarray(mask_img).save(out / "mask.ppm")
    (out / "manifest.json").write_text(json.dumps({
        "name": "ppm", "frames": entries,
        "mask": {"file": "mask.ppm",
                 "legend": [{"color": [255, 0, 0], "class": "only", "split": "train"},
                            {"color": [0, 0, 255], "class": "only", "split": "test"}]},
        "unlabeled_color": [0, 0, 0]}))
    loaded_series, loaded_mask = load_manifest(out / "manifest.json")
    assert np.array_equal(loaded_series.frames, series.frames)
    assert np.array_equal(loaded_mask.labels, mask.labels)
    assert np.array_equal(loaded_mask.split, mask.split)
