"""Rasterization, the packed format, and dataset generation."""

import struct
import zlib

import numpy as np
import pytest
from scipy import ndimage

from svrtlab import datasets, raster, tasks
from svrtlab.errors import DataError, FormatError
from svrtlab.raster import DatasetManifest, pack, prepare, rasterize, unpack
from svrtlab.tasks import Scene


def scene(tid, label, seed):
    rng = np.random.default_rng([tid, label, seed])
    return tasks.sample_scene(tid, label, rng)


class TestRasterize:
    def test_empty_scene_is_blank(self):
        img = rasterize(Scene(task_id=1, label=0, shapes=()), 128)
        assert img.shape == (128, 128)
        assert img.dtype == np.uint8
        assert np.all(img == 255)

    def test_deterministic(self):
        sc = scene(9, 1, 3)
        assert np.array_equal(rasterize(sc), rasterize(sc))

    def test_ink_count_tracks_arc_length(self):
        for seed in range(5):
            sc = scene(1, 1, seed)
            img = rasterize(sc)
            ink = int((img == 0).sum())
            length = 0.0
            for s in sc.shapes:
                p = s.points
                length += float(np.hypot(*(np.roll(p, -1, axis=0) - p).T).sum())
            # Bresenham lights about 0.90 * arc length pixels on average
            # (one per unit Chebyshev distance), so 0.9 * L is the reference.
            assert 0.8 * 0.9 * length <= ink <= 1.2 * 0.9 * length

    def test_loops_are_closed_components(self):
        for tid, seed in ((1, 0), (14, 2), (7, 1)):
            sc = scene(tid, 1, seed)
            img = rasterize(sc)
            ink = img == 0
            n_comp = ndimage.label(ink, structure=np.ones((3, 3)))[1]
            assert n_comp == len(sc.shapes), (tid, seed)
            neighbors = ndimage.convolve(
                ink.astype(np.int32), np.ones((3, 3), dtype=np.int32), mode="constant"
            ) - ink.astype(np.int32)
            assert neighbors[ink].min() >= 2

    def test_half_resolution_stays_closed(self):
        sc = scene(4, 1, 0)
        img = rasterize(sc, 64)
        assert img.shape == (64, 64)
        ink = img == 0
        n_comp = ndimage.label(ink, structure=np.ones((3, 3)))[1]
        assert n_comp == len(sc.shapes)


class TestPrepare:
    def test_blank_maps_to_half(self):
        img = np.full((128, 128), 255, dtype=np.uint8)
        out = prepare(img)
        assert out.dtype == np.float32
        assert np.all(out == np.float32(0.5))

    def test_range_bounds(self):
        sc = scene(3, 1, 0)
        out = prepare(rasterize(sc))
        assert out.min() >= -0.5 and out.max() <= 0.5
        assert out.min() == np.float32(-0.5)

    def test_upscale_nearest(self):
        rng = np.random.default_rng(0)
        img = rng.integers(0, 256, size=(16, 16), dtype=np.uint8)
        out = prepare(img, 32)
        expect = img.astype(np.float32) / 255.0 - 0.5
        assert out.shape == (32, 32)
        for di in (0, 1):
            for dj in (0, 1):
                assert np.allclose(out[di::2, dj::2], expect)

    def test_downscale_nearest(self):
        rng = np.random.default_rng(1)
        img = rng.integers(0, 256, size=(4, 128, 128), dtype=np.uint8)
        out = prepare(img, 64)
        assert out.shape == (4, 64, 64)
        assert np.allclose(out, img[:, ::2, ::2].astype(np.float32) / 255.0 - 0.5)

    def test_non_integer_factor_rejected(self):
        img = np.zeros((128, 128), dtype=np.uint8)
        with pytest.raises(ValueError):
            prepare(img, 96)
        with pytest.raises(ValueError):
            prepare(img, 192)

    def test_even_translation_covariance(self):
        for seed in range(10):
            sc = scene(1, 1, seed)
            if max(s.points.max() for s in sc.shapes) > 124.0:
                continue
            moved = Scene(
                task_id=sc.task_id,
                label=sc.label,
                shapes=tuple(
                    s.moved((s.transform.translation[0] + 2.0, s.transform.translation[1]))
                    for s in sc.shapes
                ),
            )
            base = prepare(rasterize(sc))
            shifted = prepare(rasterize(moved))
            assert np.array_equal(shifted[:, 2:], base[:, :-2])
            break
        else:
            pytest.fail("no scene with enough border clearance found")


class TestPackFormat:
    def _tiny(self, n=2, h=128, w=128):
        rng = np.random.default_rng(5)
        labels = np.arange(n, dtype=np.uint8) % 2
        images = rng.integers(0, 256, size=(n, h, w), dtype=np.uint8)
        return labels, images

    def test_round_trip(self):
        labels, images = self._tiny(6, 32, 32)
        data = pack(9, labels, images)
        tid, lab2, img2 = unpack(data)
        assert tid == 9
        assert np.array_equal(labels, lab2)
        assert np.array_equal(images, img2)
        assert pack(9, lab2, img2) == data

    def test_exact_size(self):
        labels, images = self._tiny(2)
        data = pack(1, labels, images)
        assert len(data) == 16 + 2 * (1 + 128 * 128)

    def test_bad_magic_offset(self):
        labels, images = self._tiny(2, 8, 8)
        data = bytearray(pack(1, labels, images))
        data[0] = ord(b"X")
        with pytest.raises(FormatError) as err:
            unpack(bytes(data))
        assert "offset 0" in str(err.value)

    def test_bad_version_offset(self):
        labels, images = self._tiny(2, 8, 8)
        data = bytearray(pack(1, labels, images))
        data[5] = 9
        with pytest.raises(FormatError) as err:
            unpack(bytes(data))
        assert "offset 5" in str(err.value)

    def test_truncation_reports_first_missing_byte(self):
        labels, images = self._tiny(2, 8, 8)
        data = pack(1, labels, images)
        cut = len(data) - 7
        with pytest.raises(FormatError) as err:
            unpack(data[:cut])
        assert f"offset {cut}" in str(err.value)

    def test_trailing_data_rejected(self):
        labels, images = self._tiny(2, 8, 8)
        data = pack(1, labels, images)
        with pytest.raises(FormatError) as err:
            unpack(data + b"z")
        assert f"offset {len(data)}" in str(err.value)

    def test_bad_label_byte(self):
        labels, images = self._tiny(2, 8, 8)
        data = bytearray(pack(1, labels, images))
        second_label = 16 + (1 + 64)
        data[second_label] = 7
        with pytest.raises(FormatError) as err:
            unpack(bytes(data))
        assert f"offset {second_label}" in str(err.value)

    def test_unbalanced_rejected(self):
        _, images = self._tiny(2, 8, 8)
        with pytest.raises(ValueError):
            pack(1, np.array([1, 1], dtype=np.uint8), images)


class TestManifest:
    def test_text_round_trip(self):
        m = DatasetManifest(3, "train", 100, 7, 1, "abcdef0011223344")
        again = DatasetManifest.from_text(m.to_text())
        assert again == m

    def test_odd_count_rejected(self):
        with pytest.raises(ValueError):
            DatasetManifest(3, "train", 101, 7, 1, "00")

    def test_missing_field(self):
        with pytest.raises(FormatError):
            DatasetManifest.from_text("task_id=1\nsplit=train\n")

    def test_comments_and_blanks_ignored(self):
        m = DatasetManifest(3, "val", 4, 1, 1, "aa")
        text = "# generated\n\n" + m.to_text()
        assert DatasetManifest.from_text(text) == m


class TestPng:
    def test_written_png_decodes(self, tmp_path):
        sc = scene(2, 1, 0)
        img = rasterize(sc)
        path = tmp_path / "scene.png"
        raster.write_png(path, img)
        data = path.read_bytes()
        assert data[:8] == b"\x89PNG\r\n\x1a\n"
        w, h, depth, color = struct.unpack(">IIBB", data[16:26])
        assert (w, h, depth, color) == (128, 128, 8, 0)
        idat_start = data.index(b"IDAT") + 4
        idat_len = struct.unpack(">I", data[idat_start - 8:idat_start - 4])[0]
        raw = zlib.decompress(data[idat_start:idat_start + idat_len])
        rows = np.frombuffer(raw, dtype=np.uint8).reshape(h, w + 1)
        assert np.all(rows[:, 0] == 0)
        assert np.array_equal(rows[:, 1:], img)


class TestDatasets:
    def test_generation_deterministic_and_balanced(self):
        p1, m1 = datasets.generate_packed(1, "train", 8, 123, size=64)
        p2, m2 = datasets.generate_packed(1, "train", 8, 123, size=64)
        assert p1 == p2 and m1 == m2
        _, labels, images = raster.unpack(p1)
        assert labels.sum() * 2 == len(labels)
        assert np.array_equal(labels, np.arange(8) % 2)
        assert images.shape == (8, 64, 64)

    def test_splits_and_seeds_differ(self):
        a, _ = datasets.generate_packed(1, "train", 4, 123, size=64)
        b, _ = datasets.generate_packed(1, "test", 4, 123, size=64)
        c, _ = datasets.generate_packed(1, "train", 4, 124, size=64)
        assert a != b and a != c

    def test_scene_labels_verify(self):
        scenes = datasets.generate_scenes(23, "val", 6, 9)
        for i, sc in enumerate(scenes):
            assert sc.label == i % 2
            assert tasks.verify(23, sc.shapes) == sc.label

    def test_save_load_round_trip(self, tmp_path):
        path = datasets.save_dataset(tmp_path, 1, "test", 6, 42, size=64)
        manifest, labels, images = datasets.load_dataset(path)
        assert manifest.task_id == 1 and manifest.count == 6
        assert labels.shape == (6,) and images.shape == (6, 64, 64)

    def test_corrupted_payload_detected(self, tmp_path):
        path = datasets.save_dataset(tmp_path, 1, "test", 4, 42, size=64)
        blob = bytearray(open(path, "rb").read())
        blob[-1] ^= 0xFF
        with open(path, "wb") as fh:
            fh.write(bytes(blob))
        with pytest.raises(DataError):
            datasets.load_dataset(path)

    def test_unknown_split_rejected(self):
        with pytest.raises(ValueError):
            datasets.sample_rng(0, 1, "holdout", 0)
        with pytest.raises(ValueError):
            datasets.generate_images(1, "train", 5, 0)

    def test_pool_ordering(self):
        task_arr, labels, images = datasets.generate_pool((1, 16), 4, 7, size=64)
        assert np.array_equal(task_arr, [1, 1, 1, 1, 16, 16, 16, 16])
        assert np.array_equal(labels, [0, 1, 0, 1, 0, 1, 0, 1])
        single_labels, single_images = datasets.generate_images(16, "pool", 4, 7, size=64)
        assert np.array_equal(images[4:], single_images)
        assert np.array_equal(labels[4:], single_labels)
