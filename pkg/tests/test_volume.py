import numpy as np
import pytest
from hypothesis import given, strategies as st

from hemtriage.errors import ArityError, ConfigError, DataError, FormatError
from hemtriage.volume import (DEFAULT_WINDOWS, CtVolume, ManifestRow, ScanLabels, WindowSpec,
                              apply_window, load_manifest, load_slice_labels, load_volume,
                              save_manifest, save_slice_labels, stack_channels, store_volume)

from conftest import make_volume, labels_from_matrix

BRAIN = WindowSpec(40, 80)


class TestApplyWindow:
    def test_center_maps_to_midpoint(self):
        assert apply_window(np.array([40]), BRAIN)[0] == 0.5

    def test_lower_edge_is_zero(self):
        assert apply_window(np.array([0]), BRAIN)[0] == 0.0

    def test_above_upper_edge_clamps_to_one(self):
        assert apply_window(np.array([200]), BRAIN)[0] == 1.0

    def test_linear_inside_window(self):
        # (60 - 0) / 80
        assert apply_window(np.array([60]), BRAIN)[0] == pytest.approx(0.75)

    def test_exact_edges(self):
        out = apply_window(np.array([0, 80]), BRAIN)
        assert out[0] == 0.0 and out[1] == 1.0

    def test_nonpositive_width_rejected(self):
        with pytest.raises(ConfigError):
            WindowSpec(40, 0)
        with pytest.raises(ConfigError):
            WindowSpec(40, -10)

    @given(st.integers(-1024, 4095), st.integers(-1024, 4095),
           st.floats(-500, 1500), st.floats(1, 2000))
    def test_monotone_in_hu(self, hu1, hu2, center, width):
        spec = WindowSpec(center, width)
        lo, hi = sorted((hu1, hu2))
        out = apply_window(np.array([lo, hi]), spec)
        assert out[0] <= out[1]
        assert 0.0 <= out[0] <= 1.0 and 0.0 <= out[1] <= 1.0


class TestStackChannels:
    def test_uniform_brain_value_across_default_windows(self):
        # Hand evaluation of clamp((hu - (c - w/2)) / w, 0, 1) at hu = 40:
        #   brain (40, 80):      (40 - 0) / 80    = 0.5
        #   subdural (80, 200):  (40 + 20) / 200  = 0.30
        #   soft (40, 380):      (40 + 150) / 380 = 0.5
        image = stack_channels(np.full((4, 4), 40), DEFAULT_WINDOWS)
        assert image.shape == (3, 4, 4)
        np.testing.assert_allclose(image[:, 0, 0], [0.5, 0.30, 0.5])

    def test_identical_specs_give_identical_channels(self):
        image = stack_channels(np.arange(16).reshape(4, 4), (BRAIN, BRAIN, BRAIN))
        assert np.array_equal(image[0], image[1]) and np.array_equal(image[1], image[2])

    def test_all_air_is_zero_for_defaults(self):
        image = stack_channels(np.full((4, 4), -1024), DEFAULT_WINDOWS)
        assert np.all(image == 0.0)

    def test_channel_k_equals_apply_window(self):
        hu = np.random.default_rng(3).integers(-1024, 4096, (6, 5))
        image = stack_channels(hu, DEFAULT_WINDOWS)
        for k, spec in enumerate(DEFAULT_WINDOWS):
            assert np.array_equal(image[k], apply_window(hu, spec))

    def test_wrong_spec_count(self):
        with pytest.raises(ArityError):
            stack_channels(np.zeros((2, 2)), (BRAIN, BRAIN))


class TestCtVolume:
    def test_rejects_empty(self):
        with pytest.raises(DataError):
            CtVolume("s", "p", np.zeros((0, 4, 4), dtype=np.int16), 5.0)

    def test_rejects_out_of_range_hu(self):
        bad = np.full((1, 2, 2), 5000)
        with pytest.raises(DataError):
            CtVolume("s", "p", bad, 5.0)

    def test_slice_label_length_checked(self):
        labels = labels_from_matrix(np.zeros((2, 5)))
        with pytest.raises(DataError):
            make_volume(num_slices=3, labels=labels)

    def test_scan_label_must_match_slice_or(self):
        matrix = np.zeros((3, 5), dtype=bool)
        matrix[1, 2] = True
        with pytest.raises(DataError):
            ScanLabels(False, False, False, False, False, slice_labels=matrix)
        ok = ScanLabels.from_slice_matrix(matrix)
        assert ok.sah and ok.any and not ok.edh

    def test_any_derivation(self):
        assert not ScanLabels.from_vector([0, 0, 0, 0, 0]).any
        assert ScanLabels.from_vector([0, 0, 0, 0, 1]).any


class TestVolumeFile:
    def test_round_trip_bytes_identical(self, tmp_path):
        volume = make_volume(num_slices=2, height=4, width=4, seed=9)
        path = tmp_path / "v.ctv"
        store_volume(volume, path)
        first = path.read_bytes()
        again = tmp_path / "w.ctv"
        store_volume(load_volume(path), again)
        assert again.read_bytes() == first

    def test_round_trip_preserves_fields(self, tmp_path):
        volume = make_volume(scan_id="abc", patient_id="xyz", num_slices=3, seed=4)
        path = tmp_path / "v.ctv"
        store_volume(volume, path)
        loaded = load_volume(path)
        assert loaded.scan_id == "abc"
        assert loaded.patient_id == "xyz"
        assert loaded.slice_thickness_mm == 5.0
        assert np.array_equal(loaded.slices, volume.slices)

    def test_truncated_payload(self, tmp_path):
        volume = make_volume(num_slices=2, seed=1)
        path = tmp_path / "v.ctv"
        store_volume(volume, path)
        data = path.read_bytes()
        path.write_bytes(data[:-3])
        with pytest.raises(FormatError, match="truncated"):
            load_volume(path)

    def test_trailing_bytes(self, tmp_path):
        volume = make_volume(num_slices=2, seed=1)
        path = tmp_path / "v.ctv"
        store_volume(volume, path)
        path.write_bytes(path.read_bytes() + b"xx")
        with pytest.raises(FormatError, match="trailing"):
            load_volume(path)

    def test_zero_slices_header(self, tmp_path):
        path = tmp_path / "v.ctv"
        header = (b'{"scan_id": "s", "patient_id": "p", "height": 2, "width": 2, '
                  b'"num_slices": 0, "slice_thickness_mm": 5.0}\n')
        path.write_bytes(header)
        with pytest.raises(FormatError, match="empty volume"):
            load_volume(path)

    def test_malformed_header(self, tmp_path):
        path = tmp_path / "v.ctv"
        path.write_bytes(b"not json\n" + b"\x00" * 8)
        with pytest.raises(FormatError, match="header"):
            load_volume(path)

    def test_out_of_range_payload(self, tmp_path):
        path = tmp_path / "v.ctv"
        header = (b'{"scan_id": "s", "patient_id": "p", "height": 1, "width": 2, '
                  b'"num_slices": 1, "slice_thickness_mm": 5.0}\n')
        payload = np.array([[-2000, 0]], dtype="<i2").tobytes()
        path.write_bytes(header + payload)
        with pytest.raises(FormatError, match="HU"):
            load_volume(path)


class TestManifest:
    def test_round_trip(self, tmp_path):
        rows = [
            ManifestRow("s0", "p0", "volumes/s0.ctv", ScanLabels.from_vector([1, 0, 0, 0, 1])),
            ManifestRow("s1", "p0", "volumes/s1.ctv", ScanLabels.from_vector([0, 0, 0, 0, 0])),
        ]
        path = tmp_path / "manifest.csv"
        save_manifest(rows, path)
        loaded = load_manifest(path)
        assert [r.scan_id for r in loaded] == ["s0", "s1"]
        assert loaded[0].labels.edh and loaded[0].labels.iph and not loaded[0].labels.sdh
        assert not loaded[1].labels.any

    def test_bad_label_cell(self, tmp_path):
        path = tmp_path / "manifest.csv"
        path.write_text("scan_id,patient_id,path,edh,sdh,sah,ivh,iph\ns0,p0,x,2,0,0,0,0\n")
        with pytest.raises(FormatError):
            load_manifest(path)

    def test_missing_column(self, tmp_path):
        path = tmp_path / "manifest.csv"
        path.write_text("scan_id,patient_id,edh,sdh,sah,ivh,iph\ns0,p0,0,0,0,0,0\n")
        with pytest.raises(FormatError):
            load_manifest(path)


class TestSliceLabelCsv:
    def test_round_trip(self, tmp_path):
        matrices = {"s0": np.array([[0, 0, 1, 0, 0], [0, 0, 0, 0, 0]], dtype=bool)}
        path = tmp_path / "slices.csv"
        save_slice_labels(matrices, path)
        loaded = load_slice_labels(path)
        assert np.array_equal(loaded["s0"], matrices["s0"])

    def test_gap_in_indices_rejected(self, tmp_path):
        path = tmp_path / "slices.csv"
        path.write_text("scan_id,slice_index,edh,sdh,sah,ivh,iph\n"
                        "s0,0,0,0,0,0,0\ns0,2,0,0,0,0,0\n")
        with pytest.raises(FormatError, match="contiguous"):
            load_slice_labels(path)
