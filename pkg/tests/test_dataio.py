"""Dataset CSV and truth-bundle serialization."""

import json
import math

import numpy as np
import pytest

from hemodesign.dataio import (
    DataFormatError,
    load_dataset,
    load_truth,
    read_json,
    truth_to_dict,
    write_dataset,
    write_json,
    write_truth,
)
from hemodesign.model import Dataset, Design, HierarchicalParams, MouseRecord
from hemodesign.ode import OdeParams


def small_dataset(grouped=False):
    records = [
        MouseRecord("m0", 0.0, math.log(653.0), math.log(1970.0)),
        MouseRecord("m1", 0.0, math.log(701.5), math.log(2100.25)),
        MouseRecord("m2", 2.0, math.log(410.0), math.log(1500.0),
                    group="perturbed" if grouped else ""),
        MouseRecord("m3", 6.0, math.log(380.75), math.log(901.0)),
    ]
    return Dataset(records=tuple(records))


def small_truth():
    return HierarchicalParams(
        theta=OdeParams(p0=0.53, eta1=9.0, eta2=8.4, gamma1=2.0, gamma2=4.0),
        mu=[[650.0, 2000.0]],
        sigma_b=0.1,
        sigma_t=0.15,
    )


class TestDatasetRoundTrip:
    def test_counts_survive_bit_for_bit(self, tmp_path):
        path = tmp_path / "d.csv"
        ds = small_dataset()
        write_dataset(ds, path)
        loaded = load_dataset(path)
        # the file stores raw counts; a second write must reproduce the
        # exact same bytes, so no precision is lost in either direction
        path2 = tmp_path / "d2.csv"
        write_dataset(loaded, path2)
        assert path.read_bytes() == path2.read_bytes()

    def test_log_scale_values_match_to_rounding(self, tmp_path):
        path = tmp_path / "d.csv"
        ds = small_dataset()
        write_dataset(ds, path)
        loaded = load_dataset(path)
        for orig, back in zip(ds.records, loaded.records):
            assert back.mouse_id == orig.mouse_id
            assert back.day == orig.day
            assert back.y_hsc == pytest.approx(orig.y_hsc, rel=1e-15)
            assert back.y_mpp == pytest.approx(orig.y_mpp, rel=1e-15)

    def test_group_column_only_when_used(self, tmp_path):
        plain = tmp_path / "plain.csv"
        write_dataset(small_dataset(grouped=False), plain)
        assert plain.read_text().splitlines()[0] == "mouse_id,day,hsc_count,mpp_count"

        grouped = tmp_path / "grouped.csv"
        write_dataset(small_dataset(grouped=True), grouped)
        lines = grouped.read_text().splitlines()
        assert lines[0] == "mouse_id,day,hsc_count,mpp_count,group"
        loaded = load_dataset(grouped)
        assert loaded.records[2].group == "perturbed"
        assert loaded.records[0].group == ""
        assert loaded.groups() == ("", "perturbed")

    def test_header_only_file_is_an_empty_dataset(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("mouse_id,day,hsc_count,mpp_count\n")
        assert load_dataset(path).n_records == 0

    def test_blank_lines_are_skipped(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("mouse_id,day,hsc_count,mpp_count\n\nm0,0,650,2000\n\n")
        assert load_dataset(path).n_records == 1


class TestDatasetValidation:
    def test_empty_file(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("")
        with pytest.raises(DataFormatError, match=":1:"):
            load_dataset(path)

    def test_wrong_header(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("id,day,hsc,mpp\nm0,0,650,2000\n")
        with pytest.raises(DataFormatError, match="header"):
            load_dataset(path)

    def test_field_count_mismatch_names_line(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("mouse_id,day,hsc_count,mpp_count\nm0,0,650,2000\nm1,2,410\n")
        with pytest.raises(DataFormatError, match=":3:"):
            load_dataset(path)

    def test_non_numeric_day_names_line_and_field(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("mouse_id,day,hsc_count,mpp_count\nm0,soon,650,2000\n")
        with pytest.raises(DataFormatError, match=r":2:.*day"):
            load_dataset(path)

    def test_negative_day(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("mouse_id,day,hsc_count,mpp_count\nm0,-1,650,2000\n")
        with pytest.raises(DataFormatError, match="non-negative"):
            load_dataset(path)

    def test_non_finite_count(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("mouse_id,day,hsc_count,mpp_count\nm0,0,inf,2000\n")
        with pytest.raises(DataFormatError, match="finite"):
            load_dataset(path)

    def test_nonpositive_count(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("mouse_id,day,hsc_count,mpp_count\nm0,0,650,0\n")
        with pytest.raises(DataFormatError, match="positive"):
            load_dataset(path)

    def test_empty_mouse_id(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("mouse_id,day,hsc_count,mpp_count\n,0,650,2000\n")
        with pytest.raises(DataFormatError, match="mouse_id"):
            load_dataset(path)

    def test_duplicate_mouse_id_carries_path(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text(
            "mouse_id,day,hsc_count,mpp_count\nm0,0,650,2000\nm0,2,410,1500\n"
        )
        with pytest.raises(DataFormatError, match="duplicate"):
            load_dataset(path)


class TestTruthBundle:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "truth.json"
        truth = small_truth()
        design = Design(days=(0.0, 2.0, 6.0), replicates=(3, 3, 3))
        write_truth(
            path, truth, feedback=True, gain_scale=1e-5, seed=42, design=design
        )
        loaded, payload = load_truth(path)
        assert loaded.theta == truth.theta
        assert loaded.sigma_b == truth.sigma_b
        assert loaded.sigma_t == truth.sigma_t
        assert np.array_equal(loaded.mu, truth.mu)
        assert payload["seed"] == 42
        assert payload["gain_scale"] == 1e-5
        assert payload["feedback"] is True
        assert payload["design"]["days"] == [0.0, 2.0, 6.0]
        assert payload["schema_version"] == 1

    def test_multi_group_truth_is_refused(self):
        truth = HierarchicalParams(
            theta=small_truth().theta,
            mu=[[650.0, 2000.0], [900.0, 8000.0]],
            sigma_b=0.1,
            sigma_t=0.1,
        )
        with pytest.raises(ValueError, match="single-group"):
            truth_to_dict(truth)

    def test_malformed_bundle(self, tmp_path):
        path = tmp_path / "truth.json"
        path.write_text(json.dumps({"schema_version": 1, "parameters": {"p0": 0.53}}))
        with pytest.raises(DataFormatError, match="truth"):
            load_truth(path)


class TestJsonHelpers:
    def test_write_json_is_deterministic_and_sorted(self, tmp_path):
        a = tmp_path / "a.json"
        b = tmp_path / "b.json"
        write_json(a, {"zeta": 1, "alpha": [1, 2]})
        write_json(b, {"alpha": [1, 2], "zeta": 1})
        assert a.read_bytes() == b.read_bytes()
        assert a.read_text().endswith("\n")
        assert a.read_text().index("alpha") < a.read_text().index("zeta")

    def test_read_json_reports_path_on_garbage(self, tmp_path):
        path = tmp_path / "x.json"
        path.write_text("{nope")
        with pytest.raises(DataFormatError, match="x.json"):
            read_json(path)
