import json
import math

import numpy as np
import pytest

from defonet.assess import (
    PredictionReport,
    assess,
    deflection_profile,
    evaluate,
    oracle_predictor,
    plot_records,
    write_records,
)
from defonet.dataset import DatasetConfig, generate_dataset
from defonet.voxel import GridSpec, HeightField, VoxelGrid, voxelize


def test_verdict_examples():
    v = assess(0.009, 0.015)
    assert v.safe and v.margin == pytest.approx(0.006)
    assert not assess(0.090, 0.015).safe
    edge = assess(0.015, 0.015)
    assert not edge.safe and edge.margin == 0
    assert "at or above" in edge.rationale


def test_verdict_without_structure_is_unsafe():
    v = assess(float("nan"))
    assert not v.safe and math.isnan(v.margin)
    with pytest.raises(ValueError):
        assess(0.01, 0.0)


def bent_grid(spec, drop_voxels):
    z = np.full((spec.resolution,) * 2, 10 * spec.pitch)
    z[3:6, :] -= drop_voxels * spec.pitch
    support = np.zeros_like(z)
    support[1:8, 3:5] = spec.pitch
    return voxelize(HeightField.on_grid(spec, z, support), spec)


def test_deflection_profile_and_report():
    spec = GridSpec(16)
    ref, pred = bent_grid(spec, 0), bent_grid(spec, 2)
    prof = deflection_profile(ref, pred)
    assert np.nanmax(prof) == 2
    assert np.isnan(prof[0]) and prof[1] == 0
    rep = PredictionReport.from_grids(ref, pred, 0.5, 12.0)
    assert rep.max_deflection_voxels == 2
    assert rep.max_deflection_cm == pytest.approx(4.4)
    assert rep.column_deflections_cm[4] == pytest.approx(4.4)
    assert not assess(rep).safe


def test_report_round_trip(tmp_path):
    spec = GridSpec(16)
    rep = PredictionReport.from_grids(bent_grid(spec, 0), bent_grid(spec, 1), 0.6, 3.5, condition=(1, 3, 0))
    path = tmp_path / "report.jsonl"
    rep.write(path)
    assert (tmp_path / "report.jsonl.voxg").exists()
    back = PredictionReport.read(path)
    assert back.predicted_grid == rep.predicted_grid
    assert back.column_deflections_cm == rep.column_deflections_cm
    assert (back.threshold, back.condition, back.max_deflection_cm) == (0.6, (1, 3, 0), rep.max_deflection_cm)
    first = json.loads(path.read_text().splitlines()[0])
    assert first["record"] == "prediction"


def test_empty_prediction_reports_nan():
    spec = GridSpec(16)
    rep = PredictionReport.from_grids(bent_grid(spec, 0), VoxelGrid.empty(spec))
    assert math.isnan(rep.max_deflection_cm)
    assert not assess(rep).safe


@pytest.fixture(scope="module")
def beams():
    return generate_dataset(DatasetConfig(spans=[0.9, 1.2], forces=[0, 1], materials=["wood", "aluminium"]))


@pytest.fixture(scope="module")
def foam():
    return generate_dataset(DatasetConfig(scene="foam", forces=[0, 1], wheels=[0, 1, 2, 3]))


def test_oracle_table_has_zero_rmse(beams):
    records = evaluate(oracle_predictor(beams), beams, "table")
    assert len(records) == 4  # material x payload at one location
    assert all(r["rmse_cm"] == 0 for r in records)
    assert {(r["material"], r["payload"]) for r in records} == {
        ("wood", False), ("wood", True), ("aluminium", False), ("aluminium", True)
    }


def test_holdout_mode_thresholds(beams):
    def shifted(inputs, conditions):
        # drop every target one voxel: a uniform one-voxel error
        out = oracle_predictor(beams)(inputs, conditions)
        return np.roll(out, -1, axis=3)

    records = evaluate(shifted, beams, "holdout")
    samples = [r for r in records if r["record"] == "sample"]
    spans = [r for r in records if r["record"] == "span"]
    assert len(samples) == 8 and [r["span"] for r in spans] == [0.9, 1.2]
    assert all(r["max_error_voxels"] == 1 for r in samples)
    assert all(r["within_1_voxel"] and r["within_2_voxels"] for r in samples)


def test_wheels_mode_flags_castors_under_payload(foam):
    records = evaluate(oracle_predictor(foam), foam, "wheels")
    assert len(records) == 8
    flagged = {(r["wheel"], r["payload"]) for r in records if r["oracle_flagged"]}
    assert flagged == {("front castor", True), ("rear castor", True)}
    # one voxel of settlement at 2.2 cm already exceeds the clearance
    assert {(r["wheel"], r["payload"]) for r in records if r["flagged"]} == flagged


def test_metrics_file_and_plot(tmp_path, beams):
    for mode in ("table", "holdout"):
        records = evaluate(oracle_predictor(beams), beams, mode)
        write_records(tmp_path / f"{mode}.jsonl", records)
        plot_records(tmp_path / f"{mode}.png", records, mode)
        assert (tmp_path / f"{mode}.png").stat().st_size > 0
        lines = (tmp_path / f"{mode}.jsonl").read_text().splitlines()
        assert [json.loads(line) for line in lines] == records


def test_evaluate_rejects_bad_mode_and_shape(beams):
    with pytest.raises(ValueError, match="mode"):
        evaluate(oracle_predictor(beams), beams, "bogus")
    with pytest.raises(ValueError, match="shape"):
        evaluate(lambda x, c: x[:1], beams, "table")
