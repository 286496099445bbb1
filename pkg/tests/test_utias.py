import logging

import numpy as np
import pytest

from tekf.utias import (
    DatasetFormatError,
    range_bearing_to_relpos,
    replay_cl,
    replay_tt,
    synthetic_dataset,
    utias_load,
    write_dataset,
)

ODO = [np.array([[0.0, 0.1, 0.0], [0.5, 0.2, 0.01], [1.0, 0.2, -0.02]]),
       np.array([[0.2, 0.3, 0.0], [0.7, 0.3, 0.0], [1.2, 0.1, 0.05]])]
GT = [np.array([[0.0, 0.0, 0.0, 0.0], [0.5, 0.05, 0.0, 0.0], [1.0, 0.15, 0.0, 0.005]]),
      np.array([[0.1, 1.0, 1.0, 1.5], [0.6, 1.0, 1.1, 1.5], [1.1, 1.0, 1.2, 1.5]])]
MEAS = [np.array([[0.25, 23.0, 1.4, 0.78], [0.75, 53.0, 2.0, -0.3], [0.9, 23.0, 1.3, 0.8]]),
        np.array([[0.3, 13.0, 1.4, -2.3], [0.8, 13.0, 1.35, -2.3], [1.15, 53.0, 2.2, 0.1]])]
BARCODES = [(1, 13), (2, 23), (5, 53)]


def _fixture(tmp_path, meas=MEAS):
    write_dataset(tmp_path, 2, ODO, meas, GT, BARCODES, {5: np.array([2.0, -1.0])})
    return tmp_path


def test_three_line_fixture_round_trips(tmp_path):
    ds = utias_load(_fixture(tmp_path), 2)
    for i in range(2):
        assert np.array_equal(ds.odometry[i], ODO[i])
        assert np.array_equal(ds.groundtruth[i], GT[i])
    # barcodes are mapped to subject ids on load
    assert np.array_equal(ds.measurements[0][:, 1], [2, 5, 2])
    assert np.array_equal(ds.measurements[0][:, [0, 2, 3]], MEAS[0][:, [0, 2, 3]])
    assert ds.barcodes == {13: 1, 23: 2, 53: 5}
    assert np.array_equal(ds.landmarks[5], [2.0, -1.0])
    assert ds.dropped_measurements == 0


def test_events_are_globally_time_ordered(tmp_path):
    ev = utias_load(_fixture(tmp_path), 2).events()
    assert len(ev) == 18
    times = [e.time for e in ev]
    assert times == sorted(times)
    assert {e.kind for e in ev} == {"odometry", "measurement", "groundtruth"}
    first = ev[0]
    assert (first.time, first.kind, first.robot) == (0.0, "odometry", 1)


def test_comments_and_blank_lines_are_skipped(tmp_path):
    _fixture(tmp_path)
    p = tmp_path / "Robot1_Odometry.dat"
    p.write_text("# header\n\n" + p.read_text() + "   # trailing comment\n")
    assert utias_load(tmp_path, 2).odometry[0].shape == (3, 3)


@pytest.mark.parametrize("bad_line, needle", [
    ("0.5 0.2", "expected 3 columns, got 2"),
    ("0.5 abc 0.1", "could not convert"),
    ("0.5 nan 0.1", "non-finite"),
])
def test_malformed_line_reports_file_and_line(tmp_path, bad_line, needle):
    _fixture(tmp_path)
    p = tmp_path / "Robot2_Odometry.dat"
    lines = p.read_text().splitlines()
    lines.insert(2, bad_line)
    p.write_text("\n".join(lines) + "\n")
    with pytest.raises(DatasetFormatError) as exc:
        utias_load(tmp_path, 2)
    assert "Robot2_Odometry.dat:3" in str(exc.value) and needle in str(exc.value)


def test_missing_file(tmp_path):
    _fixture(tmp_path)
    (tmp_path / "Robot2_Groundtruth.dat").unlink()
    with pytest.raises(DatasetFormatError, match="missing file"):
        utias_load(tmp_path, 2)


def test_landmark_file_is_optional(tmp_path):
    _fixture(tmp_path)
    (tmp_path / "Landmark_Groundtruth.dat").unlink()
    assert utias_load(tmp_path, 2).landmarks == {}


def test_unknown_barcode_dropped_with_one_warning(tmp_path, caplog):
    meas = [np.vstack([MEAS[0], [[0.95, 999.0, 1.0, 0.0]]]), MEAS[1]]
    with caplog.at_level(logging.WARNING, logger="tekf.utias"):
        ds = utias_load(_fixture(tmp_path, meas), 2)
    assert ds.dropped_measurements == 1
    assert len(ds.measurements[0]) == 3
    warnings = [r for r in caplog.records if r.levelno == logging.WARNING]
    assert len(warnings) == 1 and "1 measurement" in warnings[0].getMessage()


def test_range_bearing_conversion():
    z, R = range_bearing_to_relpos(2.0, np.pi / 2, 0.1, 0.05)
    assert np.allclose(z, [0.0, 2.0])
    # range noise along y, bearing noise (scaled by range) along x
    assert np.allclose(np.diag(R), [(2 * 0.05) ** 2 + 1e-9, 0.1**2 + 1e-9])
    assert np.allclose(R, R.T)


def test_loading_is_deterministic(tmp_path):
    a = synthetic_dataset(tmp_path / "a", seed=4, duration=5)
    b = synthetic_dataset(tmp_path / "b", seed=4, duration=5)
    for x, y in zip(a.measurements + a.odometry, b.measurements + b.odometry):
        assert np.array_equal(x, y)


@pytest.mark.parametrize("estimator", ["ekf", "tekf1", "tekf2"])
def test_cl_replay_on_synthetic_data(tmp_path, estimator):
    ds = synthetic_dataset(tmp_path, seed=1, duration=10)
    res = replay_cl(ds, estimator, "t2")
    assert not res.diverged and res.used_measurements > 0
    assert res.estimates.shape == res.truth.shape
    assert res.rmse_pos < 0.2


def test_landmark_anchoring_uses_more_measurements(tmp_path):
    ds = synthetic_dataset(tmp_path, seed=2, duration=8)
    discard = replay_cl(ds, "tekf1", "t2", landmarks="discard")
    anchor = replay_cl(ds, "tekf1", "t2", landmarks="anchor")
    assert anchor.used_measurements > discard.used_measurements
    assert not anchor.diverged and anchor.rmse_pos < 0.2


def test_tt_replay_on_synthetic_data(tmp_path):
    ds = synthetic_dataset(tmp_path, seed=3, duration=10)
    res = replay_tt(ds, 1, "tekf1")
    assert not res.diverged and res.used_measurements > 0 and res.rmse_pos < 0.5
