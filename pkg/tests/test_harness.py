import numpy as np
import pytest

from nms_dia_osd.dia import DiaArchitecture, DiaWeights
from nms_dia_osd.gf2 import syndrome
from nms_dia_osd.harness import (CSV_FIELDS, ExperimentConfig, FerPoint, collect_failures, compute_stats,
                                 emit_fer_report, emit_stats_report, query_path, read_fer_csv, run_fer)
from nms_dia_osd.nms import NmsConfig
from nms_dia_osd.osd import PathConstraints, default_partition, nominal_path

NMS = NmsConfig(12, 0.78)


def test_config_validation(ccsds):
    with pytest.raises(ValueError):
        ExperimentConfig(ccsds, ())
    with pytest.raises(ValueError):
        ExperimentConfig(ccsds, (3.0,), min_frames=0)
    bad = DiaWeights.zeros(DiaArchitecture(8))
    with pytest.raises(ValueError):
        ExperimentConfig(ccsds, (3.0,), nms=NMS, dia=bad).resolved()


def test_noiseless_has_no_errors(ccsds):
    pts = run_fer(ExperimentConfig(ccsds, (0.0,), min_frames=500, target_errors=0, nms=NMS, noiseless=True,
                                   path=nominal_path(1, default_partition(64))))
    assert pts[0].fer == 0 and pts[0].frames == 2000 and pts[0].nms_failures == 0


def test_accounting_and_stop_rule(ccsds):
    path = nominal_path(1, default_partition(64))
    cfg = ExperimentConfig(ccsds, (2.5,), min_frames=3000, max_frames=20_000, target_errors=20, nms=NMS,
                           path=path, constraints=PathConstraints(lambda_m=1))
    p = run_fer(cfg)[0]
    assert p.frames >= 3000 and p.frame_errors >= 20
    assert p.fer == p.frame_errors / p.frames
    assert p.tau == p.nms_failures / p.frames
    assert p.undetected_errors <= p.frame_errors
    assert p.fer <= p.nms_fer
    assert p.mean_candidates_scored == 65.0
    nms_only = run_fer(ExperimentConfig(ccsds, (2.5,), min_frames=p.frames, max_frames=p.frames, nms=NMS))[0]
    assert nms_only.frames == p.frames
    assert nms_only.fer == p.nms_fer == p.tau + p.undetected_errors / p.frames


def test_frame_cap(ccsds):
    p = run_fer(ExperimentConfig(ccsds, (4.0,), min_frames=10, max_frames=2500, target_errors=10**6,
                                 nms=NMS))[0]
    assert p.frames == 2500


def test_worker_count_does_not_change_results(ccsds, tmp_path):
    path = nominal_path(1, default_partition(64))
    outs = []
    for workers in (1, 2):
        cfg = ExperimentConfig(ccsds, (2.0, 2.6), min_frames=4000, target_errors=10, nms=NMS, path=path,
                               seed=9, workers=workers)
        pts = run_fer(cfg)
        emit_fer_report(pts, tmp_path / f"w{workers}", plot=False)
        outs.append((tmp_path / f"w{workers}" / "fer.csv").read_bytes())
    assert outs[0] == outs[1]


def test_csv_round_trip_and_header(tmp_path):
    pts = [FerPoint(3.0, 20000, 2071, 113, 1, 113 / 20000, 1.0 / 3, 2071 / 20000, 0.1, 65.0, 2.5)]
    emit_fer_report(pts, tmp_path, plot=True)
    assert (tmp_path / "fer.png").stat().st_size > 0
    back = read_fer_csv(tmp_path / "fer.csv")
    assert back == [FerPoint(**{**pts[0].__dict__, "wall_time": 0.0})]
    emit_fer_report([], tmp_path / "empty")
    assert (tmp_path / "empty" / "fer.csv").read_text() == ",".join(CSV_FIELDS) + "\n"


def test_collect_failures(ccsds):
    with pytest.raises(ValueError):
        collect_failures(ccsds, 2.7, 0, NMS)
    d = collect_failures(ccsds, 2.7, 25, NMS, seed=3)
    assert len(d) == 25 and d.t == 12
    for f in range(len(d)):
        assert syndrome(ccsds, (d.trajectories[f, :, -1] < 0).astype(np.uint8)).any()
        assert not syndrome(ccsds, d.truth[f]).any()
    assert np.all(np.diff(d.frame_index) > 0)
    again = collect_failures(ccsds, 2.7, 25, NMS, seed=3)
    assert again.to_bytes() == d.to_bytes()


@pytest.fixture(scope="module")
def small_failures(ccsds):
    return collect_failures(ccsds, 2.7, 150, NMS, seed=4)


def test_compute_stats(ccsds, small_failures, tmp_path):
    dia = DiaWeights.glorot(DiaArchitecture(12), np.random.default_rng(0))
    rep = compute_stats(small_failures, ccsds, dia)
    assert rep.frames == 150
    assert sum(rep.swaps.values()) == pytest.approx(1.0, abs=1e-9)
    for ratios in rep.delta.values():
        assert ratios.sum() == pytest.approx(1.0, abs=1e-9)
        assert np.all(np.diff(np.cumsum(ratios)) >= 0)
    for table in rep.patterns.values():
        assert sum(r for _, _, r in table) == pytest.approx(1.0, abs=1e-9)
    assert set(rep.patterns) == {"dia", "iterT"}
    assert len(rep.iterations["ce"]) == 13 and rep.dia_ce is not None
    files = emit_stats_report(rep, tmp_path)
    assert {f.name for f in files} == {"swaps.csv", "delta.csv", "patterns.csv", "iterations.csv", "stats.png"}


def test_compute_stats_without_dia(ccsds, small_failures):
    rep = compute_stats(small_failures, ccsds)
    assert set(rep.patterns) == {"iterT"} and rep.dia_ce is None
    assert "dia_pre" not in rep.delta


def test_query_path(ccsds):
    with pytest.warns(UserWarning):
        path = query_path(ccsds, 2.7, 50, NMS, seed=1, pad_weight=1)
    assert path.sample_count == 50 and path.metric_source == "app_final"
    counts = [e.count for e in path.entries]
    assert counts == sorted(counts, reverse=True)
