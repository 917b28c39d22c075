import math

import numpy as np
import pytest

from mepr.coding import code_pair
from mepr.detector import Radar
from mepr.metasurface import ONE_BIT, Aperture
from mepr.scene import Receiver, Scene, Source
from mepr.tracker import (LETTER_PATHS, TrackerConfig, TrackerError, TrackState, Trajectory, acquire_background,
                          coarse_scan, gated_centroid, letter_trajectory, polyline_trajectory, run_track,
                          trajectory_error, window_points)
from mepr.wavefield import SynthesisOptions


def test_config_validation():
    cfg = TrackerConfig()
    assert (cfg.plane_z, cfg.coarse_spacing, cfg.fine_spacing, cfg.frame_interval) == (3.3, 0.3, 0.05, 0.8)
    with pytest.raises(TrackerError):
        TrackerConfig(fine_spacing=0.4)
    with pytest.raises(TrackerError):
        TrackerConfig(track_window=0.0)
    with pytest.raises(TrackerError):
        TrackerConfig(fine_window=0.62)


def test_window_points_snap_and_size():
    cfg = TrackerConfig()
    pts = window_points(cfg, (0.013, -0.02, 3.3), 0.6, 0.05)
    assert pts.shape == (13 * 13, 3)
    assert np.allclose(pts.mean(axis=0), [0.0, 0.0, 3.3], atol=1e-12)
    coarse = window_points(cfg, (0, 0, 3.3), cfg.fov_width, cfg.coarse_spacing)
    assert coarse.shape == (49, 3)
    edge = window_points(cfg, (5.0, 0.0, 3.3), 0.5, 0.05)
    assert edge[:, 0].mean() == pytest.approx(0.9)


def test_centroid_examples():
    pts = np.array([[0, 0, 3.3], [0.05, 0, 3.3], [0.1, 0, 3.3]], dtype=float)
    assert gated_centroid(pts, np.array([0.1, 1.0, 0.2])).tolist() == pytest.approx([0.05, 0, 3.3])
    assert gated_centroid(pts, np.array([1.0, 0.0, 1.0])).tolist() == pytest.approx([0.05, 0, 3.3])
    assert gated_centroid(pts, np.zeros(3)).tolist() == pytest.approx([0, 0, 3.3])


def test_trajectories():
    tr = polyline_trajectory([(0, 0, 3.3), (1, 0, 3.3)], 0.2)
    assert tr.duration == pytest.approx(5.0)
    assert tr.position_at(2.5).tolist() == pytest.approx([0.5, 0, 3.3])
    assert tr.frame_times(0.8).tolist() == pytest.approx(0.8 * np.arange(7))
    with pytest.raises(TrackerError):
        Trajectory(((0.0, (0, 0, 3.3)), (0.0, (1, 0, 3.3))))
    for letter in LETTER_PATHS:
        t = letter_trajectory(letter)
        P = np.array([w[1] for w in t.waypoints])
        assert np.all(np.abs(P[:, :2]) <= 0.5 + 1e-12) and np.all(P[:, 2] == 3.3)
        steps = np.diff([w[0] for w in t.waypoints])
        lengths = np.linalg.norm(np.diff(P, axis=0), axis=1)
        assert np.allclose(lengths / steps, 0.2)
    with pytest.raises(TrackerError):
        letter_trajectory("Z")


def test_state_history_is_append_only():
    s = TrackState(None)
    s1 = s.advance(0, (0, 0, 3.3), "locked", 10.0)
    s2 = s1.advance(1, None, "searching", 1.0)
    assert s.history == () and len(s1.history) == 1 and s2.history == s1.history
    assert s2.estimate is None and s2.status == "searching"


def test_error_summary():
    truth = [(0, 0, 3.3), (1, 0, 3.3), (2, 1, 3.3)]
    z = trajectory_error(truth, truth)
    assert z.mean == z.median == z.p95 == 0.0
    off = trajectory_error([(x + 0.3, y + 0.4, z) for x, y, z in truth], truth)
    assert off.mean == pytest.approx(0.5) and off.median == pytest.approx(0.5)
    with pytest.raises(TrackerError):
        trajectory_error(truth[:2], truth)
    gap = trajectory_error([None, (1, 0, 3.3), (2, 1, 3.3)], truth)
    assert math.isnan(gap.per_frame[0]) and gap.mean == 0.0


# -- end-to-end runs on the imaging geometry ---------------------------------------

RADAR = Radar(aperture=Aperture(constraint=ONE_BIT))
STATIC = Scene(sources=(Source((-0.3, 0.3, 0.3), 1),),
               receivers=(Receiver((0.5, 0, 0), "reference"),
                          Receiver((0, -0.317, 0.514), "surveillance", metasurface_rejection=0.1)))
NOISELESS = SynthesisOptions(include_noise=False)
CODES = code_pair("chirp", 20)


def test_empty_scene_gives_no_candidate():
    cfg = TrackerConfig()
    bg = acquire_background(STATIC, cfg, CODES, NOISELESS, 3, RADAR)
    cand = coarse_scan(STATIC, bg, cfg, CODES, NOISELESS, 3, RADAR)
    assert cand.center is None
    assert cand.cells == 49


def test_stationary_target_is_acquired_and_held():
    p = (0.3, -0.2, 3.3)
    traj = Trajectory(((0.0, p), (3.2, p)))
    res = run_track(traj, STATIC, TrackerConfig(), CODES, NOISELESS, 3, RADAR, reflectivity=100.0)
    assert len(res.frames) == 5
    assert res.acquired_at == 0 and not res.lock_lost
    assert np.nanmax(res.errors) < 0.05


def test_lock_held_at_track_window_over_three():
    cfg = TrackerConfig()
    step = cfg.track_window / 3
    traj = polyline_trajectory([(-0.5, 0.0, 3.3), (0.5, 0.0, 3.3)], step / cfg.frame_interval)
    res = run_track(traj, STATIC, cfg, CODES, NOISELESS, 3, RADAR, reflectivity=100.0)
    assert res.acquired_at == 0
    assert not res.lock_lost and res.lost_runs == ()
    assert np.nanmean(res.errors) < cfg.fine_spacing
