import numpy as np
import pytest

from rtfdoa.activity import oracle_labels
from rtfdoa.covariance import SmoothingConfig
from rtfdoa.errors import ConfigurationError
from rtfdoa.evaluate import angular_errors
from rtfdoa.pipeline import ESTIMATOR_NAMES, RunConfig, track, track_multi
from rtfdoa.simulate import SceneSpec, synthesize
from rtfdoa.stft import AudioClip, analyze

FS = 16000


def _scene(seed=41, duration_s=2.0, azimuth=35.0, snr_db=None, **kw):
    return synthesize(SceneSpec(seed=seed, duration_s=duration_s,
                                source_trajectory=((0.0, azimuth),),
                                snr_db=snr_db, diffuse_order=12, **kw))


def _labels(output):
    return oracle_labels(analyze(output.clean), analyze(output.noise))


# -------------------------------------------------------------- run config

def test_run_config_validation():
    with pytest.raises(ConfigurationError):
        RunConfig(estimator="music")
    with pytest.raises(ConfigurationError):
        RunConfig(detector="vad")
    with pytest.raises(ConfigurationError):
        RunConfig(tau_y_s=0.0)
    with pytest.raises(ConfigurationError):
        RunConfig(eval_window=0.0)
    with pytest.raises(ConfigurationError):
        RunConfig(eval_window=1.5)
    with pytest.raises(ConfigurationError):
        RunConfig(tolerance_deg=-1.0)
    with pytest.raises(ConfigurationError):
        RunConfig(spp_bootstrap_frames=0)


def test_run_config_derived_quantities():
    cfg = RunConfig()
    assert cfg.warmup_frames(FS) == 63
    assert cfg.smoothing(FS) == SmoothingConfig.from_time_constants(
        0.25, 0.5, 256, FS)
    faster = RunConfig(tau_y_s=0.15, tau_n_s=0.2)
    assert faster.warmup_frames(FS) == int(np.ceil(2 * 0.2 * FS / 256))


# ---------------------------------------------------------------- tracking

@pytest.fixture(scope="module")
def noiseless(database):
    out = _scene()
    config = RunConfig(estimator="cw-ext")
    trajs = track_multi(out.mixed, database, config,
                        estimators=ESTIMATOR_NAMES, labels=_labels(out))
    return out, trajs


def test_noiseless_scene_all_estimators_lock_on(noiseless):
    out, trajs = noiseless
    assert set(trajs) == set(ESTIMATOR_NAMES)
    for name, traj in trajs.items():
        scored = traj.valid
        assert scored.any(), name
        errs = angular_errors(traj.azimuth_deg[scored],
                              out.truth_doa_deg[scored])
        frac = np.mean(errs <= 5.0)
        assert frac >= 0.9, (name, frac)


def test_warmup_frames_flagged_invalid(noiseless):
    _, trajs = noiseless
    for traj in trajs.values():
        assert traj.warmup_frames == 63
        assert not traj.valid[:63].any()
        assert traj.valid[63:].all()


def test_trajectory_bookkeeping(noiseless):
    out, trajs = noiseless
    grid = analyze(out.mixed)
    for traj in trajs.values():
        assert traj.n_frames == grid.data.shape[2]
        np.testing.assert_array_equal(traj.frame_times, grid.frame_times)
        assert traj.processing_s > 0.0
        assert traj.cost_surface is None


def test_sc_never_reads_noise_covariance(database):
    out = _scene(seed=43)
    config = RunConfig(estimator="sc")
    traj = track(out.mixed, database, config, labels=_labels(out))
    assert traj.noise_reads == 0
    # the subtraction estimator must read it every frame
    traj_cs = track(out.mixed, database, RunConfig(estimator="cs-head"),
                    labels=_labels(out))
    assert traj_cs.noise_reads == traj_cs.n_frames


def test_cost_surface_request(database):
    out = _scene(seed=44, duration_s=1.5)
    traj = track(out.mixed, database, RunConfig(estimator="cw-ext"),
                 labels=_labels(out), keep_cost_surfaces=True)
    surf = traj.cost_surface
    assert surf.shape == (traj.n_frames, database.n_directions)
    scored = traj.valid
    np.testing.assert_array_equal(
        traj.azimuth_deg[scored],
        database.directions_deg[np.nanargmin(surf[scored], axis=1)])


def test_track_matches_track_multi(database):
    out = _scene(seed=45, duration_s=1.0)
    config = RunConfig(estimator="cw-head")
    labels = _labels(out)
    single = track(out.mixed, database, config, labels=labels)
    multi = track_multi(out.mixed, database, config,
                        estimators=("cw-head", "sc"), labels=labels)["cw-head"]
    np.testing.assert_array_equal(single.azimuth_deg, multi.azimuth_deg)
    np.testing.assert_array_equal(single.valid, multi.valid)


def test_head_only_clip_supports_head_estimators(database):
    out = _scene(seed=46, duration_s=1.0)
    head_clip = AudioClip(out.mixed.samples[:4], FS)
    labels = _labels(out)
    trajs = track_multi(head_clip, database, RunConfig(estimator="cs-head"),
                        estimators=("cs-head", "cw-head"), labels=labels)
    assert set(trajs) == {"cs-head", "cw-head"}
    for name in ("sc", "cw-ext"):
        with pytest.raises(ConfigurationError):
            track_multi(head_clip, database, RunConfig(estimator=name),
                        estimators=(name,), labels=labels)


def test_track_multi_validation(database):
    out = _scene(seed=47, duration_s=1.0)
    labels = _labels(out)
    config = RunConfig()
    with pytest.raises(ConfigurationError):
        track_multi(out.mixed, database, config, estimators=())
    with pytest.raises(ConfigurationError):
        track_multi(out.mixed, database, config, estimators=("cw-ext", "cw-ext"),
                    labels=labels)
    with pytest.raises(ConfigurationError):
        track_multi(out.mixed, database, config, estimators=("srp-phat",),
                    labels=labels)
    with pytest.raises(ConfigurationError):
        track(out.mixed, database, config)  # oracle detector, no labels
    with pytest.raises(ConfigurationError):
        track(out.mixed, database, config, labels=labels[:, :10])
    resampled = AudioClip(out.mixed.samples, 8000)
    with pytest.raises(ConfigurationError):
        track(resampled, database, config, labels=labels)
    too_many = AudioClip(np.vstack([out.mixed.samples, out.mixed.samples[:1]]), FS)
    with pytest.raises(ConfigurationError):
        track(too_many, database, config, labels=labels)


def test_spp_detector_smoke(database):
    out = _scene(seed=48, duration_s=3.0, snr_db=5.0)
    config = RunConfig(estimator="cw-ext", detector="spp")
    traj = track(out.mixed, database, config)
    scored = traj.valid
    assert scored.any()
    errs = angular_errors(traj.azimuth_deg[scored], out.truth_doa_deg[scored])
    assert np.mean(errs <= 5.0) > 0.5


def test_faithful_noise_recursion_changes_result(database):
    out = _scene(seed=49, duration_s=2.0, snr_db=0.0)
    labels = _labels(out)
    base = track(out.mixed, database, RunConfig(estimator="cs-head"),
                 labels=labels)
    alt = track(out.mixed, database,
                RunConfig(estimator="cs-head", faithful_noise_recursion=True),
                labels=labels)
    assert not np.array_equal(base.cost[base.valid], alt.cost[alt.valid])
