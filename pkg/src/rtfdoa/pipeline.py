"""Frame-by-frame DOA tracking: detect, track covariances, estimate, match.

One pass over the STFT frames updates the noisy/noise covariance pair
per bin (gated by the activity detector), feeds the requested RTF
estimators, and holds each bin's last valid estimate. Cost surfaces and
grid decisions are computed afterwards in a batched sweep. Several
estimators can share a single covariance pass, which is how the sweep
harness keeps multi-estimator comparisons cheap.

Estimates are held per bin across invalid frames ("hold last valid"), so
a bin keeps contributing its most recent usable RTF while the detector
gates its updates off. Bins that never produced a valid estimate are
excluded from the cost mean. Frames before the warm-up horizon (twice
the slowest smoothing time constant) are flagged invalid.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .activity import SppConfig, spp
from .covariance import CovarianceTracker, SmoothingConfig
from .doa import PrototypeDatabase, argmin_directions, cost_surface_frames
from .errors import ConfigurationError
from .estimators import EstimatorConfig, WhitenedTracker, batch_cs, batch_sc
from .stft import AudioClip, StftConfig, analyze

log = logging.getLogger(__name__)

ESTIMATOR_NAMES = ("cs-head", "cw-ext", "cw-head", "sc")
DETECTOR_NAMES = ("oracle", "spp")

# moving sources need a faster noisy-covariance time constant
DEFAULT_TAU_Y_STATIC_S = 0.25
DEFAULT_TAU_Y_MOVING_S = 0.15
DEFAULT_TAU_N_S = 0.5

# per-frame whitened eigensolves only need enough accuracy to leave the
# grid decision untouched (1e-3 residual moves Hermitian angles by well
# under a grid step); failed bins fall back to the dense solver anyway
PIPELINE_ESTIMATOR_CONFIG = EstimatorConfig(eig_tol=1e-3)


@dataclass(frozen=True)
class RunConfig:
    """Everything a tracking run needs besides the signals.

    ``eval_window`` is the trailing fraction of frames that scoring uses
    (0.5 reproduces the second-half convention for static scenes, 1.0
    scores everything after warm-up). ``faithful_noise_recursion``
    switches the noise update to decay the noisy matrix instead of the
    previous noise matrix; see the covariance module.
    """

    estimator: str = "cw-ext"
    detector: str = "oracle"
    tau_y_s: float = DEFAULT_TAU_Y_STATIC_S
    tau_n_s: float = DEFAULT_TAU_N_S
    eval_window: float = 0.5
    tolerance_deg: float = 5.0
    eps_init: float = 1e-6
    faithful_noise_recursion: bool = False
    oracle_margin_db: float = -10.0
    spp_bootstrap_frames: int = 10
    estimator_config: EstimatorConfig = PIPELINE_ESTIMATOR_CONFIG
    spp_config: SppConfig = field(default_factory=SppConfig)
    stft: StftConfig = field(default_factory=StftConfig)

    def __post_init__(self) -> None:
        if self.estimator not in ESTIMATOR_NAMES:
            raise ConfigurationError(
                f"estimator must be one of {ESTIMATOR_NAMES}, got '{self.estimator}'")
        if self.detector not in DETECTOR_NAMES:
            raise ConfigurationError(
                f"detector must be one of {DETECTOR_NAMES}, got '{self.detector}'")
        if self.tau_y_s <= 0.0 or self.tau_n_s <= 0.0:
            raise ConfigurationError("time constants must be positive")
        if not 0.0 < self.eval_window <= 1.0:
            raise ConfigurationError("eval_window must lie in (0, 1]")
        if self.tolerance_deg <= 0.0:
            raise ConfigurationError("tolerance_deg must be positive")
        if self.spp_bootstrap_frames < 1:
            raise ConfigurationError("spp_bootstrap_frames must be >= 1")

    def smoothing(self, sample_rate: int) -> SmoothingConfig:
        return SmoothingConfig.from_time_constants(
            self.tau_y_s, self.tau_n_s, self.stft.hop, sample_rate)

    def warmup_frames(self, sample_rate: int) -> int:
        tau = max(self.tau_y_s, self.tau_n_s)
        return int(np.ceil(2.0 * tau * sample_rate / self.stft.hop))


@dataclass(frozen=True)
class DoaTrajectory:
    """Per-frame DOA decisions of one estimator over one recording."""

    estimator: str
    azimuth_deg: np.ndarray
    cost: np.ndarray
    valid: np.ndarray
    frame_times: np.ndarray
    warmup_frames: int
    noise_reads: int = 0
    processing_s: float = 0.0
    cost_surface: np.ndarray | None = None

    @property
    def n_frames(self) -> int:
        return self.azimuth_deg.size


class _HeldEstimator:
    """Wraps a batch estimator with per-bin hold-last-valid storage."""

    def __init__(self, name: str, n_bins: int, n_head: int, n_channels: int,
                 cfg: EstimatorConfig) -> None:
        self.name = name
        self.n_head = n_head
        self.cfg = cfg
        self.held = np.zeros((n_bins, n_head), dtype=np.complex64)
        self.ever_valid = np.zeros(n_bins, dtype=bool)
        dim = n_channels if name == "cw-ext" else n_head
        self.whitened = (WhitenedTracker(n_bins, dim, cfg)
                         if name.startswith("cw") else None)
        self._primed = False

    def step(self, tracker: CovarianceTracker, speech_mask: np.ndarray) -> None:
        m = self.n_head
        if self.name == "sc":
            values, valid = batch_sc(tracker.noisy, self.cfg)
            values = values[:, :m]
        elif self.name == "cs-head":
            values, valid = batch_cs(tracker.noisy[:, :m, :m],
                                     tracker.noise[:, :m, :m], self.cfg)
        else:
            dim = self.whitened.dim
            changed = ~speech_mask
            if not self._primed:
                # factor the initial noise state too, otherwise bins that
                # never see a noise-labeled frame would stay invalid forever
                changed = np.ones_like(changed)
                self._primed = True
            if changed.any():
                self.whitened.refresh_noise(tracker.noise[:, :dim, :dim], changed)
            values, valid = self.whitened.estimate(tracker.noisy[:, :dim, :dim])
            values = values[:, :m]
        if valid.any():
            self.held[valid] = values[valid].astype(np.complex64)
            self.ever_valid |= valid


def _spp_mask(y: np.ndarray, tracker: CovarianceTracker, n_head: int,
              cfg: SppConfig) -> np.ndarray:
    """Per-bin speech decision from the tracked noise PSD, [K] bool."""
    noise_psd = np.einsum("kpp->kp", tracker.noise).real[:, :n_head].T
    noisy_power = np.abs(y[:n_head]) ** 2
    probabilities = spp(noisy_power, noise_psd, cfg)
    return probabilities.mean(axis=0) > cfg.threshold


def track_multi(clip: AudioClip, db: PrototypeDatabase, config: RunConfig,
                estimators: tuple[str, ...] | None = None,
                labels: np.ndarray | None = None,
                keep_cost_surfaces: bool = False) -> dict[str, DoaTrajectory]:
    """Run several estimators over one recording with a shared covariance pass.

    ``labels`` is the [K, L] oracle speech-activity bitmap, required when
    the detector is 'oracle'. Returns one trajectory per estimator name.
    The tracker's noise-read count is shared across the estimators of a
    single call.
    """
    t0 = time.perf_counter()
    names = tuple(estimators) if estimators is not None else (config.estimator,)
    if not names:
        raise ConfigurationError("need at least one estimator")
    for name in names:
        if name not in ESTIMATOR_NAMES:
            raise ConfigurationError(f"unknown estimator '{name}'")
    if len(set(names)) != len(names):
        raise ConfigurationError("duplicate estimator names")

    n_chan = clip.n_channels
    n_head = db.n_mics
    if n_chan not in (n_head, n_head + 1):
        raise ConfigurationError(
            f"{n_chan} channels do not fit a database for {n_head} head mics")
    if n_chan == n_head:
        for name in names:
            if name in ("sc", "cw-ext"):
                raise ConfigurationError(
                    f"estimator '{name}' needs the external microphone channel")
    if clip.sample_rate != db.sample_rate:
        raise ConfigurationError("clip and database sample rates differ")

    grid = analyze(clip, config.stft)
    data = grid.data  # [P, K, L]
    n_bins, n_frames = data.shape[1], data.shape[2]
    if config.detector == "oracle":
        if labels is None:
            raise ConfigurationError("oracle detector needs an activity bitmap")
        labels = np.asarray(labels, dtype=bool)
        if labels.shape != (n_bins, n_frames):
            raise ConfigurationError(
                f"labels shaped {labels.shape}, expected {(n_bins, n_frames)}")

    tracker = CovarianceTracker(n_chan, n_bins, config.smoothing(clip.sample_rate),
                                eps_init=config.eps_init,
                                faithful_noise_recursion=config.faithful_noise_recursion)
    states = [_HeldEstimator(name, n_bins, n_head, n_chan, config.estimator_config)
              for name in names]
    stores = {name: np.zeros((n_frames, n_bins, n_head), dtype=np.complex64)
              for name in names}
    valid_stores = {name: np.zeros((n_frames, n_bins), dtype=bool)
                    for name in names}

    for l in range(n_frames):
        y = np.ascontiguousarray(data[:, :, l])
        if config.detector == "oracle":
            mask = labels[:, l]
        elif l < config.spp_bootstrap_frames:
            mask = np.zeros(n_bins, dtype=bool)
        else:
            mask = _spp_mask(y, tracker, n_head, config.spp_config)
        tracker.update_frame(y, mask)
        for state in states:
            state.step(tracker, mask)
            stores[state.name][l] = state.held
            valid_stores[state.name][l] = state.ever_valid

    warmup = config.warmup_frames(clip.sample_rate)
    results: dict[str, DoaTrajectory] = {}
    for name in names:
        surface = cost_surface_frames(stores[name], valid_stores[name], db)
        azimuths, costs, ok = argmin_directions(surface, db)
        valid = ok & (np.arange(n_frames) >= warmup)
        results[name] = DoaTrajectory(
            estimator=name, azimuth_deg=azimuths, cost=costs, valid=valid,
            frame_times=grid.frame_times, warmup_frames=warmup,
            noise_reads=tracker.noise_reads,
            cost_surface=surface if keep_cost_surfaces else None)
    elapsed = time.perf_counter() - t0
    results = {name: replace(traj, processing_s=elapsed)
               for name, traj in results.items()}
    return results


def track(clip: AudioClip, db: PrototypeDatabase, config: RunConfig,
          labels: np.ndarray | None = None,
          keep_cost_surfaces: bool = False) -> DoaTrajectory:
    """Run the configured estimator over one recording."""
    return track_multi(clip, db, config, (config.estimator,), labels,
                       keep_cost_surfaces)[config.estimator]
