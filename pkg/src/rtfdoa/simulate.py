"""Scene synthesis: a (possibly moving) target plus diffuse-like noise.

Signals are rendered in the STFT domain. The target source signal is
analyzed once, each frame is multiplied by the free-field steering phase
of the frame's (interpolated) azimuth, and channels are resynthesized by
weighted overlap-add; the 50 percent hop of the square-root Hann pair
makes successive frames cross-fade smoothly. Diffuse noise is the sum of
many independent white-noise plane waves from directions spread over the
sphere, rendered the same way onto every microphone including the
external one, so inter-microphone coherence follows the isotropic sinc
law. Reverberation is approximated by mixing a direction-independent
diffuse copy of the target into all channels at a configurable
direct-to-diffuse ratio.

Everything is a pure function of (spec, seed): equal specs give
bit-identical output. Rendering is split into ``render_components`` and
``compose`` so sweeps can reuse the expensive parts (the noise field
does not depend on SNR or target azimuth, the target not on SNR).
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy import signal as sps

from .errors import ConfigurationError
from .geometry import (SPEED_OF_SOUND, ArrayGeometry, azimuth_to_unit,
                       default_geometry, plane_wave_delays_3d)
from .stft import (DEFAULT_SAMPLE_RATE, AudioClip, StftConfig, num_frames,
                   read_wav)

log = logging.getLogger(__name__)

FOUR_LOUDSPEAKER_AZIMUTHS = (45.0, 135.0, -135.0, -45.0)

# default moving preset sweeps -50 to +50 degrees over 25 s
MOVING_TRAJECTORY = ((0.0, -50.0), (25.0, 50.0))


def fibonacci_sphere(count: int) -> np.ndarray:
    """Deterministic near-uniform unit vectors on the sphere, [count, 3]."""
    if count < 1:
        raise ConfigurationError("need at least one direction")
    i = np.arange(count)
    z = 1.0 - (2.0 * i + 1.0) / count
    radius = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    golden = np.pi * (3.0 - np.sqrt(5.0))
    phi = golden * i
    return np.stack([radius * np.cos(phi), radius * np.sin(phi), z], axis=1)


def speech_shaped_noise(rng: np.random.Generator, n_samples: int,
                        sample_rate: int = DEFAULT_SAMPLE_RATE,
                        am_rate_hz: float = 4.0,
                        am_floor: float = 0.1) -> np.ndarray:
    """Stationary speech-shaped noise with syllabic amplitude modulation.

    White noise is spectrally shaped (flat to about 500 Hz, then falling
    6 dB per octave, with a low-frequency rolloff) and modulated at a
    syllable-like rate. The modulation starts in a trough so early frames
    are noise-dominated, and its floor keeps the signal nonzero. Output
    RMS is 0.1.
    """
    white = rng.standard_normal(n_samples)
    spectrum = np.fft.rfft(white)
    freqs = np.fft.rfftfreq(n_samples, d=1.0 / sample_rate)
    shape = 1.0 / np.sqrt(1.0 + (freqs / 500.0) ** 2)
    shape *= (freqs / 80.0) ** 2 / (1.0 + (freqs / 80.0) ** 2)
    shaped = np.fft.irfft(spectrum * shape, n=n_samples)
    t = np.arange(n_samples) / sample_rate
    envelope = am_floor + (1.0 - am_floor) * 0.5 * (1.0 - np.cos(2.0 * np.pi * am_rate_hz * t))
    out = shaped * envelope
    rms = np.sqrt(np.mean(out ** 2))
    if rms == 0.0:
        raise ConfigurationError("degenerate source signal")
    return out * (0.1 / rms)


@dataclass(frozen=True)
class SceneSpec:
    """Declarative description of one simulated scene.

    ``source_trajectory`` is a sequence of (time_s, azimuth_deg) knots,
    linearly interpolated per STFT frame and held constant outside the
    knot range; a single knot makes the scene static. ``snr_db`` is the
    broadband speech-to-noise power ratio at the mean of the two front
    head microphones; ``None`` disables the noise entirely.
    ``reverb_proxy_db`` is the direct-to-diffuse power ratio of the
    target, ``None`` for anechoic. ``noise_azimuths_deg`` overrides the
    isotropic field with horizontal plane waves from the given azimuths
    (for example ``FOUR_LOUDSPEAKER_AZIMUTHS``).
    """

    seed: int
    duration_s: float = 30.0
    source_trajectory: tuple[tuple[float, float], ...] = ((0.0, 0.0),)
    snr_db: float | None = 0.0
    diffuse_order: int = 96
    reverb_proxy_db: float | None = None
    noise_azimuths_deg: tuple[float, ...] | None = None
    external_azimuth_deg: float = 45.0
    external_distance_m: float = 1.6
    sample_rate: int = DEFAULT_SAMPLE_RATE
    source_wav: str | None = None

    def __post_init__(self) -> None:
        if self.duration_s <= 0.0:
            raise ConfigurationError("duration_s must be positive")
        if self.diffuse_order < 8:
            raise ConfigurationError("diffuse_order must be at least 8")
        knots = tuple((float(t), float(a)) for t, a in self.source_trajectory)
        if not knots:
            raise ConfigurationError("source_trajectory needs at least one knot")
        times = [t for t, _ in knots]
        if any(b < a for a, b in zip(times, times[1:])):
            raise ConfigurationError("trajectory knots must be time-sorted")
        if self.snr_db is not None and not np.isfinite(self.snr_db):
            raise ConfigurationError("snr_db must be finite or None")
        if self.noise_azimuths_deg is not None and len(self.noise_azimuths_deg) < 1:
            raise ConfigurationError("noise_azimuths_deg must not be empty")
        if self.sample_rate <= 0:
            raise ConfigurationError("sample_rate must be positive")
        object.__setattr__(self, "source_trajectory", knots)

    @property
    def is_static(self) -> bool:
        azimuths = {a for _, a in self.source_trajectory}
        return len(azimuths) == 1

    def geometry(self) -> ArrayGeometry:
        return default_geometry(external_azimuth_deg=self.external_azimuth_deg,
                                external_distance_m=self.external_distance_m)

    def to_json(self, path: str | Path) -> None:
        data = {
            "seed": self.seed,
            "duration_s": self.duration_s,
            "source_trajectory": [list(k) for k in self.source_trajectory],
            "snr_db": self.snr_db,
            "diffuse_order": self.diffuse_order,
            "reverb_proxy_db": self.reverb_proxy_db,
            "noise_azimuths_deg": (None if self.noise_azimuths_deg is None
                                   else list(self.noise_azimuths_deg)),
            "external_azimuth_deg": self.external_azimuth_deg,
            "external_distance_m": self.external_distance_m,
            "sample_rate": self.sample_rate,
            "source_wav": self.source_wav,
        }
        Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")

    @classmethod
    def from_json(cls, path: str | Path) -> "SceneSpec":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"unreadable scene file: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigurationError("scene file must hold a JSON object")
        if "seed" not in data:
            raise ConfigurationError("scene file must declare a seed")
        aliases = {"duration": "duration_s", "trajectory": "source_trajectory",
                   "reverb_proxy": "reverb_proxy_db", "snr": "snr_db"}
        kwargs: dict = {}
        known = set(cls.__dataclass_fields__)
        for key, value in data.items():
            name = aliases.get(key, key)
            if name not in known:
                raise ConfigurationError(f"unknown scene field '{key}'")
            kwargs[name] = value
        if "source_trajectory" in kwargs:
            kwargs["source_trajectory"] = tuple(
                tuple(k) for k in kwargs["source_trajectory"])
        if kwargs.get("noise_azimuths_deg") is not None:
            kwargs["noise_azimuths_deg"] = tuple(kwargs["noise_azimuths_deg"])
        return cls(**kwargs)


@dataclass(frozen=True)
class SceneComponents:
    """Unscaled building blocks of a scene.

    ``clean`` already contains the reverb-proxy copy of the target;
    ``noise_unit`` is the diffuse field before any SNR scaling. Both are
    [P, T] float64.
    """

    clean: np.ndarray
    noise_unit: np.ndarray
    truth_doa_deg: np.ndarray
    geometry: ArrayGeometry
    spec: SceneSpec
    oracle_rtf: np.ndarray | None = None


@dataclass(frozen=True)
class SceneOutput:
    """Rendered scene: mixed = clean + noise samplewise, channels head+external."""

    mixed: AudioClip
    clean: AudioClip
    noise: AudioClip
    truth_doa_deg: np.ndarray
    geometry: ArrayGeometry
    spec: SceneSpec
    oracle_rtf: np.ndarray | None = None
    noise_scale: float = 0.0


def _frame_azimuths(spec: SceneSpec, n_frames: int, cfg: StftConfig) -> np.ndarray:
    times = (np.arange(n_frames) * cfg.hop + cfg.frame_len / 2.0) / spec.sample_rate
    knot_t = np.array([t for t, _ in spec.source_trajectory])
    knot_a = np.array([a for _, a in spec.source_trajectory])
    return np.interp(times, knot_t, knot_a)


def _mono_stft(x: np.ndarray, cfg: StftConfig) -> np.ndarray:
    frames = np.lib.stride_tricks.sliding_window_view(x, cfg.frame_len)[::cfg.hop]
    return np.fft.rfft(frames * cfg.window, axis=1).T  # [K, L]


def _overlap_add(spectra: np.ndarray, cfg: StftConfig, n_samples: int) -> np.ndarray:
    """Weighted overlap-add of one channel's [K, L] STFT back to time."""
    frames = np.fft.irfft(spectra, n=cfg.frame_len, axis=0) * cfg.window[:, None]
    out = np.zeros(n_samples + cfg.frame_len)
    for l in range(frames.shape[1]):
        start = l * cfg.hop
        out[start:start + cfg.frame_len] += frames[:, l]
    return out[:n_samples]


def _steer_moving(source_stft: np.ndarray, positions: np.ndarray,
                  azimuths_deg: np.ndarray, freqs: np.ndarray,
                  cfg: StftConfig, n_samples: int) -> np.ndarray:
    """Per-frame steering of a mono STFT onto all channels, then OLA."""
    units = np.stack([azimuth_to_unit(a) for a in azimuths_deg])  # [L, 3]
    delays = plane_wave_delays_3d(positions, units)  # [L, P]
    out = np.empty((positions.shape[0], n_samples))
    static = np.ptp(delays, axis=0).max() == 0.0
    for p in range(positions.shape[0]):
        if static:
            phase = np.exp(-2j * np.pi * freqs * delays[0, p])[:, None]
        else:
            phase = np.exp(-2j * np.pi * freqs[:, None] * delays[None, :, p])
        out[p] = _overlap_add(source_stft * phase, cfg, n_samples)
    return out


def _steered_sum(wave_stfts, units: np.ndarray, positions: np.ndarray,
                 freqs: np.ndarray, cfg: StftConfig,
                 n_samples: int) -> np.ndarray:
    """Accumulate plane waves onto all channels and resynthesize, [P, T].

    ``wave_stfts`` yields one [K, L] mono STFT per direction in ``units``.
    Waves are applied in chunks through per-bin matrix products (one BLAS
    call per chunk) with a fixed summation order, so the result is
    deterministic and cheap even for ~100 waves.
    """
    n_chan = positions.shape[0]
    n_bins = cfg.n_bins
    n_frames = num_frames(n_samples, cfg)
    delays = plane_wave_delays_3d(positions, units)  # [Q, P]
    phases = np.exp(-2j * np.pi * freqs[None, None, :] * delays[:, :, None])
    phases = np.ascontiguousarray(phases.transpose(2, 1, 0)).astype(np.complex64)
    acc = np.zeros((n_bins, n_chan, n_frames), dtype=np.complex64)
    chunk = 16
    stack = np.empty((chunk, n_bins, n_frames), dtype=np.complex64)
    waves = iter(wave_stfts)
    for start in range(0, units.shape[0], chunk):
        stop = min(start + chunk, units.shape[0])
        for q in range(stop - start):
            stack[q] = next(waves)
        acc += phases[:, :, start:stop] @ stack[:stop - start].transpose(1, 0, 2)
    out = np.empty((n_chan, n_samples))
    for p in range(n_chan):
        out[p] = _overlap_add(acc[:, p].astype(np.complex128), cfg, n_samples)
    return out


def _render_noise_field(spec: SceneSpec, positions: np.ndarray,
                        children: list, cfg: StftConfig,
                        n_samples: int, freqs: np.ndarray) -> np.ndarray:
    """Sum of independent white-noise plane waves, [P, T]."""
    if spec.noise_azimuths_deg is not None:
        units = np.stack([azimuth_to_unit(a) for a in spec.noise_azimuths_deg])
    else:
        units = fibonacci_sphere(spec.diffuse_order)

    def waves():
        for child in children:
            rng = np.random.Generator(np.random.PCG64(child))
            yield _mono_stft(rng.standard_normal(n_samples), cfg)

    return _steered_sum(waves(), units, positions, freqs, cfg, n_samples)


def _reverb_copy(source_stft: np.ndarray, positions: np.ndarray,
                 spec: SceneSpec, children: list, cfg: StftConfig,
                 n_samples: int, freqs: np.ndarray) -> np.ndarray:
    """Direction-independent diffuse copy of the target, [P, T].

    Each lattice direction carries the target filtered by a random
    per-bin allpass (a fixed phase screen), decorrelating the copies so
    the sum is spatially diffuse while keeping the target's envelope.
    """
    units = fibonacci_sphere(spec.diffuse_order)
    n_bins = cfg.n_bins

    def waves():
        for child in children:
            rng = np.random.Generator(np.random.PCG64(child))
            screen = np.exp(2j * np.pi * rng.random(n_bins))
            yield source_stft * screen[:, None]

    return _steered_sum(waves(), units, positions, freqs, cfg, n_samples)


def _front_power(signals: np.ndarray, geometry: ArrayGeometry) -> float:
    front = signals[list(geometry.front_indices)]
    return float(np.mean(front ** 2))


def render_components(spec: SceneSpec, stft_config: StftConfig | None = None
                      ) -> SceneComponents:
    """Render the unscaled clean target and unit diffuse noise field."""
    cfg = stft_config or StftConfig()
    geometry = spec.geometry()
    positions = geometry.positions(include_external=True)
    n_samples = int(round(spec.duration_s * spec.sample_rate))
    if n_samples < cfg.frame_len:
        raise ConfigurationError("scene shorter than one analysis frame")
    n_frames = num_frames(n_samples, cfg)
    freqs = np.fft.rfftfreq(cfg.fft_size, d=1.0 / spec.sample_rate)

    n_noise = (len(spec.noise_azimuths_deg) if spec.noise_azimuths_deg is not None
               else spec.diffuse_order)
    children = np.random.SeedSequence(spec.seed).spawn(1 + n_noise + spec.diffuse_order)

    if spec.source_wav is not None:
        clip = read_wav(spec.source_wav)
        mono = clip.samples[0]
        if mono.size < n_samples:
            reps = int(np.ceil(n_samples / mono.size))
            mono = np.tile(mono, reps)
        source = mono[:n_samples]
    else:
        rng = np.random.Generator(np.random.PCG64(children[0]))
        source = speech_shaped_noise(rng, n_samples, spec.sample_rate)

    source_stft = _mono_stft(source, cfg)
    azimuths = _frame_azimuths(spec, n_frames, cfg)
    clean = _steer_moving(source_stft, positions, azimuths, freqs, cfg, n_samples)

    if spec.reverb_proxy_db is not None:
        diffuse = _reverb_copy(source_stft, positions, spec,
                               children[1 + n_noise:], cfg, n_samples, freqs)
        direct_p = _front_power(clean, geometry)
        diffuse_p = _front_power(diffuse, geometry)
        if diffuse_p > 0.0:
            gain = np.sqrt(direct_p / (diffuse_p * 10.0 ** (spec.reverb_proxy_db / 10.0)))
            clean = clean + gain * diffuse

    noise_unit = _render_noise_field(spec, positions, children[1:1 + n_noise],
                                     cfg, n_samples, freqs)

    oracle = None
    if spec.is_static:
        azimuth = spec.source_trajectory[0][1]
        delay = plane_wave_delays_3d(positions, azimuth_to_unit(azimuth)[None])[0]
        oracle = np.exp(-2j * np.pi * freqs[:, None] * (delay - delay[0])[None, :])

    return SceneComponents(clean=clean, noise_unit=noise_unit,
                           truth_doa_deg=azimuths, geometry=geometry,
                           spec=spec, oracle_rtf=oracle)


def compose(components: SceneComponents,
            snr_db: float | None = None) -> SceneOutput:
    """Scale the noise to the requested SNR and mix.

    ``snr_db`` overrides the spec's value when given, letting SNR sweeps
    reuse one rendering. The scale equates the broadband speech-to-noise
    power ratio at the mean of the two front head microphones.
    """
    spec = components.spec
    if snr_db is None:
        snr_db = spec.snr_db
    else:
        spec = replace(spec, snr_db=snr_db)
    geometry = components.geometry
    clean = components.clean
    if snr_db is None:
        noise = np.zeros_like(clean)
        scale = 0.0
    else:
        speech_p = _front_power(clean, geometry)
        noise_p = _front_power(components.noise_unit, geometry)
        if noise_p <= 0.0 or speech_p <= 0.0:
            raise ConfigurationError("cannot scale SNR of a silent component")
        scale = float(np.sqrt(speech_p / (noise_p * 10.0 ** (snr_db / 10.0))))
        noise = components.noise_unit * scale
    mixed = clean + noise
    rate = spec.sample_rate
    return SceneOutput(mixed=AudioClip(mixed, rate),
                       clean=AudioClip(clean, rate),
                       noise=AudioClip(noise, rate),
                       truth_doa_deg=components.truth_doa_deg,
                       geometry=geometry, spec=spec,
                       oracle_rtf=components.oracle_rtf,
                       noise_scale=scale)


def synthesize(spec: SceneSpec,
               stft_config: StftConfig | None = None) -> SceneOutput:
    """Render a full scene; pure function of the spec (seed included)."""
    return compose(render_components(spec, stft_config))


@dataclass(frozen=True)
class CoherenceReport:
    """Measured vs. modeled magnitude-squared coherence per mic pair."""

    freqs: np.ndarray
    pairs: tuple[tuple[int, int], ...]
    distances_m: np.ndarray
    measured: np.ndarray
    model: np.ndarray


def diffuse_field_check(noise: AudioClip, geometry: ArrayGeometry,
                        pairs: tuple[tuple[int, int], ...] | None = None,
                        nperseg: int = 512) -> CoherenceReport:
    """Estimate pairwise coherence and compare with the isotropic model.

    The model is sinc^2(2 f d / c) for microphone distance d. Requires at
    least 10 s of signal for a stable Welch estimate.
    """
    if noise.duration < 10.0:
        raise ConfigurationError("need at least 10 s of noise for coherence")
    include_external = noise.n_channels == geometry.n_channels
    positions = geometry.positions(include_external=include_external)
    if noise.n_channels != positions.shape[0]:
        raise ConfigurationError("channel count does not match geometry")
    if pairs is None:
        n = positions.shape[0]
        pairs = tuple((i, j) for i in range(n) for j in range(i + 1, n))
    freqs = None
    measured = []
    distances = []
    for i, j in pairs:
        freqs, coh = sps.coherence(noise.samples[i], noise.samples[j],
                                   fs=noise.sample_rate, nperseg=nperseg)
        measured.append(coh)
        distances.append(np.linalg.norm(positions[i] - positions[j]))
    distances = np.asarray(distances)
    model = np.sinc(2.0 * freqs[None, :] * distances[:, None] / SPEED_OF_SOUND) ** 2
    return CoherenceReport(freqs=freqs, pairs=tuple(pairs),
                           distances_m=distances,
                           measured=np.asarray(measured), model=model)
