"""Per-bin speech activity: speech presence probability and oracle labels.

The detector decides, per time-frequency bin, whether the incoming frame
updates the noisy-signal covariance (speech plus noise) or the noise
covariance (noise only).
"""
from __future__ import annotations

import enum
import logging
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .stft import TFGrid

log = logging.getLogger(__name__)

_LABEL_MAGIC = b"DOALBL01"


class ActivityLabel(enum.IntEnum):
    NOISE_ONLY = 0
    SPEECH_PLUS_NOISE = 1


@dataclass(frozen=True)
class SppConfig:
    """Fixed-prior Gaussian speech presence probability model.

    ``prior`` is the a-priori speech presence probability q and
    ``fixed_snr_db`` the fixed optimal a-priori SNR of the active state.
    """

    prior: float = 0.5
    fixed_snr_db: float = 15.0
    threshold: float = 0.5
    noise_psd_floor: float = 1e-12

    def __post_init__(self) -> None:
        if not 0.0 < self.prior < 1.0:
            raise ConfigurationError("prior must lie strictly inside (0, 1)")
        if not 0.0 <= self.threshold <= 1.0:
            raise ConfigurationError("threshold must lie in [0, 1]")
        if self.noise_psd_floor <= 0.0:
            raise ConfigurationError("noise_psd_floor must be positive")


def spp(noisy_power, noise_psd, cfg: SppConfig | None = None) -> np.ndarray:
    """Speech presence probability of noisy periodogram values.

    With a-posteriori SNR ``gamma = noisy_power / noise_psd`` and fixed
    a-priori SNR ``xi``::

        p = 1 / (1 + (1-q)/q * (1+xi) * exp(-gamma * xi / (1+xi)))

    Non-positive noise PSD values are clamped to the configured floor.
    """
    cfg = cfg or SppConfig()
    power = np.asarray(noisy_power, dtype=np.float64)
    psd = np.asarray(noise_psd, dtype=np.float64)
    if np.any(psd <= 0.0):
        log.warning("non-positive noise PSD clamped to floor %.1e", cfg.noise_psd_floor)
        psd = np.maximum(psd, cfg.noise_psd_floor)
    xi = 10.0 ** (cfg.fixed_snr_db / 10.0)
    gamma = power / psd
    odds_inv = (1.0 - cfg.prior) / cfg.prior * (1.0 + xi) * np.exp(-gamma * xi / (1.0 + xi))
    return 1.0 / (1.0 + odds_inv)


def classify_frame(probabilities, cfg: SppConfig | None = None) -> ActivityLabel:
    """Average channel probabilities and threshold into an activity label."""
    cfg = cfg or SppConfig()
    probs = np.asarray(probabilities, dtype=np.float64)
    if probs.size == 0:
        raise ConfigurationError("cannot classify an empty probability vector")
    if probs.min() < 0.0 or probs.max() > 1.0:
        raise ConfigurationError("probabilities must lie in [0, 1]")
    if float(probs.mean()) > cfg.threshold:
        return ActivityLabel.SPEECH_PLUS_NOISE
    return ActivityLabel.NOISE_ONLY


def oracle_labels_from_power(clean_power: np.ndarray, noise_power: np.ndarray,
                             margin_db: float = -10.0) -> np.ndarray:
    """Activity grid from reference-channel periodograms (any matching shape)."""
    clean_power = np.asarray(clean_power)
    noise_power = np.asarray(noise_power)
    if clean_power.shape != noise_power.shape:
        raise ConfigurationError("power grids must share shape")
    margin = 10.0 ** (margin_db / 10.0)
    return clean_power > margin * noise_power


def oracle_labels(clean: TFGrid, noise: TFGrid, margin_db: float = -10.0) -> np.ndarray:
    """Ground-truth activity grid from the separated scene components.

    A bin is labeled speech-plus-noise when the reference-channel speech
    periodogram exceeds the noise periodogram by ``margin_db``:
    ``|X1|^2 > 10^(margin_db/10) * |N1|^2``. Returns a boolean [K, L] grid
    (True = speech plus noise).
    """
    if clean.data.shape[1:] != noise.data.shape[1:]:
        raise ConfigurationError("clean and noise grids must share [K, L] shape")
    x2 = np.abs(clean.data[0]) ** 2
    n2 = np.abs(noise.data[0]) ** 2
    return oracle_labels_from_power(x2, n2, margin_db)


def write_labels(path, labels: np.ndarray) -> None:
    """Serialize a boolean [K, L] label grid as a packed bitmap.

    Layout: 8-byte magic, K and L as little-endian uint32, then the grid
    bits row-major (bin-major) with most-significant-bit-first packing.
    """
    grid = np.asarray(labels, dtype=bool)
    if grid.ndim != 2:
        raise ConfigurationError("label grid must be 2-D [K, L]")
    k, l = grid.shape
    header = _LABEL_MAGIC + struct.pack("<II", k, l)
    payload = np.packbits(grid.reshape(-1))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload.tobytes())


def read_labels(path) -> np.ndarray:
    """Read a label bitmap written by :func:`write_labels`."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16 or blob[:8] != _LABEL_MAGIC:
        raise ConfigurationError("not a label bitmap (bad magic)")
    k, l = struct.unpack("<II", blob[8:16])
    n_bits = k * l
    expected = (n_bits + 7) // 8
    payload = np.frombuffer(blob[16:], dtype=np.uint8)
    if payload.size != expected:
        raise ConfigurationError("label bitmap payload size mismatch")
    bits = np.unpackbits(payload, count=n_bits)
    return bits.reshape(k, l).astype(bool)
