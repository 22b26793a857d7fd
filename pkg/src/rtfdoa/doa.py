"""Direction-of-arrival estimation by prototype matching.

A prototype database holds head-mounted RTF vectors on a discrete
azimuth grid (default 5 degree steps, 72 directions). Each frame's DOA
is the grid direction whose prototypes minimize the Hermitian angle to
the estimated per-bin RTF vectors, averaged over frequency with the DC
bin excluded. Ties are resolved toward the smallest absolute azimuth,
then the smaller azimuth, so results are deterministic.

The database file is a single line of JSON metadata followed by the
prototype tensor as little-endian float32 (interleaved real/imaginary),
either base64-encoded or raw.
"""
from __future__ import annotations

import base64
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .geometry import SPEED_OF_SOUND, ArrayGeometry, plane_wave_delays

log = logging.getLogger(__name__)

DEFAULT_GRID_STEP_DEG = 5.0
_REF_TOL = 1e-6


def default_grid(step_deg: float = DEFAULT_GRID_STEP_DEG) -> np.ndarray:
    """Azimuth grid covering [-180, 180) degrees."""
    if step_deg <= 0.0 or 360.0 % step_deg != 0.0:
        raise ConfigurationError("step_deg must be positive and divide 360")
    return np.arange(-180.0, 180.0, step_deg)


@dataclass(frozen=True)
class PrototypeDatabase:
    """Head-mounted prototype RTF vectors on an azimuth grid.

    ``vectors`` has shape [I, K, M] with the reference-microphone entry
    (index 0) equal to one for every direction and bin. Immutable after
    construction; shared read-only by the matching routines.
    """

    directions_deg: np.ndarray
    vectors: np.ndarray
    sample_rate: int
    fft_size: int
    geometry_id: str = "unknown"

    def __post_init__(self) -> None:
        dirs = np.asarray(self.directions_deg, dtype=np.float64)
        vec = np.asarray(self.vectors, dtype=np.complex128)
        if dirs.ndim != 1 or dirs.size == 0:
            raise ConfigurationError("directions must be a non-empty 1-d array")
        if np.any(np.diff(dirs) <= 0):
            raise ConfigurationError("directions must be strictly increasing")
        if dirs[0] < -180.0 or dirs[-1] >= 180.0:
            raise ConfigurationError("directions must lie in [-180, 180)")
        if vec.ndim != 3 or vec.shape[0] != dirs.size:
            raise ConfigurationError("vectors must have shape [I, K, M]")
        if self.fft_size < 2 or self.fft_size % 2 != 0:
            raise ConfigurationError("fft_size must be even and >= 2")
        if vec.shape[1] != self.fft_size // 2 + 1:
            raise ConfigurationError("vectors bin count must match fft_size//2 + 1")
        if self.sample_rate <= 0:
            raise ConfigurationError("sample_rate must be positive")
        if np.max(np.abs(vec[:, :, 0] - 1.0)) > _REF_TOL:
            raise ConfigurationError("reference entries must equal 1")
        vec = vec.copy()
        vec[:, :, 0] = 1.0
        dirs.setflags(write=False)
        vec.setflags(write=False)
        object.__setattr__(self, "directions_deg", dirs)
        object.__setattr__(self, "vectors", vec)

    @property
    def n_directions(self) -> int:
        return self.directions_deg.size

    @property
    def n_bins(self) -> int:
        return self.vectors.shape[1]

    @property
    def n_mics(self) -> int:
        return self.vectors.shape[2]

    def tie_break_order(self) -> np.ndarray:
        """Direction indices sorted by (|azimuth|, azimuth).

        Scanning cost rows in this order makes the first minimum the
        tie-broken winner.
        """
        dirs = self.directions_deg
        return np.lexsort((dirs, np.abs(dirs)))


@dataclass(frozen=True)
class CostSurface:
    """Frequency-averaged Hermitian angles, one row per frame [L, I].

    Rows of an invalid frame (no valid bins) are NaN.
    """

    values: np.ndarray

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 2:
            raise ConfigurationError("cost surface must be 2-d [L, I]")
        finite = vals[np.isfinite(vals)]
        if finite.size and (finite.min() < 0.0 or finite.max() > np.pi / 2 + 1e-9):
            raise ConfigurationError("cost entries must lie in [0, pi/2]")
        object.__setattr__(self, "values", vals)


@dataclass(frozen=True)
class DoaEstimate:
    """Per-frame decision: grid azimuth, its cost, and a validity flag."""

    azimuth_deg: float
    cost: float
    valid: bool = True


def hermitian_angle(a: np.ndarray, b: np.ndarray) -> float:
    """Angle between complex vectors, invariant to complex scaling.

    ``arccos(|a^H b| / (||a|| ||b||))`` with the argument clamped to
    [0, 1] against rounding; ranges over [0, pi/2].
    """
    av = np.asarray(a, dtype=np.complex128).ravel()
    bv = np.asarray(b, dtype=np.complex128).ravel()
    if av.shape != bv.shape:
        raise ConfigurationError("vectors must have equal length")
    na = np.linalg.norm(av)
    nb = np.linalg.norm(bv)
    if na == 0.0 or nb == 0.0:
        raise ConfigurationError("hermitian angle undefined for zero vectors")
    ratio = np.abs(np.vdot(av, bv)) / (na * nb)
    return float(np.arccos(np.clip(ratio, 0.0, 1.0)))


def _check_against_db(values: np.ndarray, db: PrototypeDatabase) -> np.ndarray:
    values = np.asarray(values)
    if values.shape[-2] != db.n_bins or values.shape[-1] != db.n_mics:
        raise ConfigurationError(
            f"estimates shaped {values.shape} do not match database "
            f"[{db.n_bins} bins x {db.n_mics} mics]")
    return values


def cost_surface_frames(values: np.ndarray, valid: np.ndarray,
                        db: PrototypeDatabase, chunk_bins: int = 32) -> np.ndarray:
    """Frequency-averaged Hermitian angle per frame and direction.

    ``values`` is [L, K, M] (any complex dtype; single precision is fine
    and fast), ``valid`` is [L, K]. The DC bin and invalid bins are
    excluded from the mean; frames with no valid bin get a NaN row.
    Angles are computed bin-chunk by bin-chunk to bound memory.
    """
    values = _check_against_db(values, db)
    if values.ndim != 3:
        raise ConfigurationError("values must be [L, K, M]")
    n_frames, n_bins, _ = values.shape
    valid = np.asarray(valid, dtype=bool)
    if valid.shape != (n_frames, n_bins):
        raise ConfigurationError("valid mask must be [L, K]")

    cdtype = np.complex64 if values.dtype == np.complex64 else np.complex128
    rdtype = np.float32 if cdtype == np.complex64 else np.float64
    tiny = np.finfo(rdtype).tiny
    # unit-normalized prototypes make the matmul below yield cosines directly
    proto = np.ascontiguousarray(db.vectors.transpose(1, 2, 0)).astype(cdtype)
    proto /= np.maximum(np.linalg.norm(proto, axis=1), tiny)[:, None, :]

    mask = valid.copy()
    mask[:, 0] = False  # DC carries no usable phase difference
    counts = mask.sum(axis=1)

    total = np.zeros((n_frames, db.n_directions), dtype=np.float64)
    for start in range(1, n_bins, chunk_bins):
        stop = min(start + chunk_bins, n_bins)
        est = values[:, start:stop].transpose(1, 0, 2).astype(cdtype, copy=False)
        norms = np.maximum(np.linalg.norm(est, axis=2), tiny)
        est = est.conj() / norms[:, :, None]
        ang = np.abs(est @ proto[start:stop])  # [c, L, I] cosines
        np.minimum(ang, rdtype(1.0), out=ang)
        np.arccos(ang, out=ang)
        # masked sum over the bin chunk in one contraction
        total += np.einsum("cli,lc->li",
                           ang, mask[:, start:stop].astype(rdtype))

    with np.errstate(invalid="ignore", divide="ignore"):
        surface = total / counts[:, None]
    surface[counts == 0] = np.nan
    return surface


def cost_surface(values: np.ndarray, valid: np.ndarray,
                 db: PrototypeDatabase) -> np.ndarray:
    """Cost row for a single frame: [K, M] estimates against the grid."""
    values = _check_against_db(values, db)
    if values.ndim != 2:
        raise ConfigurationError("values must be [K, M]")
    return cost_surface_frames(values[None].astype(np.complex128),
                               np.asarray(valid, dtype=bool)[None], db)[0]


def argmin_directions(surface: np.ndarray, db: PrototypeDatabase
                      ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Tie-broken argmin per cost row.

    Returns (azimuth_deg [L], cost [L], valid [L]); rows containing NaN
    are invalid and get NaN azimuth and cost.
    """
    surface = np.asarray(surface, dtype=np.float64)
    if surface.ndim != 2 or surface.shape[1] != db.n_directions:
        raise ConfigurationError("surface must be [L, I] matching the grid")
    order = db.tie_break_order()
    reordered = surface[:, order]
    ok = np.isfinite(surface).all(axis=1)
    azimuths = np.full(surface.shape[0], np.nan)
    costs = np.full(surface.shape[0], np.nan)
    if ok.any():
        # argmin returns the first minimum, which in (|az|, az) order is
        # exactly the tie-break rule
        pos = np.argmin(reordered[ok], axis=1)
        azimuths[ok] = db.directions_deg[order][pos]
        costs[ok] = reordered[ok, pos]
    return azimuths, costs, ok


def argmin_direction(cost_row: np.ndarray, db: PrototypeDatabase) -> DoaEstimate:
    """Decision for one frame; invalid when the row contains NaN."""
    azimuths, costs, ok = argmin_directions(
        np.asarray(cost_row, dtype=np.float64)[None], db)
    if not ok[0]:
        return DoaEstimate(azimuth_deg=float("nan"), cost=float("nan"), valid=False)
    return DoaEstimate(azimuth_deg=float(azimuths[0]), cost=float(costs[0]),
                       valid=True)


def _sphere_level_term(geometry: ArrayGeometry, directions_deg: np.ndarray,
                       freqs: np.ndarray) -> np.ndarray:
    """Rigid-sphere magnitude shadow, [I, K, M], relative to microphone 0.

    Single-pole/single-zero approximation of diffraction around a sphere:
    gain(f, gamma) = |1 + j a(gamma) f/f0| / |1 + j f/f0| with corner
    frequency f0 = 2c / (2 pi r) and a(gamma) = 1 + cos(gamma), where
    gamma is the angle between the source direction and the microphone's
    radial direction from the head center. Returned levels are divided by
    the reference microphone's level so the reference entry stays one.
    """
    pos = geometry.head_positions
    center = pos.mean(axis=0)
    radial = pos - center
    norms = np.linalg.norm(radial, axis=1)
    radius = float(norms.max())
    radial = radial / np.maximum(norms, 1e-12)[:, None]
    theta = np.deg2rad(np.asarray(directions_deg, dtype=np.float64))
    source = np.stack([np.cos(theta), np.sin(theta), np.zeros_like(theta)], axis=1)
    cos_gamma = source @ radial.T  # [I, M]
    alpha = 1.0 + cos_gamma
    f0 = 2.0 * SPEED_OF_SOUND / (2.0 * np.pi * radius)
    fr = freqs[None, :, None] / f0  # [1, K, 1]
    gain = np.sqrt(1.0 + (alpha[:, None, :] * fr) ** 2) / np.sqrt(1.0 + fr ** 2)
    return gain / gain[:, :, :1]


def generate_prototypes(geometry: ArrayGeometry,
                        directions_deg: np.ndarray | None = None,
                        sample_rate: int = 16000,
                        fft_size: int = 512,
                        head_shadow: bool = False) -> PrototypeDatabase:
    """Free-field plane-wave prototype RTFs for the head microphones.

    Entry m at direction theta and frequency f is
    ``exp(-j 2 pi f (tau_m - tau_0))`` with tau the far-field plane-wave
    delay onto microphone m; ``head_shadow`` adds a rigid-sphere level
    term on top of the phases.
    """
    if directions_deg is None:
        directions_deg = default_grid()
    dirs = np.asarray(directions_deg, dtype=np.float64)
    pos = geometry.head_positions
    freqs = np.fft.rfftfreq(fft_size, d=1.0 / sample_rate)
    delays = np.stack([plane_wave_delays(pos, d) for d in dirs])  # [I, M]
    rel = delays - delays[:, :1]
    phase = np.exp(-2j * np.pi * freqs[None, :, None] * rel[:, None, :])
    if head_shadow:
        phase = phase * _sphere_level_term(geometry, dirs, freqs)
    return PrototypeDatabase(directions_deg=dirs, vectors=phase,
                             sample_rate=sample_rate, fft_size=fft_size,
                             geometry_id=geometry.geometry_id)


def save_database(db: PrototypeDatabase, path: str | Path,
                  encoding: str = "base64") -> None:
    """Write header line plus float32 little-endian payload."""
    if encoding not in ("base64", "raw"):
        raise ConfigurationError("encoding must be 'base64' or 'raw'")
    header = {
        "geometry_id": db.geometry_id,
        "sample_rate": int(db.sample_rate),
        "fft_size": int(db.fft_size),
        "directions": [float(d) for d in db.directions_deg],
        "M": int(db.n_mics),
        "encoding": encoding,
    }
    interleaved = np.empty(db.vectors.shape + (2,), dtype="<f4")
    interleaved[..., 0] = db.vectors.real
    interleaved[..., 1] = db.vectors.imag
    payload = interleaved.tobytes()
    if encoding == "base64":
        payload = base64.b64encode(payload)
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("ascii") + b"\n")
        fh.write(payload)


def load_database(path: str | Path) -> PrototypeDatabase:
    """Read a database file, validating shape and the unit-reference rule."""
    with open(path, "rb") as fh:
        header_line = fh.readline()
        payload = fh.read()
    try:
        header = json.loads(header_line.decode("ascii"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"unreadable database header: {exc}") from exc
    for key in ("geometry_id", "sample_rate", "fft_size", "directions"):
        if key not in header:
            raise ConfigurationError(f"database header misses '{key}'")
    n_mics = header.get("M", header.get("n_mics"))
    if n_mics is None:
        raise ConfigurationError("database header misses 'M'")
    encoding = header.get("encoding", "base64")
    if encoding == "base64":
        try:
            payload = base64.b64decode(payload, validate=True)
        except Exception as exc:
            raise ConfigurationError(f"corrupt base64 payload: {exc}") from exc
    elif encoding != "raw":
        raise ConfigurationError(f"unknown payload encoding '{encoding}'")
    dirs = np.asarray(header["directions"], dtype=np.float64)
    n_bins = int(header["fft_size"]) // 2 + 1
    expected = dirs.size * n_bins * int(n_mics) * 2 * 4
    if len(payload) != expected:
        raise ConfigurationError(
            f"payload holds {len(payload)} bytes, expected {expected}")
    flat = np.frombuffer(payload, dtype="<f4").reshape(
        dirs.size, n_bins, int(n_mics), 2)
    vectors = flat[..., 0].astype(np.float64) + 1j * flat[..., 1].astype(np.float64)
    return PrototypeDatabase(directions_deg=dirs, vectors=vectors,
                             sample_rate=int(header["sample_rate"]),
                             fft_size=int(header["fft_size"]),
                             geometry_id=str(header["geometry_id"]))
