"""Scoring, result serialization, and condition sweeps.

The headline metric is the percentage of frames whose wrapped angular
error stays within a tolerance (default 5 degrees); invalid frames count
as incorrect. Scoring covers the trailing ``eval_window`` fraction of the
frames, never earlier than the warm-up horizon.

File formats (stable, consumed by the CLI):

* DOA trajectory CSV: ``frame,time_s,azimuth_deg,cost,valid``
* truth CSV: ``frame_index,time_s,azimuth_deg``
* metrics JSON: flat object, sorted keys; ``real_time_factor`` is null
  when scoring came from files rather than a timed in-process run, so
  re-running an identical configuration reproduces the file bit for bit.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .activity import oracle_labels_from_power
from .doa import PrototypeDatabase
from .errors import ConfigurationError
from .pipeline import DoaTrajectory, RunConfig, track_multi
from .simulate import SceneOutput, SceneSpec, compose, render_components
from .stft import AudioClip, analyze

log = logging.getLogger(__name__)

TRAJECTORY_COLUMNS = ("frame", "time_s", "azimuth_deg", "cost", "valid")
TRUTH_COLUMNS = ("frame_index", "time_s", "azimuth_deg")


def angular_error(est_deg: float, truth_deg: float) -> float:
    """Absolute azimuth difference wrapped into [0, 180] degrees."""
    if not (np.isfinite(est_deg) and np.isfinite(truth_deg)):
        raise ConfigurationError("angular_error needs finite inputs")
    return float(abs((est_deg - truth_deg + 180.0) % 360.0 - 180.0))


def angular_errors(est_deg: np.ndarray, truth_deg: np.ndarray) -> np.ndarray:
    """Vectorized wrap; NaN estimates give NaN errors."""
    est = np.asarray(est_deg, dtype=np.float64)
    truth = np.asarray(truth_deg, dtype=np.float64)
    return np.abs((est - truth + 180.0) % 360.0 - 180.0)


def accuracy(azimuth_deg: np.ndarray, valid: np.ndarray,
             truth_deg: np.ndarray, tolerance_deg: float = 5.0) -> float:
    """Percent of frames localized within tolerance; invalid frames fail."""
    azimuth = np.asarray(azimuth_deg, dtype=np.float64)
    valid = np.asarray(valid, dtype=bool)
    truth = np.asarray(truth_deg, dtype=np.float64)
    if azimuth.size == 0:
        raise ConfigurationError("cannot score an empty window")
    if azimuth.shape != truth.shape or azimuth.shape != valid.shape:
        raise ConfigurationError("estimate, validity, and truth lengths differ")
    errors = angular_errors(azimuth, truth)
    hits = valid & (errors <= tolerance_deg)
    return float(100.0 * np.count_nonzero(hits) / azimuth.size)


@dataclass(frozen=True)
class Metrics:
    """Scores of one estimator over one recording's evaluation window."""

    estimator: str
    tolerance_deg: float
    frames_total: int
    frames_scored: int
    accuracy_pct: float
    rms_error_deg: float | None
    invalid_frames: int
    noise_reads: int
    real_time_factor: float | None
    errors_deg: tuple

    def to_dict(self) -> dict:
        return {
            "estimator": self.estimator,
            "tolerance_deg": self.tolerance_deg,
            "frames_total": self.frames_total,
            "frames_scored": self.frames_scored,
            "accuracy_pct": self.accuracy_pct,
            "rms_error_deg": self.rms_error_deg,
            "invalid_frames": self.invalid_frames,
            "noise_reads": self.noise_reads,
            "real_time_factor": self.real_time_factor,
            "errors_deg": list(self.errors_deg),
        }


def write_metrics_json(path: str | Path, metrics: Metrics) -> None:
    Path(path).write_text(
        json.dumps(metrics.to_dict(), indent=2, sort_keys=True) + "\n")


def _scored_slice(n_frames: int, warmup: int, eval_window: float) -> slice:
    n_eval = int(round(eval_window * n_frames))
    start = max(warmup, n_frames - n_eval)
    if start >= n_frames:
        raise ConfigurationError("scoring window is empty")
    return slice(start, n_frames)


def score(traj: DoaTrajectory, truth_deg: np.ndarray,
          tolerance_deg: float = 5.0, eval_window: float = 0.5,
          timed: bool = True, duration_s: float | None = None) -> Metrics:
    """Score a trajectory against per-frame truth azimuths.

    ``eval_window`` selects the trailing fraction of frames; the window
    additionally starts no earlier than the trajectory's warm-up.
    """
    truth = np.asarray(truth_deg, dtype=np.float64)
    if truth.size != traj.n_frames:
        raise ConfigurationError(
            f"truth holds {truth.size} frames, trajectory {traj.n_frames}")
    window = _scored_slice(traj.n_frames, traj.warmup_frames, eval_window)
    az = traj.azimuth_deg[window]
    valid = traj.valid[window]
    tr = truth[window]
    acc = accuracy(az, valid, tr, tolerance_deg)
    errors = angular_errors(az, tr)
    errors_out = tuple(float(e) if v else None for e, v in zip(errors, valid))
    rms = None
    if valid.any():
        rms = float(np.sqrt(np.mean(errors[valid] ** 2)))
    rtf = None
    if timed and traj.processing_s > 0.0 and duration_s is not None:
        rtf = float(traj.processing_s / duration_s)
    return Metrics(estimator=traj.estimator, tolerance_deg=tolerance_deg,
                   frames_total=traj.n_frames, frames_scored=az.size,
                   accuracy_pct=acc, rms_error_deg=rms,
                   invalid_frames=int(np.count_nonzero(~valid)),
                   noise_reads=traj.noise_reads, real_time_factor=rtf,
                   errors_deg=errors_out)


def oracle_label_grid(output: SceneOutput, config: RunConfig) -> np.ndarray:
    """Reference-channel oracle activity labels for a rendered scene."""
    clean_ref = AudioClip(output.clean.samples[:1], output.clean.sample_rate)
    noise_ref = AudioClip(output.noise.samples[:1], output.noise.sample_rate)
    x2 = np.abs(analyze(clean_ref, config.stft).data[0]) ** 2
    n2 = np.abs(analyze(noise_ref, config.stft).data[0]) ** 2
    return oracle_labels_from_power(x2, n2, config.oracle_margin_db)


def run_scene(output: SceneOutput, db: PrototypeDatabase, config: RunConfig,
              estimators: tuple[str, ...] | None = None
              ) -> dict[str, tuple[DoaTrajectory, Metrics]]:
    """Track a rendered scene and score every estimator against its truth."""
    labels = None
    if config.detector == "oracle":
        labels = oracle_label_grid(output, config)
    trajs = track_multi(output.mixed, db, config, estimators, labels)
    results = {}
    for name, traj in trajs.items():
        metrics = score(traj, output.truth_doa_deg, config.tolerance_deg,
                        config.eval_window, duration_s=output.mixed.duration)
        results[name] = (traj, metrics)
    return results


def write_trajectory_csv(path: str | Path, traj: DoaTrajectory) -> None:
    """Stable five-column CSV; invalid azimuth and cost print as nan."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRAJECTORY_COLUMNS)
        for i in range(traj.n_frames):
            writer.writerow([
                i,
                f"{traj.frame_times[i]:.6f}",
                f"{traj.azimuth_deg[i]:.4f}",
                f"{traj.cost[i]:.8f}",
                int(traj.valid[i]),
            ])


def read_trajectory_csv(path: str | Path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != TRAJECTORY_COLUMNS:
            raise ConfigurationError(f"unexpected trajectory header: {header}")
        rows = list(reader)
    if not rows:
        raise ConfigurationError("trajectory CSV holds no frames")
    data = np.array([[float(c) for c in row] for row in rows])
    return {
        "frame": data[:, 0].astype(int),
        "time_s": data[:, 1],
        "azimuth_deg": data[:, 2],
        "cost": data[:, 3],
        "valid": data[:, 4] > 0.5,
    }


def write_truth_csv(path: str | Path, frame_times: np.ndarray,
                    azimuth_deg: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRUTH_COLUMNS)
        for i, (t, a) in enumerate(zip(frame_times, azimuth_deg)):
            writer.writerow([i, f"{t:.6f}", f"{a:.4f}"])


def read_truth_csv(path: str | Path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != TRUTH_COLUMNS:
            raise ConfigurationError(f"unexpected truth header: {header}")
        rows = list(reader)
    if not rows:
        raise ConfigurationError("truth CSV holds no frames")
    data = np.array([[float(c) for c in row] for row in rows])
    return {"frame_index": data[:, 0].astype(int), "time_s": data[:, 1],
            "azimuth_deg": data[:, 2]}


def evaluate_csv(doa_csv: str | Path, truth_csv: str | Path,
                 tolerance_deg: float = 5.0, eval_window: float = 0.5,
                 warmup_frames: int = 0,
                 estimator: str = "unknown") -> Metrics:
    """Score a written trajectory against a written truth table.

    The CSV carries no timing, so ``real_time_factor`` is null and the
    output is reproducible byte for byte.
    """
    doa = read_trajectory_csv(doa_csv)
    truth = read_truth_csv(truth_csv)
    traj = DoaTrajectory(estimator=estimator, azimuth_deg=doa["azimuth_deg"],
                         cost=doa["cost"], valid=doa["valid"],
                         frame_times=doa["time_s"], warmup_frames=warmup_frames)
    return score(traj, truth["azimuth_deg"], tolerance_deg, eval_window,
                 timed=False)


SWEEP_COLUMNS = ("estimator", "azimuth_deg", "snr_db", "seed",
                 "reverb_proxy_db", "external_azimuth_deg",
                 "external_distance_m", "frames_scored", "accuracy_pct",
                 "rms_error_deg", "invalid_frames", "error")


def run_sweep(matrix: dict, db: PrototypeDatabase,
              base_config: RunConfig | None = None) -> list[dict]:
    """Cross product of sweep axes on static scenes.

    Required axes: ``estimators``, ``azimuths_deg``, ``snrs_db``,
    ``seeds``. Optional axes: ``reverb_proxies_db`` (default anechoic)
    and ``externals`` as [azimuth_deg, distance_m] pairs. Scene
    components are cached per condition and rescaled per SNR, and all
    estimators share one covariance pass per scene. Failed cells are
    captured as rows with an ``error`` note instead of aborting the
    sweep; averaged rows (seed and azimuth columns ``avg``) are appended
    per remaining condition.
    """
    base = base_config or RunConfig()
    try:
        estimators = tuple(matrix["estimators"])
        azimuths = [float(a) for a in matrix["azimuths_deg"]]
        snrs = [None if s is None else float(s) for s in matrix["snrs_db"]]
        seeds = [int(s) for s in matrix["seeds"]]
    except KeyError as exc:
        raise ConfigurationError(f"sweep matrix misses {exc}") from exc
    if not (estimators and azimuths and snrs and seeds):
        raise ConfigurationError("sweep axes must be non-empty")
    reverbs = matrix.get("reverb_proxies_db", [matrix.get("reverb_proxy_db")])
    externals = [tuple(e) for e in matrix.get("externals", [(45.0, 1.6)])]
    duration = float(matrix.get("duration_s", 30.0))
    diffuse_order = int(matrix.get("diffuse_order", 96))
    overrides = {k: matrix[k] for k in
                 ("detector", "tau_y_s", "tau_n_s", "eval_window",
                  "tolerance_deg") if k in matrix}
    if overrides:
        base = replace(base, **overrides)

    rows: list[dict] = []
    margin = base.oracle_margin_db
    for seed in seeds:
        for azimuth in azimuths:
            for reverb in reverbs:
                for ext_az, ext_dist in externals:
                    cond = {"azimuth_deg": azimuth, "seed": seed,
                            "reverb_proxy_db": reverb,
                            "external_azimuth_deg": ext_az,
                            "external_distance_m": ext_dist}
                    spec = SceneSpec(seed=seed, duration_s=duration,
                                     source_trajectory=((0.0, azimuth),),
                                     diffuse_order=diffuse_order,
                                     reverb_proxy_db=reverb,
                                     external_azimuth_deg=ext_az,
                                     external_distance_m=ext_dist)
                    try:
                        comps = render_components(spec, base.stft)
                        ref_clean = AudioClip(comps.clean[:1], spec.sample_rate)
                        ref_noise = AudioClip(comps.noise_unit[:1], spec.sample_rate)
                        x2 = np.abs(analyze(ref_clean, base.stft).data[0]) ** 2
                        n2_unit = np.abs(analyze(ref_noise, base.stft).data[0]) ** 2
                    except Exception as exc:
                        log.warning("scene %s failed: %s", cond, exc)
                        for snr in snrs:
                            rows.extend(_error_rows(estimators, cond, snr, exc))
                        continue
                    for snr in snrs:
                        try:
                            out = compose(comps, snr)
                            if base.detector == "oracle":
                                labels = oracle_labels_from_power(
                                    x2, n2_unit * out.noise_scale ** 2, margin)
                            else:
                                labels = None
                            trajs = track_multi(out.mixed, db, base,
                                                estimators, labels)
                            for name, traj in trajs.items():
                                metrics = score(traj, out.truth_doa_deg,
                                                base.tolerance_deg,
                                                base.eval_window, timed=False)
                                rows.append({
                                    "estimator": name, "snr_db": snr, **cond,
                                    "frames_scored": metrics.frames_scored,
                                    "accuracy_pct": metrics.accuracy_pct,
                                    "rms_error_deg": metrics.rms_error_deg,
                                    "invalid_frames": metrics.invalid_frames,
                                    "error": "",
                                })
                        except Exception as exc:
                            log.warning("cell %s snr=%s failed: %s", cond, snr, exc)
                            rows.extend(_error_rows(estimators, cond, snr, exc))

    for name in estimators:
        for snr in snrs:
            for reverb in reverbs:
                for ext_az, ext_dist in externals:
                    cells = [r for r in rows
                             if r["estimator"] == name and r["snr_db"] == snr
                             and r["reverb_proxy_db"] == reverb
                             and r["external_azimuth_deg"] == ext_az
                             and r["external_distance_m"] == ext_dist
                             and r["seed"] != "avg" and not r["error"]]
                    if not cells:
                        continue
                    rows.append({
                        "estimator": name, "azimuth_deg": "avg", "snr_db": snr,
                        "seed": "avg", "reverb_proxy_db": reverb,
                        "external_azimuth_deg": ext_az,
                        "external_distance_m": ext_dist,
                        "frames_scored": int(np.sum([c["frames_scored"]
                                                     for c in cells])),
                        "accuracy_pct": float(np.mean([c["accuracy_pct"]
                                                       for c in cells])),
                        "rms_error_deg": None,
                        "invalid_frames": int(np.sum([c["invalid_frames"]
                                                      for c in cells])),
                        "error": "",
                    })
    return rows


def _error_rows(estimators, cond: dict, snr, exc) -> list[dict]:
    return [{"estimator": name, "snr_db": snr, **cond, "frames_scored": 0,
             "accuracy_pct": None, "rms_error_deg": None, "invalid_frames": 0,
             "error": f"{type(exc).__name__}: {exc}"}
            for name in estimators]


def write_sweep_csv(path: str | Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS)
        writer.writeheader()
        for row in rows:
            out = dict(row)
            for key in ("accuracy_pct", "rms_error_deg"):
                if out.get(key) is not None:
                    out[key] = f"{out[key]:.4f}"
                else:
                    out[key] = ""
            writer.writerow(out)
