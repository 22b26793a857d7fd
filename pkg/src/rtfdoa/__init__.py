"""Binaural direction-of-arrival estimation from tracked RTF vectors.

Head-mounted microphones (plus an optional external one) feed recursive
per-bin covariance estimates; RTF vectors extracted by covariance
subtraction, covariance whitening, or the spatial-coherence shortcut are
matched against a prototype grid by the frequency-averaged Hermitian
angle. A scene simulator, scoring harness, and CLI round out the
package.
"""
from .activity import (ActivityLabel, SppConfig, classify_frame, oracle_labels,
                       read_labels, spp, write_labels)
from .covariance import (CovarianceState, CovarianceTracker, SmoothingConfig,
                         head_submatrix, initial_state, update)
from .doa import (CostSurface, DoaEstimate, PrototypeDatabase, argmin_direction,
                  argmin_directions, cost_surface, cost_surface_frames,
                  default_grid, generate_prototypes, hermitian_angle,
                  load_database, save_database)
from .errors import ConfigurationError, NumericalFailure
from .estimators import (EstimatorConfig, RtfVector, WhitenedTracker, batch_cs,
                         batch_cw, batch_sc, estimate_cs_head, estimate_cw,
                         estimate_sc, principal_eigenvector,
                         regularized_cholesky)
from .evaluate import (Metrics, accuracy, angular_error, angular_errors,
                       evaluate_csv, run_scene, run_sweep, score)
from .geometry import (ArrayGeometry, azimuth_to_unit, binaural_head_positions,
                       default_geometry, plane_wave_delays,
                       plane_wave_delays_3d, SPEED_OF_SOUND)
from .pipeline import (DoaTrajectory, ESTIMATOR_NAMES, RunConfig, track,
                       track_multi)
from .simulate import (CoherenceReport, SceneComponents, SceneOutput, SceneSpec,
                       compose, diffuse_field_check, fibonacci_sphere,
                       render_components, speech_shaped_noise, synthesize)
from .stft import (AudioClip, StftConfig, TFGrid, analyze, num_frames,
                   read_wav, sqrt_hann, write_wav)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
