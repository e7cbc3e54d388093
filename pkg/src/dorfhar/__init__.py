"""Wi-Fi CSI activity recognition via velocity/direction factorization.

Pipeline: sanitize CSI phases -> per-bin Doppler velocity projections
-> alternating low-rank fit -> knee-based antenna selection -> sphere
re-projection -> random-kernel features -> small dense classifier.
"""

from .core import (CsiFrameSet, DecodeError, DivergenceError, LabeledTrial,
                   RadioConfig, RADIO_PRESETS, ValidationError, load_dataset,
                   save_dataset)
from .preprocess import sanitize_frame, sanitize_frames, unwrap_phase
from .doppler import (DopplerConfig, DopplerSpectrum, DelayProfile,
                      ProjectionMatrix, delay_profile, doppler_psd,
                      radial_velocity_field)
from .dorf import (DorfField, DorfModel, FitConfig, SphereGrid, fit_dorf,
                   init_directions, project_dorf, sphere_grid,
                   update_directions, update_velocity)
from .selection import (SelectionTable, antenna_errors, knee_index,
                        run_two_stage, select_antennas)
from .features import (ClassifierModel, FeatureSet, KernelBank, TrainConfig,
                       encode_fields, encode_projection, make_kernels,
                       pool_projections, predict, train_classifier)
from .synth import (CorruptionSpec, GESTURE_CLASSES, Scene, gen_csi,
                    gen_projections, gen_trajectory, make_dataset, make_scene,
                    make_trial)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
