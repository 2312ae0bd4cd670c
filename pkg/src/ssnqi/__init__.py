"""Twin-beam image simulator and sub-shot-noise imaging analysis pipeline."""

from .alignment import CsScanResult, cs_scan, refine_center
from .errors import (BundleError, ConfigError, GeometryError,
                     InvalidRegimeError, NoCorrelationError, SsnqiError)
from .estimators import (FlatField, Moments, NrfReport, apply_flat_field,
                         background_correct, build_flat_field, fano,
                         frame_report, nrf, predicted_experimental_nrf,
                         predicted_nrf, predicted_nrf_flat_field,
                         predicted_nrf_uncorrelated, spatial_moments)
from .frames import Frame, bin_frame
from .imaging import (AbsorptionMap, FigureOfMeritReport, SnrStudy,
                      class_grouping, correlation_coefficient, dci_image,
                      direct_image, figure_of_merit, r_dci_theory,
                      r_direct_theory, reference_image, snr_study, ssnqi_image)
from .regions import Rect, RegionPair, standard_pair
from .sim import (DetectionParams, ObjectMask, SceneConfig, SourceParams,
                  correlated_mode_fraction, frame_rng, generate_frame,
                  generate_stack, sample_mode_pair_counts, standard_scene)

__version__ = "0.1.0"
