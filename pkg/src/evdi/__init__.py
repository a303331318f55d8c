"""Event-camera motion deblurring, simulation, and calibration toolkit.

The pieces fit together like this: ``simulator`` turns a high-rate frame
sequence into an event stream plus blurry/sharp views; ``integrator``
inverts the blur using those events (and replays sharp video at any
instant inside the exposure); ``calibrate`` recovers the contrast
threshold and sensor response the integrator needs; ``geometry``,
``imaging``, and ``dataio`` supply poses, color/metric plumbing, and
bit-exact file formats; ``cli`` wires it all into commands.
"""
from .calibrate import (REAL_CAMERA_DEFAULT_THETA, ResponseCurve,
                        ResponseFit, ThresholdFit, consistency_loss,
                        fit_response, fit_threshold,
                        golden_section_minimize)
from .dataio import (DatasetManifest, FormatError, ViewRecord,
                     read_events, read_image, read_manifest, read_poses,
                     write_events, write_image, write_manifest,
                     write_poses)
from .events import (BayerPattern, Event, EventStream, PixelEvents,
                     ThresholdConfig, build_stream)
from .geometry import (DEFAULT_EXPOSURE_SAMPLES, Pose, PoseTrack,
                       interpolate_pose, sample_exposure_poses, slerp)
from .imaging import (DEFAULT_LOG_FLOOR, GammaCurve, ImageBuffer,
                      demosaic_bilinear, luma_bt601, mosaic, psnr, ssim,
                      to_gamma, to_linear)
from .integrator import (accumulate, edi_deblur, edi_kernel,
                         edi_prior_images, reconstruct_video,
                         view_window_covered, warp_intensity)
from .simulator import (DEFAULT_THETA, FrameSequence, SimulatorConfig,
                        events_from_frames, render_dataset,
                        synthesize_blur, view_mid_times)

__version__ = "0.1.0"

__all__ = [
    "BayerPattern", "DatasetManifest", "DEFAULT_EXPOSURE_SAMPLES",
    "DEFAULT_LOG_FLOOR", "DEFAULT_THETA", "Event", "EventStream",
    "FormatError", "FrameSequence", "GammaCurve", "ImageBuffer",
    "PixelEvents", "Pose", "PoseTrack", "REAL_CAMERA_DEFAULT_THETA",
    "ResponseCurve", "ResponseFit", "SimulatorConfig", "ThresholdConfig",
    "ThresholdFit", "ViewRecord", "accumulate", "build_stream",
    "consistency_loss", "demosaic_bilinear", "edi_deblur", "edi_kernel",
    "edi_prior_images", "events_from_frames", "fit_response",
    "fit_threshold", "golden_section_minimize", "interpolate_pose",
    "luma_bt601", "mosaic", "psnr", "read_events", "read_image",
    "read_manifest", "read_poses", "reconstruct_video",
    "render_dataset", "sample_exposure_poses", "slerp", "ssim",
    "synthesize_blur", "to_gamma", "to_linear", "view_mid_times",
    "view_window_covered", "warp_intensity", "write_events",
    "write_image", "write_manifest", "write_poses",
]
