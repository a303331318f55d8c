"""Event integrals: accumulation, intensity warping, and exact deblurring.

The math in one paragraph: events quantize the log-brightness trajectory of
each pixel, so over any window the sum of signed contrast steps equals the
log-intensity change. Warping a sharp frame across time is multiplication by
exp(accumulated steps). A motion-blurred frame is the exposure-time average
of sharp frames, which factors into the mid-exposure sharp frame times the
exposure average of exp(accumulated steps from mid-exposure), here called
the blur kernel. Dividing the blurry frame by that kernel recovers the
mid-exposure sharp frame, and re-warping it renders any instant inside the
exposure.

The kernel integral is evaluated exactly: within the exposure window the
accumulated step function is piecewise constant with jumps at event times,
so the integral is a finite sum of interval lengths times exponentials. No
sampled quadrature is involved anywhere.

Intensities are linear throughout (gamma-domain buffers are rejected) and
clamped to the log floor only where a log or division happens; warping and
accumulation never clamp, so event-free pixels pass through bit-exactly.
All timestamps are microseconds; windows are half-open [t0, t1).
"""
from __future__ import annotations

import os
from typing import Iterable, List, Optional, Sequence

import numpy as np

from .events import EventStream, ThresholdConfig
from .imaging import LINEAR, ImageBuffer

__all__ = ["accumulate", "warp_intensity", "edi_kernel", "edi_deblur",
           "reconstruct_video", "edi_prior_images"]


def _check_sensor(stream: EventStream, img: ImageBuffer, op: str) -> None:
    if (img.height, img.width) != (stream.height, stream.width):
        raise ValueError(
            f"{op}: image is {img.width}x{img.height} but the stream covers "
            f"a {stream.width}x{stream.height} sensor")


def accumulate(stream: EventStream, t0: float, t1: float,
               thresholds: ThresholdConfig) -> np.ndarray:
    """Per-pixel sum of signed log steps over [t0, t1).

    Returns an (height, width) float64 image in log-intensity units:
    +theta_pos per positive event, -theta_neg per negative event.
    Additive over adjacent windows by construction.
    """
    lo, hi = stream.time_bounds(t0, t1)
    npix = stream.width * stream.height
    if hi == lo:
        return np.zeros((stream.height, stream.width))
    pid = (stream.y[lo:hi].astype(np.int64) * stream.width
           + stream.x[lo:hi].astype(np.int64))
    steps = thresholds.signed_steps(stream.p[lo:hi])
    acc = np.bincount(pid, weights=steps, minlength=npix)
    return acc.reshape(stream.height, stream.width)


def warp_intensity(img: ImageBuffer, stream: EventStream, t_from: float,
                   t_to: float, thresholds: ThresholdConfig) -> ImageBuffer:
    """Transport a linear image from time t_from to t_to along the events.

    Output = input * exp(sum of signed steps between the two times); the
    accumulation window is [t_from, t_to) going forward and the same window
    negated going backward, so warping there and back is an identity up to
    a couple of ulp. A 3-channel image gets the (monochrome) per-pixel
    factor broadcast to all channels; a mosaiced single-channel image is
    warped per pixel, which is per color channel by construction.
    """
    if img.domain != LINEAR:
        raise ValueError("warp_intensity expects a linear-domain image, "
                         f"got {img.domain}")
    _check_sensor(stream, img, "warp_intensity")
    if t_to >= t_from:
        delta = accumulate(stream, t_from, t_to, thresholds)
    else:
        delta = -accumulate(stream, t_to, t_from, thresholds)
    return ImageBuffer(img.data * np.exp(delta)[:, :, np.newaxis], LINEAR)


def edi_kernel(stream: EventStream, t_mid: float, tau_us: float,
               thresholds: ThresholdConfig) -> np.ndarray:
    """Exact per-pixel blur kernel over [t_mid - tau/2, t_mid + tau/2).

    For each pixel the window is partitioned at its event times into
    intervals on which the accumulated step function is constant; the kernel
    is (1/tau) * sum of interval length * exp(level), with levels referenced
    to t_mid (events before t_mid therefore enter with flipped sign).
    Strictly positive everywhere, exactly 1.0 for pixels with no events in
    the window. Cost is O(n log n + pixels) in the window's event count n.
    """
    if tau_us <= 0:
        raise ValueError(f"exposure must be positive, got {tau_us}")
    height, width = stream.height, stream.width
    npix = height * width
    a = t_mid - tau_us / 2.0
    b = t_mid + tau_us / 2.0
    lo, hi = stream.time_bounds(a, b)
    n = hi - lo
    if n == 0:
        return np.ones((height, width))
    t = stream.t[lo:hi].astype(np.float64)
    pid = (stream.y[lo:hi].astype(np.int64) * width
           + stream.x[lo:hi].astype(np.int64))
    steps = thresholds.signed_steps(stream.p[lo:hi])
    order = np.argsort(pid, kind="stable")  # stable: stays time-sorted
    pid_s, t_s, c_s = pid[order], t[order], steps[order]
    # log level after each event, relative to the window start
    csum = np.cumsum(c_s)
    starts = np.flatnonzero(np.r_[True, pid_s[1:] != pid_s[:-1]])
    counts = np.diff(np.r_[starts, n])
    base = np.repeat(np.r_[0.0, csum[starts[1:] - 1]], counts)
    level = csum - base
    # each event opens a segment that runs to the next event or the window end
    nxt = np.empty_like(t_s)
    nxt[:-1] = t_s[1:]
    nxt[starts + counts - 1] = b
    integral = np.bincount(pid_s, weights=(nxt - t_s) * np.exp(level),
                           minlength=npix)
    first = pid_s[starts]
    integral[first] += t_s[starts] - a  # leading segment at level 0
    untouched = np.ones(npix, dtype=bool)
    untouched[first] = False
    integral[untouched] = tau_us  # exp(0) over the whole window, exactly
    # swing the reference point from the window start to t_mid
    mid_level = accumulate(stream, a, t_mid, thresholds).ravel()
    kernel = (integral / tau_us) * np.exp(-mid_level)
    kernel = kernel.reshape(height, width)
    assert np.all(kernel > 0.0), "blur kernel must be strictly positive"
    return kernel


def edi_deblur(blur: ImageBuffer, stream: EventStream, t_mid: float,
               tau_us: float, thresholds: ThresholdConfig) -> ImageBuffer:
    """Recover the mid-exposure sharp frame: blur / kernel, per pixel.

    The blur must be linear-domain and match the sensor size. Pixels with
    no events in the window come back bit-identical (kernel exactly 1).
    3-channel blur with monochrome events divides every channel by the same
    kernel; a mosaiced blur is divided per pixel.
    """
    if blur.domain != LINEAR:
        raise ValueError("edi_deblur expects a linear-domain blur, got "
                         f"{blur.domain}")
    _check_sensor(stream, blur, "edi_deblur")
    kernel = edi_kernel(stream, t_mid, tau_us, thresholds)
    return ImageBuffer(blur.data / kernel[:, :, np.newaxis], LINEAR)


def _query_span(stream: EventStream, t_mid: float, tau_us: float) -> tuple:
    lo = t_mid - tau_us / 2.0
    hi = t_mid + tau_us / 2.0
    if len(stream):
        lo = min(lo, float(stream.t_min))
        hi = max(hi, float(stream.t_max))
    return lo, hi


def reconstruct_video(blur: ImageBuffer, stream: EventStream, t_mid: float,
                      tau_us: float, thresholds: ThresholdConfig,
                      query_ts: Sequence[float]) -> List[ImageBuffer]:
    """Latent sharp frames at the query timestamps.

    Deblurs once at t_mid, then warps the latent to each query time. Query
    timestamps must lie inside the union of the event-stream span and the
    exposure window (an empty stream is a static recording, so the exposure
    window itself remains valid); anything outside raises a range error
    naming the timestamp.
    """
    span_lo, span_hi = _query_span(stream, t_mid, tau_us)
    for q in query_ts:
        if q < span_lo or q > span_hi:
            raise ValueError(
                f"query timestamp {q} outside the covered span "
                f"[{span_lo}, {span_hi}]")
    latent = edi_deblur(blur, stream, t_mid, tau_us, thresholds)
    return [warp_intensity(latent, stream, t_mid, float(q), thresholds)
            for q in query_ts]


def view_window_covered(stream: EventStream, t_mid: float,
                        tau_us: float) -> bool:
    """True when the stream can support deblurring this exposure.

    An empty stream is a static recording and supports every window; a
    nonempty stream must at least intersect the window.
    """
    if len(stream) == 0:
        return True
    a = t_mid - tau_us / 2.0
    b = t_mid + tau_us / 2.0
    return not (b <= stream.t_min or a > stream.t_max)


def edi_prior_images(manifest, out_dir: str,
                     thresholds: Optional[ThresholdConfig] = None,
                     views: Optional[Iterable[int]] = None) -> List[str]:
    """Write one linear-domain deblurred image per view of a dataset.

    For every requested view the blurry frame is deblurred at its
    mid-exposure time and written as ``edi_view_NNNN.pfm`` (linear float)
    under ``out_dir``; filenames depend only on the view index. A view
    whose exposure window the recorded events cannot support raises an
    error naming the view. Returns the written paths in view order.
    """
    from . import dataio  # local import: dataio pulls in cv2

    stream = manifest.load_events()
    thr = thresholds if thresholds is not None else manifest.thresholds()
    tau = float(manifest.exposure_us)
    os.makedirs(out_dir, exist_ok=True)
    indices = list(views) if views is not None else range(len(manifest.views))
    written = []
    for k in indices:
        t_mid = float(manifest.views[k].t_mid_us)
        if not view_window_covered(stream, t_mid, tau):
            raise ValueError(
                f"view {k} (t_mid_us={manifest.views[k].t_mid_us}) has no "
                f"event coverage; recorded span is "
                f"[{stream.t_min}, {stream.t_max}]")
        latent = edi_deblur(manifest.load_blur(k), stream, t_mid, tau, thr)
        path = os.path.join(out_dir, f"edi_view_{k:04d}.pfm")
        dataio.write_image(path, latent)
        written.append(path)
    return written
