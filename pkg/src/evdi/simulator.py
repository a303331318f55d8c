"""Synthetic event generation and blurry/sharp dataset rendering.

Events are generated the way a DVS pixel fires: each pixel keeps a reference
log level, the log-intensity signal is interpolated linearly between frames,
and every full contrast-threshold crossing emits one event whose timestamp
comes from inverse interpolation inside the frame interval. The reference
level moves by exactly one threshold per event, so residuals never exceed a
threshold and event counts are invariant to global intensity scaling (the
log floor must be scaled along).

Crossing counts use floor(delta/theta + 1e-9): a ramp that rises by an exact
multiple of theta emits the full count even when the logs round unluckily.
Timestamps are snapped to integer microseconds with ceil(t - 1e-6), so an
event never precedes its crossing and exact-integer crossings stay put.

With a positive refractory period, a crossing inside the dead time is
dropped but still advances the reference level: tracking continues and no
catch-up burst fires when the dead time ends.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .events import BayerPattern, EventStream, ThresholdConfig
from .imaging import (DEFAULT_LOG_FLOOR, LINEAR, GammaCurve, ImageBuffer,
                      luma_bt601, mosaic, to_gamma)

DEFAULT_THETA = 0.2


class FrameSequence:
    """Linear-domain frames at strictly increasing microsecond timestamps.

    Input order does not matter (frames are sorted by time); duplicate
    timestamps and shape mismatches are errors.
    """

    def __init__(self, times_us: Sequence[int], frames: Sequence[ImageBuffer]):
        if len(times_us) != len(frames):
            raise ValueError(f"{len(times_us)} timestamps for "
                             f"{len(frames)} frames")
        if len(frames) == 0:
            raise ValueError("empty frame sequence")
        times = np.asarray(times_us, dtype=np.int64)
        if np.any(times < 0):
            raise ValueError("negative frame timestamps")
        order = np.argsort(times, kind="stable")
        times = times[order]
        frames = [frames[i] for i in order]
        if np.any(np.diff(times) == 0):
            k = int(np.flatnonzero(np.diff(times) == 0)[0])
            raise ValueError(f"duplicate frame timestamp {int(times[k])}")
        shape0 = frames[0].data.shape
        for i, f in enumerate(frames):
            if f.domain != LINEAR:
                raise ValueError(f"frame {i} is {f.domain}-domain; frames "
                                 "must be linear")
            if f.data.shape != shape0:
                raise ValueError(f"frame {i} shape {f.data.shape} differs "
                                 f"from frame 0 shape {shape0}")
        self.times = times
        self.times.flags.writeable = False
        self.frames = tuple(frames)

    def __len__(self):
        return len(self.frames)

    @property
    def height(self) -> int:
        return self.frames[0].height

    @property
    def width(self) -> int:
        return self.frames[0].width

    @property
    def channels(self) -> int:
        return self.frames[0].channels


@dataclass(frozen=True)
class SimulatorConfig:
    """Event-generation knobs.

    channel_mode "luma" thresholds the BT.601 luma of each frame and yields
    monochrome events; "bayer" thresholds the mosaiced signal so each pixel's
    events belong to its own color channel.
    """

    thresholds: ThresholdConfig = field(
        default_factory=lambda: ThresholdConfig.symmetric(DEFAULT_THETA))
    refractory_us: float = 0.0
    log_floor: float = DEFAULT_LOG_FLOOR
    channel_mode: str = "luma"
    bayer_pattern: BayerPattern = BayerPattern.RGGB

    def __post_init__(self):
        if self.refractory_us < 0:
            raise ValueError(f"refractory must be >= 0, got "
                             f"{self.refractory_us}")
        if not 0.0 < self.log_floor <= 0.1:
            raise ValueError(f"log floor must be in (0, 0.1], got "
                             f"{self.log_floor}")
        if self.channel_mode not in ("luma", "bayer"):
            raise ValueError(f"unknown channel_mode {self.channel_mode!r}")


def _signal_plane(frame: ImageBuffer, config: SimulatorConfig) -> np.ndarray:
    """The (h, w) intensity signal the event pixels actually see."""
    if config.channel_mode == "bayer":
        if frame.channels == 3:
            return mosaic(frame, config.bayer_pattern).plane()
        return frame.plane()  # already mosaiced
    return luma_bt601(frame).plane()


def events_from_frames(seq: FrameSequence,
                       config: SimulatorConfig = SimulatorConfig()
                       ) -> EventStream:
    """Simulate the event stream a sensor would emit while seeing ``seq``.

    Needs at least two frames. Within each frame interval the log signal is
    linear, so a pixel whose level moved by k thresholds emits k events at
    the inverse-interpolated crossing times (all distinct before microsecond
    snapping). Runs pair-by-pair over frames, vectorized over pixels.
    """
    if len(seq) < 2:
        raise ValueError(f"need at least 2 frames to simulate events, "
                         f"got {len(seq)}")
    eps = config.log_floor
    thp = config.thresholds.theta_pos
    thn = config.thresholds.theta_neg
    height, width = seq.height, seq.width

    log_prev = np.log(np.maximum(_signal_plane(seq.frames[0], config), eps))
    l_ref = log_prev.copy()
    chunks: List[Tuple[np.ndarray, ...]] = []
    for k in range(len(seq) - 1):
        log_next = np.log(np.maximum(_signal_plane(seq.frames[k + 1],
                                                   config), eps))
        ta = float(seq.times[k])
        tb = float(seq.times[k + 1])
        n_pos = np.floor((log_next - l_ref) / thp + 1e-9)
        n_neg = np.floor((l_ref - log_next) / thn + 1e-9)
        np.maximum(n_pos, 0.0, out=n_pos)
        np.maximum(n_neg, 0.0, out=n_neg)
        for sign, counts, theta in ((1, n_pos.ravel().astype(np.int64), thp),
                                    (-1, n_neg.ravel().astype(np.int64),
                                     -thn)):
            pix = np.flatnonzero(counts)
            if pix.size == 0:
                continue
            reps = counts[pix]
            pid = np.repeat(pix, reps)
            offs = np.cumsum(reps) - reps
            idx = np.arange(pid.size) - np.repeat(offs, reps) + 1
            levels = l_ref.ravel()[pid] + theta * idx
            la = log_prev.ravel()[pid]
            lb = log_next.ravel()[pid]
            t_star = ta + (tb - ta) * (levels - la) / (lb - la)
            ts = np.ceil(t_star - 1e-6)
            chunks.append((ts, (pid % width), (pid // width),
                           np.full(pid.size, sign, dtype=np.int64)))
        l_ref += thp * n_pos - thn * n_neg
        log_prev = log_next

    if not chunks:
        return EventStream(width, height, np.empty(0, np.uint64),
                           np.empty(0, np.uint16), np.empty(0, np.uint16),
                           np.empty(0, np.int8), _presorted=True)
    t = np.concatenate([c[0] for c in chunks])
    x = np.concatenate([c[1] for c in chunks])
    y = np.concatenate([c[2] for c in chunks])
    p = np.concatenate([c[3] for c in chunks])
    if config.refractory_us > 0:
        t, x, y, p = _apply_refractory(t, x, y, p, width,
                                       config.refractory_us)
    return EventStream.from_arrays(t, x, y, p, width, height)


def _apply_refractory(t, x, y, p, width, dead_us):
    """Drop events that fall inside a pixel's dead time (sequential scan)."""
    pid = y.astype(np.int64) * width + x.astype(np.int64)
    order = np.lexsort((t, pid))
    keep = np.ones(order.size, dtype=bool)
    last_emit = {}
    for j in order:
        q = int(pid[j])
        prev = last_emit.get(q)
        if prev is not None and t[j] - prev < dead_us:
            keep[j] = False
        else:
            last_emit[q] = t[j]
    return t[keep], x[keep], y[keep], p[keep]


def synthesize_blur(seq: FrameSequence, t_mid: float,
                    tau_us: float) -> ImageBuffer:
    """Exposure-average of the frames inside [t_mid - tau/2, t_mid + tau/2).

    The unweighted mean of all frames whose timestamp falls in the half-open
    window, which is the discrete stand-in for the exposure integral. The
    sequence must cover the window: each frame covers [t_k, t_k + dt), so
    the window may extend one frame period past the last timestamp.
    """
    if tau_us <= 0:
        raise ValueError(f"exposure must be positive, got {tau_us}")
    a = t_mid - tau_us / 2.0
    b = t_mid + tau_us / 2.0
    times = seq.times
    last_dt = float(times[-1] - times[-2]) if len(seq) >= 2 else 0.0
    if a < float(times[0]) or b > float(times[-1]) + last_dt:
        raise ValueError(
            f"exposure window [{a}, {b}) not covered by frames spanning "
            f"[{float(times[0])}, {float(times[-1]) + last_dt})")
    sel = np.flatnonzero((times >= a) & (times < b))
    if sel.size == 0:
        raise ValueError(f"no frames inside exposure window [{a}, {b})")
    stack = np.stack([seq.frames[i].data for i in sel])
    return ImageBuffer(stack.mean(axis=0), LINEAR)


def view_mid_times(seq: FrameSequence, tau_us: float,
                   period_us: float) -> List[int]:
    """Mid-exposure times tiling the sequence: t0 + tau/2 + k * period,
    for as long as the exposure window stays covered."""
    mids = []
    t0 = float(seq.times[0])
    last_dt = float(seq.times[-1] - seq.times[-2]) if len(seq) >= 2 else 0.0
    end = float(seq.times[-1]) + last_dt
    k = 0
    while t0 + tau_us / 2.0 + k * period_us + tau_us / 2.0 <= end:
        mids.append(int(round(t0 + tau_us / 2.0 + k * period_us)))
        k += 1
    return mids


def render_dataset(seq: FrameSequence, out_dir: str,
                   config: SimulatorConfig = SimulatorConfig(),
                   exposure_us: int = 40_000,
                   period_us: Optional[int] = None,
                   gamma: GammaCurve = GammaCurve.power(2.2),
                   pose_track=None, bit_depth: int = 16):
    """Render a blurry/sharp/event dataset to ``out_dir``.

    Writes gamma-encoded blurry frames (one per exposure window, tiled at
    ``period_us``, default back-to-back), the sharp frame nearest each
    mid-exposure time as ground truth, the full event stream, the pose
    track when given, and a manifest tying it all together. In bayer mode
    the blurry frames are stored as single-channel mosaics while ground
    truth stays RGB. Fully deterministic; returns the manifest.
    """
    import os

    from . import dataio

    if period_us is None:
        period_us = exposure_us
    if exposure_us <= 0 or period_us <= 0:
        raise ValueError("exposure and period must be positive")
    mids = view_mid_times(seq, float(exposure_us), float(period_us))
    if not mids:
        raise ValueError("sequence too short for a single exposure")
    os.makedirs(out_dir, exist_ok=True)
    os.makedirs(os.path.join(out_dir, "blur"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "sharp"), exist_ok=True)

    stream = events_from_frames(seq, config)
    dataio.write_events(os.path.join(out_dir, "events.evt1"), stream)

    views = []
    for k, t_mid in enumerate(mids):
        blur = synthesize_blur(seq, float(t_mid), float(exposure_us))
        if config.channel_mode == "bayer" and blur.channels == 3:
            blur = mosaic(blur, config.bayer_pattern)
        nearest = int(np.argmin(np.abs(seq.times - t_mid)))
        sharp = seq.frames[nearest]
        blur_rel = f"blur/view_{k:04d}.png"
        sharp_rel = f"sharp/view_{k:04d}.png"
        dataio.write_image(os.path.join(out_dir, blur_rel),
                           to_gamma(blur, gamma), bit_depth=bit_depth)
        dataio.write_image(os.path.join(out_dir, sharp_rel),
                           to_gamma(sharp, gamma), bit_depth=bit_depth)
        views.append(dataio.ViewRecord(t_mid, blur_rel, sharp_rel))

    poses_rel = None
    if pose_track is not None:
        poses_rel = "poses.csv"
        dataio.write_poses(os.path.join(out_dir, poses_rel), pose_track)

    man = dataio.DatasetManifest(
        exposure_us=int(exposure_us),
        theta_pos=config.thresholds.theta_pos,
        theta_neg=config.thresholds.theta_neg,
        gamma=gamma.label(),
        channel_mode="bayer" if config.channel_mode == "bayer" else "mono",
        events="events.evt1",
        views=views,
        bayer_pattern=(config.bayer_pattern.value
                       if config.channel_mode == "bayer" else None),
        poses=poses_rel,
        root=out_dir,
    )
    dataio.write_manifest(os.path.join(out_dir, "manifest.json"), man)
    return man
