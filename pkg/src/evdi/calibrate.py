"""Contrast-threshold and sensor-response calibration from blurry views.

The exposure identity alone cannot identify the threshold: deblurring a
single frame with the wrong theta still reproduces the same blurry input
when re-averaged, because the kernel and the warp share the error. What
does break under a wrong theta is agreement ACROSS views: the latent
deblurred at one mid-exposure time, warped forward through the events to
the next mid-exposure time, stops matching the latent deblurred there.
``consistency_loss`` measures that disagreement and is the objective for
both calibrations here.

The loss compares log intensities (floored at ``log_floor``), which makes
it invariant to a global intensity rescale of the inputs; a plain linear
MSE would quietly reweight bright scenes over dim ones.

``REAL_CAMERA_DEFAULT_THETA`` is the conventional hand-tuned contrast
threshold (0.25) that recordings fall back on when no calibration data is
available; fitting on actual footage routinely lands 10 to 40 percent away
from it, which is exactly why ``fit_threshold`` exists.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize_scalar

from .events import BayerPattern, EventStream, ThresholdConfig
from .imaging import DEFAULT_LOG_FLOOR, ImageBuffer
from .integrator import accumulate, edi_deblur, view_window_covered

REAL_CAMERA_DEFAULT_THETA = 0.25

DEFAULT_KNOTS = 8
_GOLDEN_INV = (np.sqrt(5.0) - 1.0) / 2.0

# Per-sample weights in bayer mode: green pixels are twice as common, so
# halving their weight gives the three channels equal total influence.
_BAYER_WEIGHTS = {0: 0.4, 1: 0.2, 2: 0.4}


def _as_thresholds(theta) -> ThresholdConfig:
    if isinstance(theta, ThresholdConfig):
        return theta
    return ThresholdConfig.symmetric(float(theta))


def _check_gap(stream: EventStream, a: float, b: float) -> None:
    if len(stream) == 0:
        return
    if b <= float(stream.t_min) or a > float(stream.t_max):
        raise ValueError(
            f"no event coverage for the gap [{a}, {b}); events span "
            f"[{stream.t_min}, {stream.t_max}]")


def _latents(blurs: Sequence[ImageBuffer], t_mids: Sequence[float],
             exposure_us: float, stream: EventStream,
             thresholds: ThresholdConfig) -> List[ImageBuffer]:
    out = []
    for blur, t_mid in zip(blurs, t_mids):
        if not view_window_covered(stream, float(t_mid), exposure_us):
            raise ValueError(f"no event coverage for the exposure window "
                             f"around t_mid={t_mid}")
        out.append(edi_deblur(blur, stream, float(t_mid), exposure_us,
                              thresholds))
    return out


def consistency_loss(blurs: Sequence[ImageBuffer],
                     t_mids: Sequence[float],
                     exposure_us: float,
                     stream: EventStream,
                     theta,
                     log_floor: float = DEFAULT_LOG_FLOOR) -> float:
    """Cross-view disagreement of event-deblurred latents under ``theta``.

    For each adjacent pair of views the first latent is warped forward to
    the second mid-exposure time through the events and compared with the
    latent deblurred there, as mean squared difference of floored log
    intensities. Returns the mean over pairs. Zero (to rounding) when the
    threshold matches the data; a static scene with no events gives an
    exact zero at any theta.
    """
    if len(blurs) != len(t_mids):
        raise ValueError(f"{len(blurs)} images for {len(t_mids)} "
                         "mid-exposure times")
    if len(blurs) < 2:
        raise ValueError(f"need at least 2 views to compare, got "
                         f"{len(blurs)}")
    mids = [float(t) for t in t_mids]
    if any(b <= a for a, b in zip(mids, mids[1:])):
        raise ValueError("mid-exposure times must be strictly increasing")
    thr = _as_thresholds(theta)
    for a, b in zip(mids, mids[1:]):
        _check_gap(stream, a, b)
    latents = _latents(blurs, mids, exposure_us, stream, thr)
    total = 0.0
    for i in range(len(latents) - 1):
        delta = accumulate(stream, mids[i], mids[i + 1], thr)
        pred = latents[i].data * np.exp(delta)[:, :, None]
        logp = np.log(np.maximum(pred, log_floor))
        logt = np.log(np.maximum(latents[i + 1].data, log_floor))
        total += float(np.mean((logp - logt) ** 2))
    return total / (len(latents) - 1)


def golden_section_minimize(fn: Callable[[float], float], lo: float,
                            hi: float, rel_width: float = 1e-3,
                            trace: Optional[list] = None
                            ) -> Tuple[float, float, List[float]]:
    """Golden-section search for a scalar minimum on [lo, hi].

    Shrinks the bracket by the inverse golden ratio per step until its
    width falls below ``rel_width`` times the initial width. Appends
    (x, fn(x)) pairs to ``trace`` when given. Returns (x_best, f_best,
    bracket_widths), widths recorded after every shrink.
    """
    if not hi > lo:
        raise ValueError(f"invalid bracket [{lo}, {hi}]")
    span0 = hi - lo
    widths = []

    def ev(x):
        f = fn(x)
        if trace is not None:
            trace.append((x, f))
        return f

    c = hi - _GOLDEN_INV * (hi - lo)
    d = lo + _GOLDEN_INV * (hi - lo)
    fc, fd = ev(c), ev(d)
    while (hi - lo) > rel_width * span0:
        if fc <= fd:
            hi, d, fd = d, c, fc
            c = hi - _GOLDEN_INV * (hi - lo)
            fc = ev(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + _GOLDEN_INV * (hi - lo)
            fd = ev(d)
        widths.append(hi - lo)
    x = c if fc <= fd else d
    f = min(fc, fd)
    return x, f, widths


@dataclass
class ThresholdFit:
    """Result of a symmetric contrast-threshold calibration."""

    theta: float
    loss: float
    trace: List[Tuple[float, float]]
    identifiable: bool
    evaluations: int


def fit_threshold(blurs: Sequence[ImageBuffer], t_mids: Sequence[float],
                  exposure_us: float, stream: EventStream,
                  bounds: Tuple[float, float] = (0.05, 1.0),
                  grid: int = 8, rel_width: float = 1e-3,
                  log_floor: float = DEFAULT_LOG_FLOOR) -> ThresholdFit:
    """Fit a symmetric contrast threshold by minimizing the cross-view loss.

    A coarse grid over ``bounds`` brackets the minimum, then golden-section
    search refines it to ``rel_width`` of the bracket. When the loss is
    flat over the grid (static scene, no events) the threshold is not
    identifiable; the midpoint is returned and flagged.
    """
    lo, hi = bounds
    if not 0.0 < lo < hi:
        raise ValueError(f"invalid threshold bounds ({lo}, {hi})")
    trace: List[Tuple[float, float]] = []

    def objective(theta: float) -> float:
        return consistency_loss(blurs, t_mids, exposure_us, stream, theta,
                                log_floor)

    xs = np.linspace(lo, hi, grid)
    fs = []
    for xg in xs:
        fg = objective(float(xg))
        trace.append((float(xg), fg))
        fs.append(fg)
    fs = np.asarray(fs)
    spread = float(fs.max() - fs.min())
    if spread <= 1e-12 * max(1.0, float(np.abs(fs).max())):
        mid = 0.5 * (lo + hi)
        return ThresholdFit(theta=mid, loss=float(fs.min()), trace=trace,
                            identifiable=False, evaluations=len(trace))
    k = int(np.argmin(fs))
    b_lo = float(xs[max(k - 1, 0)])
    b_hi = float(xs[min(k + 1, grid - 1)])
    x, f, _ = golden_section_minimize(objective, b_lo, b_hi,
                                      rel_width=rel_width, trace=trace)
    if fs[k] < f:
        x, f = float(xs[k]), float(fs[k])
    return ThresholdFit(theta=float(x), loss=float(f), trace=trace,
                        identifiable=True, evaluations=len(trace))


class ResponseCurve:
    """Monotone piecewise-linear intensity response on [floor, 1].

    Knot positions are fixed (uniform); knot values are nondecreasing with
    the endpoints pinned to the identity, so the curve can only bend the
    interior of the range. Evaluation clamps the input into the domain.
    """

    def __init__(self, knots_x: np.ndarray, knots_y: np.ndarray):
        x = np.asarray(knots_x, dtype=np.float64)
        y = np.asarray(knots_y, dtype=np.float64)
        if x.ndim != 1 or x.shape != y.shape or x.size < 2:
            raise ValueError("knot arrays must be equal-length 1-d, >= 2")
        if np.any(np.diff(x) <= 0):
            raise ValueError("knot positions must be strictly increasing")
        if np.any(np.diff(y) < 0):
            raise ValueError("knot values must be nondecreasing")
        self.x = x
        self.y = y
        self.x.flags.writeable = False
        self.y.flags.writeable = False

    @classmethod
    def identity(cls, floor: float = DEFAULT_LOG_FLOOR,
                 knots: int = DEFAULT_KNOTS) -> "ResponseCurve":
        x = np.linspace(floor, 1.0, knots)
        return cls(x, x.copy())

    def __call__(self, v):
        v = np.clip(np.asarray(v, dtype=np.float64), self.x[0], self.x[-1])
        return np.interp(v, self.x, self.y)

    def is_identity(self, atol: float = 1e-12) -> bool:
        return bool(np.allclose(self.x, self.y, atol=atol))


def _pav(y: np.ndarray) -> np.ndarray:
    """Pool-adjacent-violators projection onto nondecreasing sequences."""
    vals: List[float] = []
    wts: List[int] = []
    for v in y:
        vals.append(float(v))
        wts.append(1)
        while len(vals) > 1 and vals[-2] > vals[-1]:
            w = wts[-2] + wts[-1]
            vals[-2] = (vals[-2] * wts[-2] + vals[-1] * wts[-1]) / w
            wts[-2] = w
            vals.pop()
            wts.pop()
    out = np.empty(y.size)
    i = 0
    for v, w in zip(vals, wts):
        out[i:i + w] = v
        i += w
    return out


@dataclass
class ResponseFit:
    """Result of a per-polarity response-curve calibration."""

    curve_pos: ResponseCurve
    curve_neg: ResponseCurve
    loss_initial: float
    loss_final: float
    samples_pos: int
    samples_neg: int
    sweeps: int


def _response_samples(latents: Sequence[ImageBuffer], mids: Sequence[float],
                      stream: EventStream, thresholds: ThresholdConfig,
                      channel_weight: Optional[np.ndarray]):
    """Per-pixel (i0, i1, e, w) rows for every adjacent pair, split later
    by the sign of the accumulated step e; zero-step pixels carry no
    information about the response and are dropped."""
    rows_i0, rows_i1, rows_e, rows_w = [], [], [], []
    for i in range(len(latents) - 1):
        e = accumulate(stream, mids[i], mids[i + 1], thresholds).ravel()
        live = e != 0.0
        if not np.any(live):
            continue
        i0 = latents[i].plane().ravel()[live]
        i1 = latents[i + 1].plane().ravel()[live]
        rows_i0.append(i0)
        rows_i1.append(i1)
        rows_e.append(e[live])
        if channel_weight is None:
            rows_w.append(np.ones(i0.size))
        else:
            rows_w.append(channel_weight.ravel()[live])
    if not rows_e:
        return (np.empty(0),) * 4
    return (np.concatenate(rows_i0), np.concatenate(rows_i1),
            np.concatenate(rows_e), np.concatenate(rows_w))


def _weighted_residual_loss(y: np.ndarray, x: np.ndarray, i0, i1, e, w,
                            log_floor: float) -> float:
    c0 = np.interp(i0, x, y)
    c1 = np.interp(i1, x, y)
    r = (np.log(np.maximum(c1, log_floor))
         - np.log(np.maximum(c0, log_floor)) - e)
    return float(np.sum(w * r * r) / np.sum(w))


def _fit_one_curve(i0, i1, e, w, floor: float, knots: int,
                   max_sweeps: int, log_floor: float
                   ) -> Tuple[ResponseCurve, float, float, int]:
    x = np.linspace(floor, 1.0, knots)
    y = x.copy()
    i0c = np.clip(i0, floor, 1.0)
    i1c = np.clip(i1, floor, 1.0)
    loss0 = _weighted_residual_loss(y, x, i0c, i1c, e, w, log_floor)
    y_best = y.copy()
    loss_best = loss0
    # a knot with no samples in its two segments sees a constant loss;
    # leave it where it is instead of letting the optimizer park it
    support = np.zeros(knots, dtype=bool)
    for k in range(1, knots - 1):
        in_seg = ((i0c > x[k - 1]) & (i0c < x[k + 1])) | \
                 ((i1c > x[k - 1]) & (i1c < x[k + 1]))
        support[k] = bool(np.any(in_seg))
    delta = 1e-6 * (1.0 - floor)
    sweeps = 0
    for sweep in range(max_sweeps):
        sweeps = sweep + 1
        improved_any = False
        for k in range(1, knots - 1):
            if not support[k]:
                continue
            lo = y[k - 1] + delta
            hi = y[k + 1] - delta
            if not hi > lo:
                continue

            def f1(v, k=k):
                yt = y.copy()
                yt[k] = v
                return _weighted_residual_loss(yt, x, i0c, i1c, e, w,
                                               log_floor)

            res = minimize_scalar(f1, bounds=(lo, hi), method="bounded",
                                  options={"xatol": 1e-6})
            if res.fun < _weighted_residual_loss(y, x, i0c, i1c, e, w,
                                                 log_floor) - 1e-15:
                y[k] = float(res.x)
                improved_any = True
        y = _pav(y)
        y = np.clip(y, floor, 1.0)
        y[0] = floor
        y[-1] = 1.0
        y = np.maximum.accumulate(y)
        loss = _weighted_residual_loss(y, x, i0c, i1c, e, w, log_floor)
        if loss < loss_best:
            if loss_best - loss < 1e-8:
                loss_best = loss
                y_best = y.copy()
                break
            loss_best = loss
            y_best = y.copy()
        elif not improved_any:
            break
    return ResponseCurve(x, y_best), loss0, loss_best, sweeps


def fit_response(latents: Sequence[ImageBuffer], t_mids: Sequence[float],
                 stream: EventStream,
                 thresholds, knots: int = DEFAULT_KNOTS,
                 floor: float = DEFAULT_LOG_FLOOR,
                 max_samples: int = 50_000, seed: int = 0,
                 max_sweeps: int = 200,
                 channel_map: Optional[np.ndarray] = None,
                 log_floor: float = DEFAULT_LOG_FLOOR) -> ResponseFit:
    """Fit per-polarity monotone response curves to cross-view residuals.

    ``latents`` are reference intensity images at the times ``t_mids``
    (sharp ground-truth views of a dataset). For every pixel whose
    accumulated log step e between two adjacent reference times is
    nonzero, the model says log c(I1) - log c(I0) = e; the curve c is
    fit separately for pixels with rising (e > 0) and falling (e < 0)
    accumulation, by bounded coordinate descent on the interior knots
    with an isotonic projection after each sweep. The returned curves
    never fit worse than identity.

    The references must be independent of the event stream: a latent
    recovered from a blurry frame via the events themselves inherits
    whatever distortion the event pixels apply, so the residuals it
    yields are minimized by the identity curve and the fit is blind.
    Sharp frames measured through the ordinary imaging path carry the
    undistorted intensities the residual needs.

    When there are more candidate pixels than ``max_samples`` a
    deterministic stride with a seeded offset thins them. ``channel_map``
    (mosaic channel per pixel) enables color-balanced weighting for
    single-channel mosaic latents. ``max_sweeps=0`` returns identity
    curves untouched.
    """
    thr = _as_thresholds(thresholds)
    if len(latents) < 2:
        raise ValueError(f"need at least 2 views, got {len(latents)}")
    if len(latents) != len(t_mids):
        raise ValueError(f"{len(latents)} latents but {len(t_mids)} "
                         f"timestamps")
    mids = [float(t) for t in t_mids]
    for a, b in zip(mids, mids[1:]):
        if not b > a:
            raise ValueError(f"view times must be strictly increasing, "
                             f"got {a} then {b}")
    weight = None
    if channel_map is not None:
        weight = np.vectorize(_BAYER_WEIGHTS.__getitem__)(
            channel_map).astype(np.float64)
    i0, i1, e, w = _response_samples(latents, mids, stream, thr, weight)
    if e.size > max_samples:
        stride = int(np.ceil(e.size / max_samples))
        offset = int(np.random.default_rng(seed).integers(0, stride))
        sel = slice(offset, None, stride)
        i0, i1, e, w = i0[sel], i1[sel], e[sel], w[sel]

    fits = {}
    counts = {}
    losses0 = {}
    losses1 = {}
    sweeps_total = 0
    for label, mask in (("pos", e > 0), ("neg", e < 0)):
        n = int(np.count_nonzero(mask))
        counts[label] = n
        if n < 10 * knots:
            raise ValueError(
                f"only {n} {label}-polarity residual samples; need at "
                f"least {10 * knots} to fit {knots} knots")
        if max_sweeps == 0:
            curve = ResponseCurve.identity(floor, knots)
            l0 = _weighted_residual_loss(curve.y, curve.x,
                                         np.clip(i0[mask], floor, 1.0),
                                         np.clip(i1[mask], floor, 1.0),
                                         e[mask], w[mask], log_floor)
            fits[label], losses0[label], losses1[label] = curve, l0, l0
            continue
        curve, l0, l1, sw = _fit_one_curve(i0[mask], i1[mask], e[mask],
                                           w[mask], floor, knots,
                                           max_sweeps, log_floor)
        fits[label], losses0[label], losses1[label] = curve, l0, l1
        sweeps_total += sw

    n_tot = counts["pos"] + counts["neg"]
    loss_init = (losses0["pos"] * counts["pos"]
                 + losses0["neg"] * counts["neg"]) / n_tot
    loss_final = (losses1["pos"] * counts["pos"]
                  + losses1["neg"] * counts["neg"]) / n_tot
    return ResponseFit(curve_pos=fits["pos"], curve_neg=fits["neg"],
                       loss_initial=loss_init, loss_final=loss_final,
                       samples_pos=counts["pos"],
                       samples_neg=counts["neg"], sweeps=sweeps_total)
