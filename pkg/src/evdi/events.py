"""Event-camera data model.

An event camera reports asynchronous per-pixel brightness changes. Each event
is a tuple (t, x, y, p): a timestamp in integer microseconds, pixel
coordinates, and a polarity of +1 (brightness rose by one contrast step) or
-1 (it fell). This module holds the canonical containers for event data:
a validated, time-sorted, immutable :class:`EventStream`, the per-polarity
contrast thresholds, and the Bayer color-filter layouts used when events are
generated on a mosaiced sensor.

Streams are sorted by (t, y, x) and expose a per-pixel index so that the
events of a single pixel can be fetched in O(1) lookup plus O(k) copy.
All arrays inside a stream are read-only; a stream never changes after
construction and is safe to share across threads.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable, NamedTuple, Sequence, Union

import numpy as np


class Event(NamedTuple):
    """One brightness-change event."""

    t: int
    x: int
    y: int
    p: int


class BayerPattern(Enum):
    """2x2 color-filter tile; value chars name the channel at
    (row, col) = (0,0), (0,1), (1,0), (1,1)."""

    RGGB = "RGGB"
    GRBG = "GRBG"
    GBRG = "GBRG"
    BGGR = "BGGR"

    def channel_of(self, x: int, y: int) -> int:
        """Channel index (0=R, 1=G, 2=B) seen by pixel (x, y)."""
        letter = self.value[(y % 2) * 2 + (x % 2)]
        return "RGB".index(letter)

    def channel_map(self, height: int, width: int) -> np.ndarray:
        """(height, width) uint8 image of per-pixel channel indices."""
        tile = np.array([["RGB".index(c) for c in self.value[:2]],
                         ["RGB".index(c) for c in self.value[2:]]],
                        dtype=np.uint8)
        reps = ((height + 1) // 2, (width + 1) // 2)
        return np.tile(tile, reps)[:height, :width]


@dataclass(frozen=True)
class ThresholdConfig:
    """Per-polarity contrast thresholds in log-intensity units.

    A +1 event stands for a log-brightness step of +theta_pos, a -1 event
    for a step of -theta_neg. Both must be positive and finite.
    """

    theta_pos: float
    theta_neg: float

    def __post_init__(self):
        for name in ("theta_pos", "theta_neg"):
            v = getattr(self, name)
            if not np.isfinite(v) or v <= 0.0:
                raise ValueError(f"{name} must be positive and finite, got {v}")

    @classmethod
    def symmetric(cls, theta: float) -> "ThresholdConfig":
        return cls(theta, theta)

    def signed_steps(self, p: np.ndarray) -> np.ndarray:
        """Signed log step per event: +theta_pos for p>0, -theta_neg for p<0."""
        return np.where(np.asarray(p) > 0, self.theta_pos, -self.theta_neg)


@dataclass(frozen=True)
class PixelEvents:
    """Time-ordered events of a single pixel (a view into a stream)."""

    x: int
    y: int
    t: np.ndarray
    p: np.ndarray
    indices: np.ndarray  # positions of these events in the parent stream

    def __len__(self) -> int:
        return self.t.size

    def __iter__(self):
        for i in range(self.t.size):
            yield Event(int(self.t[i]), self.x, self.y, int(self.p[i]))


def _fmt_indices(bad: np.ndarray, limit: int = 8) -> str:
    head = ", ".join(str(int(i)) for i in bad[:limit])
    return head + (", ..." if bad.size > limit else "")


class EventStream:
    """Immutable, time-sorted event recording for one sensor.

    Events are kept as parallel arrays (t uint64, x uint16, y uint16, p int8)
    sorted by (t, y, x). Use :func:`build_stream` or
    :meth:`EventStream.from_arrays` to construct one from raw, possibly
    unsorted data; both validate bounds and polarities.
    """

    __slots__ = ("width", "height", "t", "x", "y", "p",
                 "_pix_ptr", "_pix_order")

    def __init__(self, width, height, t, x, y, p, _presorted=False):
        if width <= 0 or height <= 0:
            raise ValueError(f"sensor size must be positive, got {width}x{height}")
        self.width = int(width)
        self.height = int(height)
        t = np.ascontiguousarray(t, dtype=np.uint64)
        x = np.ascontiguousarray(x, dtype=np.uint16)
        y = np.ascontiguousarray(y, dtype=np.uint16)
        p = np.ascontiguousarray(p, dtype=np.int8)
        if not (t.shape == x.shape == y.shape == p.shape) or t.ndim != 1:
            raise ValueError("t, x, y, p must be 1-D arrays of equal length")
        if not _presorted:
            order = np.lexsort((x, y, t))
            t, x, y, p = t[order], x[order], y[order], p[order]
        for arr in (t, x, y, p):
            arr.flags.writeable = False
        self.t, self.x, self.y, self.p = t, x, y, p
        # per-pixel index: pixel-major event positions plus offsets, so that
        # pixel_events() is O(1) lookup + O(k) copy
        pid = y.astype(np.int64) * self.width + x.astype(np.int64)
        order = np.argsort(pid, kind="stable")  # stable keeps time order
        ptr = np.zeros(self.width * self.height + 1, dtype=np.int64)
        np.cumsum(np.bincount(pid, minlength=self.width * self.height),
                  out=ptr[1:])
        order.flags.writeable = False
        ptr.flags.writeable = False
        self._pix_order = order
        self._pix_ptr = ptr

    # -- construction ------------------------------------------------------

    @classmethod
    def from_arrays(cls, t, x, y, p, width, height) -> "EventStream":
        """Validate and sort raw event arrays into a stream."""
        t = np.asarray(t)
        x = np.asarray(x)
        y = np.asarray(y)
        p = np.asarray(p)
        for name, arr in (("t", t), ("x", x), ("y", y), ("p", p)):
            if arr.dtype.kind == "f":
                bad = np.flatnonzero(arr != np.floor(arr))
                if bad.size:
                    raise ValueError(f"{name} must be integer-valued; "
                                     f"offending indices {_fmt_indices(bad)}")
        if t.size and t.dtype.kind != "u" and np.any(t < 0):
            bad = np.flatnonzero(t < 0)
            raise ValueError(
                f"negative timestamps at indices {_fmt_indices(bad)}")
        xi = x.astype(np.int64)
        yi = y.astype(np.int64)
        for name, arr, bound in (("x", xi, width), ("y", yi, height)):
            bad = np.flatnonzero((arr < 0) | (arr >= bound))
            if bad.size:
                raise ValueError(
                    f"{bad.size} event(s) with {name} outside [0, {bound}) "
                    f"at indices {_fmt_indices(bad)}")
        pi = p.astype(np.int64)
        bad = np.flatnonzero((pi != 1) & (pi != -1))
        if bad.size:
            raise ValueError(
                f"polarity must be +1 or -1; offending indices {_fmt_indices(bad)}")
        return cls(width, height, t, x, y, p)

    # -- sequence protocol ---------------------------------------------------

    def __len__(self) -> int:
        return self.t.size

    def __getitem__(self, i: int) -> Event:
        return Event(int(self.t[i]), int(self.x[i]), int(self.y[i]),
                     int(self.p[i]))

    def __iter__(self):
        for i in range(self.t.size):
            yield self[i]

    def __repr__(self):
        return (f"EventStream({self.width}x{self.height}, "
                f"{self.t.size} events)")

    # -- queries -------------------------------------------------------------

    @property
    def t_min(self) -> int:
        if self.t.size == 0:
            raise ValueError("empty stream has no time span")
        return int(self.t[0])

    @property
    def t_max(self) -> int:
        if self.t.size == 0:
            raise ValueError("empty stream has no time span")
        return int(self.t[-1])

    def _lower_index(self, q: float) -> int:
        # first index with t >= q; integer timestamps make ceil(q) exact,
        # which sidesteps uint64/float comparison pitfalls
        if q <= 0:
            return 0
        return int(np.searchsorted(self.t, np.uint64(np.ceil(q)), side="left"))

    def time_bounds(self, t0: float, t1: float) -> tuple:
        """Index range [lo, hi) of events with t0 <= t < t1."""
        if t0 > t1:
            raise ValueError(f"bad window: t0={t0} > t1={t1}")
        return self._lower_index(t0), self._lower_index(t1)

    def slice(self, t0: float, t1: float) -> "EventStream":
        """Sub-stream of events with t0 <= t < t1 (half-open window)."""
        lo, hi = self.time_bounds(t0, t1)
        return EventStream(self.width, self.height, self.t[lo:hi],
                           self.x[lo:hi], self.y[lo:hi], self.p[lo:hi],
                           _presorted=True)

    def pixel_events(self, x: int, y: int) -> PixelEvents:
        """All events of pixel (x, y), in time order."""
        if not (0 <= x < self.width and 0 <= y < self.height):
            raise ValueError(
                f"pixel ({x}, {y}) outside {self.width}x{self.height} sensor")
        pid = y * self.width + x
        idx = self._pix_order[self._pix_ptr[pid]:self._pix_ptr[pid + 1]]
        return PixelEvents(x, y, self.t[idx], self.p[idx], idx)


RawEvents = Union[np.ndarray, Iterable[Sequence]]


def build_stream(raw: RawEvents, width: int, height: int) -> EventStream:
    """Build a validated stream from raw events.

    Parameters
    ----------
    raw : array_like or iterable of (t, x, y, p)
        Either an (N, 4) array-like or any iterable of 4-tuples. Events may
        arrive unsorted; they are sorted by (t, y, x) with ties broken
        row-major.
    width, height : int
        Sensor size. Any coordinate outside [0, width) x [0, height) is a
        hard error listing the offending input indices, as is any polarity
        other than +1/-1.
    """
    if isinstance(raw, np.ndarray):
        arr = raw
    else:
        arr = np.array([tuple(e) for e in raw], dtype=np.float64)
    if arr.size == 0:
        arr = arr.reshape(0, 4)
    if arr.ndim != 2 or arr.shape[1] != 4:
        raise ValueError(f"raw events must be (N, 4), got shape {arr.shape}")
    return EventStream.from_arrays(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3],
                                   width, height)
