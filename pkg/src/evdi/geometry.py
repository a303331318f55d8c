"""Rigid-body poses and exposure-time interpolation.

Poses pair a translation vector with a unit quaternion (w, x, y, z) at a
microsecond timestamp. A PoseTrack interpolates between its samples only;
nothing here extrapolates beyond the recorded span.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# default number of poses sampled across one exposure
DEFAULT_EXPOSURE_SAMPLES = 9

# below this arc angle (radians) slerp falls back to normalized lerp
_NLERP_ANGLE = 1e-6


@dataclass(frozen=True)
class Pose:
    """Translation plus unit rotation quaternion at time t (microseconds)."""

    t: float
    translation: np.ndarray
    rotation: np.ndarray  # quaternion (w, x, y, z), unit norm

    def __post_init__(self):
        tr = np.asarray(self.translation, dtype=np.float64).reshape(3)
        q = np.asarray(self.rotation, dtype=np.float64).reshape(4)
        norm = float(np.linalg.norm(q))
        if norm < 1e-8:
            raise ValueError("rotation quaternion has (near-)zero norm")
        # renormalize meaningful deviations only: dividing an already-unit
        # quaternion by its norm perturbs it by an ulp, which would break
        # value-exact round-trips through the pose CSV format
        if abs(norm - 1.0) > 1e-12:
            q = q / norm
        tr.flags.writeable = False
        q.flags.writeable = False
        object.__setattr__(self, "translation", tr)
        object.__setattr__(self, "rotation", q)


def slerp(q0: np.ndarray, q1: np.ndarray, s: float) -> np.ndarray:
    """Shortest-arc spherical interpolation between two unit quaternions.

    s must lie in [0, 1]. q1 is negated when the pair straddles the double
    cover, so interpolation always takes the short way around. Arcs shorter
    than about 1e-6 rad use normalized lerp to dodge the vanishing sine.
    """
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"interpolation fraction must be in [0, 1], got {s}")
    q0 = np.asarray(q0, dtype=np.float64).reshape(4)
    q1 = np.asarray(q1, dtype=np.float64).reshape(4)
    q0 = q0 / np.linalg.norm(q0)
    q1 = q1 / np.linalg.norm(q1)
    dot = float(np.dot(q0, q1))
    if dot < 0.0:
        q1 = -q1
        dot = -dot
    ang = float(np.arccos(np.clip(dot, -1.0, 1.0)))
    if ang < _NLERP_ANGLE:
        out = (1.0 - s) * q0 + s * q1
    else:
        out = (np.sin((1.0 - s) * ang) * q0 + np.sin(s * ang) * q1) / np.sin(ang)
    return out / np.linalg.norm(out)


class PoseTrack:
    """Time-sorted sequence of poses with strictly increasing timestamps."""

    def __init__(self, poses):
        poses = list(poses)
        if len(poses) < 2:
            raise ValueError(f"pose track needs at least two poses to "
                             f"interpolate, got {len(poses)}")
        times = np.array([p.t for p in poses], dtype=np.float64)
        if np.any(np.diff(times) <= 0):
            bad = int(np.flatnonzero(np.diff(times) <= 0)[0]) + 1
            raise ValueError(
                f"pose timestamps must strictly increase (row {bad})")
        self.poses = tuple(poses)
        self.times = times
        self.times.flags.writeable = False

    def __len__(self):
        return len(self.poses)

    def __iter__(self):
        return iter(self.poses)

    @property
    def t_min(self) -> float:
        return float(self.times[0])

    @property
    def t_max(self) -> float:
        return float(self.times[-1])


def interpolate_pose(track: PoseTrack, t: float) -> Pose:
    """Pose at time t: slerp for rotation, lerp for translation.

    Exact at the track's own samples. Queries outside the recorded span are
    range errors; there is no extrapolation.
    """
    if len(track) < 2 and t != track.t_min:
        raise ValueError("interpolation needs at least 2 poses")
    if t < track.t_min or t > track.t_max:
        raise ValueError(
            f"time {t} outside pose track span [{track.t_min}, {track.t_max}]")
    idx = int(np.searchsorted(track.times, t, side="right")) - 1
    if track.times[idx] == t:
        return track.poses[idx]
    p0, p1 = track.poses[idx], track.poses[idx + 1]
    s = (t - p0.t) / (p1.t - p0.t)
    tr = (1.0 - s) * p0.translation + s * p1.translation
    return Pose(t, tr, slerp(p0.rotation, p1.rotation, s))


def sample_exposure_poses(track: PoseTrack, t_mid: float, tau_us: float,
                          count: int = DEFAULT_EXPOSURE_SAMPLES):
    """Uniformly spaced poses across the exposure [t_mid-tau/2, t_mid+tau/2].

    Endpoints inclusive; odd counts put the middle sample exactly at t_mid.
    count must be >= 2.
    """
    if count < 2:
        raise ValueError(f"need at least 2 exposure samples, got {count}")
    if tau_us <= 0:
        raise ValueError(f"exposure must be positive, got {tau_us}")
    start = t_mid - tau_us / 2.0
    step = tau_us / (count - 1)
    times = [start + k * step for k in range(count)]
    times[-1] = t_mid + tau_us / 2.0  # snap endpoints against roundoff
    if count % 2 == 1:
        times[count // 2] = t_mid
    return [interpolate_pose(track, t) for t in times]
