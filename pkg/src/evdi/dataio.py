"""File formats: EVT1 event files, PFM/PNG images, pose CSV, dataset manifest.

Binary formats round-trip bit-exactly; text formats round-trip value-exactly
(floats are written with shortest-round-trip precision).

EVT1 layout, all little-endian:
    header (18 bytes): magic "EVT1", version u16 = 1, width u16, height u16,
    event count u64
    records (13 bytes each): t u64, x u16, y u16, p u8 (0 = negative,
    1 = positive)

PFM is the usual float32 format ("Pf" gray, "PF" color), rows bottom-up,
negative scale marking little-endian data; it stores linear intensities.
PNG stores display-encoded (gamma) values at 8 or 16 bits unless a manifest
declares a file linear, in which case it is loaded without any decode.
"""
from __future__ import annotations

import csv
import json
import logging
import os
import struct
from dataclasses import dataclass, field
from typing import List, Optional

import cv2
import numpy as np

from .events import EventStream, ThresholdConfig
from .geometry import Pose, PoseTrack
from .imaging import GAMMA, LINEAR, GammaCurve, ImageBuffer

log = logging.getLogger(__name__)


class FormatError(ValueError):
    """A file does not conform to its format."""


# ---------------------------------------------------------------------------
# events: EVT1 binary and CSV interchange
# ---------------------------------------------------------------------------

_EVT1_MAGIC = b"EVT1"
_EVT1_VERSION = 1
_EVT1_HEADER = struct.Struct("<4sHHHQ")  # magic, version, width, height, count
_EVT1_RECORD = np.dtype([("t", "<u8"), ("x", "<u2"), ("y", "<u2"),
                         ("p", "u1")])
assert _EVT1_RECORD.itemsize == 13


def write_events(path: str, stream: EventStream) -> None:
    """Write a stream as EVT1 binary, or CSV when the path ends in .csv."""
    if str(path).lower().endswith(".csv"):
        with open(path, "w", newline="") as f:
            f.write("t_us,x,y,p\n")
            for i in range(len(stream)):
                f.write(f"{int(stream.t[i])},{int(stream.x[i])},"
                        f"{int(stream.y[i])},{int(stream.p[i])}\n")
        return
    rec = np.empty(len(stream), dtype=_EVT1_RECORD)
    rec["t"] = stream.t
    rec["x"] = stream.x
    rec["y"] = stream.y
    rec["p"] = (stream.p > 0).astype(np.uint8)
    header = _EVT1_HEADER.pack(_EVT1_MAGIC, _EVT1_VERSION, stream.width,
                               stream.height, len(stream))
    with open(path, "wb") as f:
        f.write(header)
        f.write(rec.tobytes())


def read_events(path: str, width: Optional[int] = None,
                height: Optional[int] = None) -> EventStream:
    """Read an event file; format auto-detected from the extension.

    For CSV files the sensor size is not stored, so pass width/height
    (otherwise the tightest bounding box is assumed).
    """
    if str(path).lower().endswith(".csv"):
        return _read_events_csv(path, width, height)
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < _EVT1_HEADER.size:
        raise FormatError(f"{path}: truncated header, {len(blob)} bytes "
                          f"(need {_EVT1_HEADER.size})")
    magic, version, w, h, count = _EVT1_HEADER.unpack_from(blob, 0)
    if magic != _EVT1_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != _EVT1_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    expected = _EVT1_HEADER.size + count * _EVT1_RECORD.itemsize
    if len(blob) != expected:
        raise FormatError(
            f"{path}: expected {expected} bytes for {count} events, file "
            f"ends at byte offset {len(blob)}")
    rec = np.frombuffer(blob, dtype=_EVT1_RECORD, count=count,
                        offset=_EVT1_HEADER.size)
    bad = np.flatnonzero(rec["p"] > 1)
    if bad.size:
        raise FormatError(f"{path}: invalid polarity byte at record "
                          f"{int(bad[0])}")
    p = np.where(rec["p"] == 1, 1, -1).astype(np.int8)
    return EventStream.from_arrays(rec["t"], rec["x"], rec["y"], p, w, h)


def _read_events_csv(path, width, height) -> EventStream:
    rows = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or [c.strip() for c in header] != ["t_us", "x", "y", "p"]:
            raise FormatError(f"{path}: expected header t_us,x,y,p")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                rows.append(tuple(int(v) for v in row))
            except ValueError as e:
                raise FormatError(f"{path}: bad row {lineno}: {e}") from None
    arr = np.array(rows, dtype=np.int64).reshape(-1, 4)
    if width is None:
        width = int(arr[:, 1].max()) + 1 if len(arr) else 1
    if height is None:
        height = int(arr[:, 2].max()) + 1 if len(arr) else 1
    return EventStream.from_arrays(arr[:, 0], arr[:, 1], arr[:, 2],
                                   arr[:, 3], width, height)


# ---------------------------------------------------------------------------
# images: PFM (linear float) and PNG (gamma-encoded integers)
# ---------------------------------------------------------------------------

def write_image(path: str, img: ImageBuffer, bit_depth: int = 16) -> None:
    """Write PFM (float32, linear) or PNG (8/16-bit) depending on extension.

    PFM requires a linear-domain buffer. PNG conventionally stores
    gamma-encoded values; a linear buffer may still be written when a
    manifest will declare the file linear. PNG values are clipped to [0, 1].
    """
    lower = str(path).lower()
    if lower.endswith(".pfm"):
        if img.domain != LINEAR:
            raise ValueError("PFM stores linear intensities; encode-free "
                             "buffers only")
        _write_pfm(path, img)
    elif lower.endswith(".png"):
        if bit_depth not in (8, 16):
            raise FormatError(f"unsupported PNG bit depth {bit_depth}")
        peak = 255 if bit_depth == 8 else 65535
        dtype = np.uint8 if bit_depth == 8 else np.uint16
        q = np.round(np.clip(img.data, 0.0, 1.0) * peak).astype(dtype)
        if img.channels == 3:
            q = q[:, :, ::-1]  # cv2 expects BGR
        else:
            q = q[:, :, 0]
        if not cv2.imwrite(str(path), q):
            raise FormatError(f"could not write {path}")
    else:
        raise FormatError(f"unsupported image extension: {path}")


def read_image(path: str, linear: bool = False) -> ImageBuffer:
    """Read PFM or PNG.

    PFM is always linear. PNG is tagged gamma-domain unless ``linear=True``
    (set from a manifest flag), in which case stored values are taken as
    linear without any decode.
    """
    lower = str(path).lower()
    if lower.endswith(".pfm"):
        return _read_pfm(path)
    if lower.endswith(".png"):
        raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
        if raw is None:
            raise FormatError(f"could not read {path}")
        if raw.dtype == np.uint8:
            peak = 255.0
        elif raw.dtype == np.uint16:
            peak = 65535.0
        else:
            raise FormatError(f"{path}: unsupported bit depth {raw.dtype}")
        if raw.ndim == 3:
            if raw.shape[2] != 3:
                raise FormatError(f"{path}: unsupported channel count "
                                  f"{raw.shape[2]}")
            raw = raw[:, :, ::-1]
        else:
            raw = raw[:, :, np.newaxis]
        data = raw.astype(np.float64) / peak
        return ImageBuffer(data, LINEAR if linear else GAMMA)
    raise FormatError(f"unsupported image extension: {path}")


def _write_pfm(path: str, img: ImageBuffer) -> None:
    color = img.channels == 3
    data = img.data.astype(np.float32)
    if not color:
        data = data[:, :, 0]
    with open(path, "wb") as f:
        f.write(b"PF\n" if color else b"Pf\n")
        f.write(f"{img.width} {img.height}\n".encode())
        f.write(b"-1.0\n")  # negative scale: little-endian
        f.write(np.ascontiguousarray(data[::-1]).tobytes())


def _read_pfm(path: str) -> ImageBuffer:
    with open(path, "rb") as f:
        blob = f.read()

    def next_token(pos):
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        end = pos
        while end < len(blob) and not blob[end:end + 1].isspace():
            end += 1
        if pos == end:
            raise FormatError(f"{path}: truncated PFM header")
        return blob[pos:end], end

    kind, pos = next_token(0)
    if kind not in (b"PF", b"Pf"):
        raise FormatError(f"{path}: bad PFM magic {kind!r}")
    wtok, pos = next_token(pos)
    htok, pos = next_token(pos)
    stok, pos = next_token(pos)
    try:
        w, h, scale = int(wtok), int(htok), float(stok)
    except ValueError:
        raise FormatError(f"{path}: bad PFM header") from None
    channels = 3 if kind == b"PF" else 1
    count = w * h * channels
    dt = np.dtype("<f4" if scale < 0 else ">f4")
    body = blob[pos + 1:]
    if len(body) < count * 4:
        raise FormatError(f"{path}: PFM data truncated at byte offset "
                          f"{len(blob)}")
    data = np.frombuffer(body, dtype=dt, count=count)
    data = data.reshape(h, w, channels)[::-1].astype(np.float64)
    if abs(scale) not in (0.0, 1.0):
        data = data * abs(scale)
    return ImageBuffer(data, LINEAR)


# ---------------------------------------------------------------------------
# poses: CSV with one row per sample
# ---------------------------------------------------------------------------

_POSE_COLUMNS = ["t_us", "tx", "ty", "tz", "qw", "qx", "qy", "qz"]


def write_poses(path: str, track: PoseTrack) -> None:
    with open(path, "w", newline="") as f:
        f.write(",".join(_POSE_COLUMNS) + "\n")
        for pose in track:
            vals = [repr(float(v)) for v in
                    (*pose.translation, *pose.rotation)]
            f.write(f"{int(pose.t)}," + ",".join(vals) + "\n")


def read_poses(path: str) -> PoseTrack:
    """Read a pose CSV; quaternions are normalized on load.

    A quaternion whose norm deviates from 1 by more than 1e-3 triggers a
    warning (the row is still used, normalized). Non-monotonic or duplicate
    timestamps are format errors naming the row.
    """
    poses = []
    prev_t = None
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or [c.strip() for c in header] != _POSE_COLUMNS:
            raise FormatError(f"{path}: expected header "
                              + ",".join(_POSE_COLUMNS))
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 8:
                raise FormatError(f"{path}: row {lineno} has {len(row)} "
                                  f"columns, expected 8")
            try:
                t = int(row[0])
                vals = [float(v) for v in row[1:]]
            except ValueError as e:
                raise FormatError(f"{path}: bad row {lineno}: {e}") from None
            if prev_t is not None and t <= prev_t:
                raise FormatError(
                    f"{path}: timestamps must strictly increase, row "
                    f"{lineno} has t_us={t} after {prev_t}")
            prev_t = t
            q = np.array(vals[3:])
            norm = float(np.linalg.norm(q))
            if norm < 1e-8:
                raise FormatError(f"{path}: zero-norm quaternion at row "
                                  f"{lineno}")
            if abs(norm - 1.0) > 1e-3:
                log.warning("%s: row %d quaternion norm %.6f, normalizing",
                            path, lineno, norm)
            poses.append(Pose(t, np.array(vals[:3]), q))
    return PoseTrack(poses)


# ---------------------------------------------------------------------------
# dataset manifest
# ---------------------------------------------------------------------------

_VIEW_KEYS = ("t_mid_us", "blur", "sharp")
_MANIFEST_KEYS = ("exposure_us", "theta_pos", "theta_neg", "gamma",
                  "channel_mode", "bayer_pattern", "events", "poses",
                  "linear_images", "views")


@dataclass
class ViewRecord:
    """One blurry view: mid-exposure timestamp plus image paths."""

    t_mid_us: int
    blur: str
    sharp: Optional[str] = None
    extra: dict = field(default_factory=dict)


@dataclass
class DatasetManifest:
    """Description of one event/blur dataset on disk.

    Paths are relative to the manifest's directory (``root`` after loading).
    ``extra`` carries unknown top-level keys so that editing a manifest
    written by a newer tool preserves what it does not understand.
    """

    exposure_us: int
    theta_pos: float
    theta_neg: float
    gamma: str
    channel_mode: str  # "mono" | "bayer"
    events: str
    views: List[ViewRecord]
    bayer_pattern: Optional[str] = None
    poses: Optional[str] = None
    linear_images: bool = False
    extra: dict = field(default_factory=dict)
    root: str = "."

    def path(self, rel: str) -> str:
        return os.path.join(self.root, rel)

    def thresholds(self) -> ThresholdConfig:
        return ThresholdConfig(self.theta_pos, self.theta_neg)

    def gamma_curve(self) -> GammaCurve:
        return GammaCurve.parse(self.gamma)

    def load_events(self) -> EventStream:
        return read_events(self.path(self.events))

    def _load_view_image(self, rel: str) -> ImageBuffer:
        img = read_image(self.path(rel), linear=self.linear_images)
        if img.domain == GAMMA:
            from .imaging import to_linear
            img = to_linear(img, self.gamma_curve())
        return img

    def load_blur(self, view: int) -> ImageBuffer:
        """Blur image of one view, decoded to linear."""
        return self._load_view_image(self.views[view].blur)

    def load_sharp(self, view: int) -> ImageBuffer:
        rec = self.views[view]
        if rec.sharp is None:
            raise ValueError(f"view {view} has no sharp ground truth")
        return self._load_view_image(rec.sharp)


def read_manifest(path: str) -> DatasetManifest:
    """Load and validate a dataset manifest.

    Required keys must be present (the error names the first missing one)
    and every referenced file must exist (the error names the path).
    Unknown keys are preserved for round-tripping.
    """
    with open(path) as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise FormatError(f"{path}: not valid JSON: {e}") from None
    root = os.path.dirname(os.path.abspath(path))
    for key in ("exposure_us", "theta_pos", "theta_neg", "gamma",
                "channel_mode", "events", "views"):
        if key not in doc:
            raise FormatError(f"{path}: manifest missing required key "
                              f"'{key}'")
    views = []
    prev = None
    for i, v in enumerate(doc["views"]):
        for key in ("t_mid_us", "blur"):
            if key not in v:
                raise FormatError(f"{path}: view {i} missing required key "
                                  f"'{key}'")
        if prev is not None and v["t_mid_us"] <= prev:
            raise FormatError(f"{path}: view timestamps must strictly "
                              f"increase (view {i})")
        prev = v["t_mid_us"]
        extra = {k: v[k] for k in v if k not in _VIEW_KEYS}
        views.append(ViewRecord(int(v["t_mid_us"]), v["blur"],
                                v.get("sharp"), extra))
    man = DatasetManifest(
        exposure_us=int(doc["exposure_us"]),
        theta_pos=float(doc["theta_pos"]),
        theta_neg=float(doc["theta_neg"]),
        gamma=str(doc["gamma"]),
        channel_mode=str(doc["channel_mode"]),
        events=doc["events"],
        views=views,
        bayer_pattern=doc.get("bayer_pattern"),
        poses=doc.get("poses"),
        linear_images=bool(doc.get("linear_images", False)),
        extra={k: doc[k] for k in doc if k not in _MANIFEST_KEYS},
        root=root,
    )
    if man.exposure_us <= 0:
        raise FormatError(f"{path}: exposure_us must be positive")
    if man.channel_mode not in ("mono", "bayer"):
        raise FormatError(f"{path}: unknown channel_mode "
                          f"{man.channel_mode!r}")
    if man.channel_mode == "bayer" and not man.bayer_pattern:
        raise FormatError(f"{path}: bayer channel_mode needs bayer_pattern")
    refs = [man.events] + ([man.poses] if man.poses else [])
    for v in man.views:
        refs.append(v.blur)
        if v.sharp:
            refs.append(v.sharp)
    for rel in refs:
        if not os.path.exists(os.path.join(root, rel)):
            raise FormatError(f"{path}: referenced file does not exist: "
                              f"{rel}")
    return man


def write_manifest(path: str, man: DatasetManifest) -> None:
    """Write a manifest as JSON with a stable key order."""
    doc = {
        "exposure_us": man.exposure_us,
        "theta_pos": man.theta_pos,
        "theta_neg": man.theta_neg,
        "gamma": man.gamma,
        "channel_mode": man.channel_mode,
        "events": man.events,
    }
    if man.bayer_pattern is not None:
        doc["bayer_pattern"] = man.bayer_pattern
    if man.poses is not None:
        doc["poses"] = man.poses
    if man.linear_images:
        doc["linear_images"] = True
    doc.update(man.extra)
    doc["views"] = []
    for v in man.views:
        rec = {"t_mid_us": v.t_mid_us, "blur": v.blur}
        if v.sharp is not None:
            rec["sharp"] = v.sharp
        rec.update(v.extra)
        doc["views"].append(rec)
    with open(path, "w") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")
