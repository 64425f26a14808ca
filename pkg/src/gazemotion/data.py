"""Skeletons, motion samples, windows and the GMDS/CSV ingestion paths."""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

GMDS_MAGIC = b"GMDS"
GMDS_VERSION = 1
GAZE_TOL = 1e-4


class FormatError(ValueError):
    """Raised for malformed GMDS/GMDP containers or CSV exports."""


class InvariantError(ValueError):
    """Raised when a sample violates a data invariant (shape, finiteness, unit gaze)."""


@dataclass(frozen=True)
class Skeleton:
    joint_names: tuple
    fps: float = 30.0
    bones: tuple = ()
    root: str | None = None
    neck: str | None = None
    head: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "joint_names", tuple(self.joint_names))
        object.__setattr__(self, "bones", tuple(tuple(b) for b in self.bones))
        if len(self.joint_names) < 1:
            raise InvariantError("skeleton needs at least one joint")
        if len(set(self.joint_names)) != len(self.joint_names):
            raise InvariantError("duplicate joint names")
        if not self.fps > 0:
            raise InvariantError("fps must be positive")
        for name in (self.root, self.neck, self.head, *(n for b in self.bones for n in b)):
            if name is not None and name not in self.joint_names:
                raise InvariantError(f"unknown joint {name!r}")

    @property
    def joint_count(self) -> int:
        return len(self.joint_names)

    def index(self, name: str) -> int:
        return self.joint_names.index(name)

    @property
    def root_index(self) -> int:
        return self.index(self.root) if self.root else 0

    def bone_indices(self) -> list[tuple[int, int]]:
        return [(self.index(a), self.index(b)) for a, b in self.bones]


MOGAZE_JOINTS = (
    "base", "pelvis", "torso", "neck", "head",
    "linnerShoulder", "lShoulder", "lElbow", "lWrist",
    "rinnerShoulder", "rShoulder", "rElbow", "rWrist",
    "lHip", "lKnee", "lAnkle", "lToe",
    "rHip", "rKnee", "rAnkle", "rToe",
)
MOGAZE_BONES = (
    ("base", "pelvis"), ("pelvis", "torso"), ("torso", "neck"), ("neck", "head"),
    ("torso", "linnerShoulder"), ("linnerShoulder", "lShoulder"), ("lShoulder", "lElbow"), ("lElbow", "lWrist"),
    ("torso", "rinnerShoulder"), ("rinnerShoulder", "rShoulder"), ("rShoulder", "rElbow"), ("rElbow", "rWrist"),
    ("base", "lHip"), ("lHip", "lKnee"), ("lKnee", "lAnkle"), ("lAnkle", "lToe"),
    ("base", "rHip"), ("rHip", "rKnee"), ("rKnee", "rAnkle"), ("rAnkle", "rToe"),
)

# first 23 SMPL-X body joints
GIMO_JOINTS = (
    "pelvis", "left_hip", "right_hip", "spine1", "left_knee", "right_knee", "spine2",
    "left_ankle", "right_ankle", "spine3", "left_foot", "right_foot", "neck",
    "left_collar", "right_collar", "head", "left_shoulder", "right_shoulder",
    "left_elbow", "right_elbow", "left_wrist", "right_wrist", "jaw",
)
_GIMO_PARENTS = (-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 15)
GIMO_BONES = tuple((GIMO_JOINTS[p], GIMO_JOINTS[i]) for i, p in enumerate(_GIMO_PARENTS) if p >= 0)

STICK8_JOINTS = (
    "pelvis", "spine", "neck", "head",
    "left_hand", "right_hand", "left_foot", "right_foot",
)
STICK8_BONES = (
    ("pelvis", "spine"), ("spine", "neck"), ("neck", "head"),
    ("neck", "left_hand"), ("neck", "right_hand"),
    ("pelvis", "left_foot"), ("pelvis", "right_foot"),
)


def mogaze_skeleton(fps: float = 30.0) -> Skeleton:
    return Skeleton(MOGAZE_JOINTS, fps, MOGAZE_BONES, root="base", neck="neck", head="head")


def gimo_skeleton(fps: float = 30.0) -> Skeleton:
    return Skeleton(GIMO_JOINTS, fps, GIMO_BONES, root="pelvis", neck="neck", head="head")


def stick8_skeleton(fps: float = 30.0) -> Skeleton:
    """Small 8-joint figure used for fast desk-scale experiments."""
    return Skeleton(STICK8_JOINTS, fps, STICK8_BONES, root="pelvis", neck="neck", head="head")


PRESETS = {"mogaze": mogaze_skeleton, "gimo": gimo_skeleton, "stick8": stick8_skeleton}


def preset_skeleton(name: str, fps: float = 30.0) -> Skeleton:
    try:
        return PRESETS[name](fps)
    except KeyError:
        raise InvariantError(f"unknown skeleton preset {name!r}; choose from {sorted(PRESETS)}") from None


def skeleton_from_names(joint_names, fps: float = 30.0) -> Skeleton:
    """Rebuild a skeleton from bare joint names, recovering bones/roles when they match a preset."""
    names = tuple(joint_names)
    for factory in PRESETS.values():
        sk = factory(fps)
        if sk.joint_names == names:
            return sk
    return Skeleton(names, fps)


def skeleton_to_dict(sk: Skeleton) -> dict:
    return {
        "joint_names": list(sk.joint_names), "fps": sk.fps, "bones": [list(b) for b in sk.bones],
        "root": sk.root, "neck": sk.neck, "head": sk.head,
    }


def skeleton_from_dict(d: dict) -> Skeleton:
    return Skeleton(tuple(d["joint_names"]), float(d["fps"]), tuple(map(tuple, d.get("bones", ()))),
                    d.get("root"), d.get("neck"), d.get("head"))


def _check_arrays(skeleton: Skeleton, poses: np.ndarray, gaze: np.ndarray):
    if poses.ndim != 3 or poses.shape[1:] != (skeleton.joint_count, 3):
        raise InvariantError(f"poses must be [T, {skeleton.joint_count}, 3], got {poses.shape}")
    if gaze.shape != (poses.shape[0], 3):
        raise InvariantError(f"gaze must be [{poses.shape[0]}, 3], got {gaze.shape}")
    if poses.shape[0] < 1:
        raise InvariantError("sample needs at least one frame")
    if not (np.isfinite(poses).all() and np.isfinite(gaze).all()):
        raise InvariantError("non-finite values in sample")
    norms = np.linalg.norm(gaze.astype(np.float64), axis=1)
    if np.any(np.abs(norms - 1.0) > GAZE_TOL):
        raise InvariantError("gaze not unit")


@dataclass(frozen=True, eq=False)
class MotionSample:
    """Synchronised pose [T, j, 3] (meters) and gaze [T, 3] (unit vectors), float32, read-only."""

    skeleton: Skeleton
    poses: np.ndarray
    gaze: np.ndarray
    subject_id: str = ""
    sequence_id: str = ""

    def __post_init__(self):
        poses = np.array(self.poses, dtype=np.float32)
        gaze = np.array(self.gaze, dtype=np.float32)
        _check_arrays(self.skeleton, poses, gaze)
        poses.flags.writeable = False
        gaze.flags.writeable = False
        object.__setattr__(self, "poses", poses)
        object.__setattr__(self, "gaze", gaze)

    @property
    def num_frames(self) -> int:
        return self.poses.shape[0]

    def slice(self, start: int, stop: int) -> MotionSample:
        return MotionSample(self.skeleton, self.poses[start:stop], self.gaze[start:stop],
                            self.subject_id, self.sequence_id)

    def __eq__(self, other):
        if not isinstance(other, MotionSample):
            return NotImplemented
        return (self.skeleton == other.skeleton and self.subject_id == other.subject_id
                and self.sequence_id == other.sequence_id
                and self.poses.tobytes() == other.poses.tobytes()
                and self.gaze.tobytes() == other.gaze.tobytes())

    __hash__ = None


@dataclass(frozen=True)
class Window:
    observed: MotionSample
    future_gt: np.ndarray
    future_gaze: np.ndarray | None = None
    start: int = 0

    @property
    def H(self) -> int:
        return self.observed.num_frames

    @property
    def F(self) -> int:
        return self.future_gt.shape[0]


@dataclass
class DatasetManifest:
    """Split assignment by subject (or scene) id plus windowing parameters."""

    train: list = field(default_factory=list)
    test: list = field(default_factory=list)
    H: int = 15
    F: int = 60
    train_stride: int = 1
    test_stride: int = 15

    def __post_init__(self):
        overlap = set(self.train) & set(self.test)
        if overlap:
            raise InvariantError(f"train/test overlap: {sorted(overlap)}")

    def split(self, samples, which: str):
        keep = set(self.train if which == "train" else self.test)
        return [s for s in samples if s.subject_id in keep]


def mogaze_manifest() -> DatasetManifest:
    return DatasetManifest(train=["p1", "p2", "p4", "p5", "p6"], test=["p7"])


# ---------------------------------------------------------------------------
# GMDS container

def write_gmds(sample: MotionSample, path) -> None:
    _check_arrays(sample.skeleton, sample.poses, sample.gaze)
    header = json.dumps({
        "joint_count": sample.skeleton.joint_count,
        "joint_names": list(sample.skeleton.joint_names),
        "fps": sample.skeleton.fps,
        "num_frames": sample.num_frames,
        "subject_id": sample.subject_id,
        "sequence_id": sample.sequence_id,
    }, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(GMDS_MAGIC)
        fh.write(struct.pack("<II", GMDS_VERSION, len(header)))
        fh.write(header)
        fh.write(np.ascontiguousarray(sample.poses, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(sample.gaze, dtype="<f4").tobytes())


def _read_container(path, magic: bytes) -> tuple[dict, bytes]:
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != magic:
        raise FormatError(f"{path}: bad magic, expected {magic.decode()}")
    version, header_len = struct.unpack("<II", data[4:12])
    if version != GMDS_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if len(data) < 12 + header_len:
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(data[12:12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable header ({exc})") from None
    return header, data[12 + header_len:]


def read_gmds(path) -> MotionSample:
    header, payload = _read_container(path, GMDS_MAGIC)
    try:
        j, T = int(header["joint_count"]), int(header["num_frames"])
        names = header["joint_names"]
    except KeyError as exc:
        raise FormatError(f"{path}: header missing {exc}") from None
    if len(names) != j:
        raise FormatError(f"{path}: joint_names length {len(names)} != joint_count {j}")
    n_pose, n_gaze = T * j * 3, T * 3
    expected = 4 * (n_pose + n_gaze)
    if len(payload) < expected:
        raise FormatError(f"{path}: truncated payload ({len(payload)} < {expected} bytes)")
    if len(payload) > expected:
        raise FormatError(f"{path}: trailing bytes after payload")
    values = np.frombuffer(payload, dtype="<f4")
    poses = values[:n_pose].reshape(T, j, 3)
    gaze = values[n_pose:].reshape(T, 3)
    skeleton = skeleton_from_names(names, float(header["fps"]))
    return MotionSample(skeleton, poses, gaze, header.get("subject_id", ""), header.get("sequence_id", ""))


# ---------------------------------------------------------------------------
# CSV adapter

def convert_csv(raw_csv_path, skeleton: Skeleton, subject_id: str = "", sequence_id: str | None = None,
                scale: float = 1.0) -> MotionSample:
    """Read a CSV export: ``frame, x0, y0, z0, ..., x{j-1}, y{j-1}, z{j-1}, gx, gy, gz``.

    A header line is skipped when its first field is not numeric. ``scale`` converts the
    pose units to meters (e.g. 0.001 for millimeter exports). Gaze rows are renormalised.
    """
    j = skeleton.joint_count
    n_fields = 1 + 3 * j + 3
    rows = []
    with open(raw_csv_path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or all(not c.strip() for c in row):
                continue
            if lineno == 1:
                try:
                    float(row[0])
                except ValueError:
                    continue
            if len(row) != n_fields:
                raise FormatError(f"line {lineno}: expected {n_fields} fields for {j} joints, got {len(row)}")
            try:
                rows.append([float(c) for c in row])
            except ValueError as exc:
                raise FormatError(f"line {lineno}: {exc}") from None
    if not rows:
        raise FormatError(f"{raw_csv_path}: no data rows")
    arr = np.asarray(rows, dtype=np.float64)
    if not np.isfinite(arr).all():
        raise FormatError(f"{raw_csv_path}: non-finite values")
    arr = arr[np.argsort(arr[:, 0], kind="stable")]
    poses = arr[:, 1:1 + 3 * j].reshape(-1, j, 3) * scale
    gaze = arr[:, 1 + 3 * j:]
    norms = np.linalg.norm(gaze, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise FormatError(f"{raw_csv_path}: zero-length gaze vector")
    gaze = gaze / norms
    seq = sequence_id if sequence_id is not None else Path(raw_csv_path).stem
    return MotionSample(skeleton, poses, gaze, subject_id, seq)


# ---------------------------------------------------------------------------
# windowing and derived channels

def make_windows(sample: MotionSample, H: int = 15, F: int = 60, stride: int = 1) -> list[Window]:
    if H < 1 or F < 0 or stride < 1:
        raise ValueError("need H >= 1, F >= 0, stride >= 1")
    T = sample.num_frames
    if H + F > T:
        return []
    windows = []
    for s in range(0, T - H - F + 1, stride):
        windows.append(Window(
            observed=sample.slice(s, s + H),
            future_gt=sample.poses[s + H:s + H + F],
            future_gaze=sample.gaze[s + H:s + H + F],
            start=s,
        ))
    return windows


def head_direction_channel(sample: MotionSample) -> np.ndarray:
    """Unit neck->head vector per frame, a proxy for gaze when no eye tracking is available."""
    sk = sample.skeleton
    if sk.neck is None or sk.head is None:
        raise InvariantError("skeleton does not designate neck and head joints")
    vec = sample.poses[:, sk.index(sk.head)].astype(np.float64) - sample.poses[:, sk.index(sk.neck)]
    norms = np.linalg.norm(vec, axis=1, keepdims=True)
    if np.any(norms < 1e-9):
        raise InvariantError("zero-length neck->head vector")
    return (vec / norms).astype(np.float32)


def with_head_direction(sample: MotionSample) -> MotionSample:
    return MotionSample(sample.skeleton, sample.poses, head_direction_channel(sample),
                        sample.subject_id, sample.sequence_id)
