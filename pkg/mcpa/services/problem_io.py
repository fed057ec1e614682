"""Problem, rig, pose and point files.

Files are UTF-8 JSON or CSV with LF endings. Writers emit a stable field
order and 17-significant-digit floats, so identical inputs give identical bytes.
"""

import json
import logging
import re
from pathlib import Path
from typing import Annotated

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from mcpa.exceptions import ParseError, VersionMismatch
from mcpa.gcm import pixels_to_rays
from mcpa.models import (
    BasePair,
    Camera,
    CameraExtrinsics,
    CameraIntrinsics,
    Mode,
    Pose,
    Problem,
    Reconstruction,
    RigConfig,
    SolverSettings,
    SolveReport,
    Track,
)
from mcpa.services.atomic import format_float, write_text_atomic

logger = logging.getLogger(__name__)

PROBLEM_VERSION = "mcpa-problem/1"
POSES_VERSION = "mcpa-poses/1"

Matrix3 = Annotated[list[float], Field(min_length=9, max_length=9)]
Vector3 = Annotated[list[float], Field(min_length=3, max_length=3)]


# --- file schemas ---

class CameraRecord(BaseModel):
    model_config = ConfigDict(extra="forbid")

    fx: float = Field(gt=0)
    fy: float = Field(gt=0)
    cx: float
    cy: float
    width: int = Field(gt=0)
    height: int = Field(gt=0)
    R: Matrix3
    t: Vector3


class RigRecord(BaseModel):
    cameras: list[CameraRecord] = Field(min_length=1)


class PoseRecord(BaseModel):
    model_config = ConfigDict(extra="forbid")

    R: Matrix3
    t: Vector3


class ObservationRecord(BaseModel):
    model_config = ConfigDict(extra="forbid")

    pose_id: int = Field(ge=0)
    camera_id: int = Field(ge=0)
    u: float
    v: float
    sigma_px: Annotated[list[float], Field(min_length=4, max_length=4)]


class TrackRecord(BaseModel):
    model_config = ConfigDict(extra="forbid")

    id: int
    observations: list[ObservationRecord] = Field(min_length=2)
    gt_point: Vector3 | None = None
    base: Annotated[list[int], Field(min_length=2, max_length=2)] | None = None


class ProblemRecord(BaseModel):
    version: str
    rig: RigRecord
    poses: list[PoseRecord] = Field(min_length=1)
    gt_poses: list[PoseRecord] | None = None
    tracks: list[TrackRecord]


class PosesRecord(BaseModel):
    version: str
    poses: list[PoseRecord]


class _VersionOnly(BaseModel):
    version: str


# --- deterministic JSON ---

def _dump(value, indent: int = 0) -> str:
    pad = "  " * indent
    if isinstance(value, dict):
        if not value:
            return "{}"
        items = [f'{pad}  {json.dumps(k)}: {_dump(v, indent + 1)}' for k, v in value.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(value, (list, tuple)):
        if all(isinstance(v, (int, float, np.integer, np.floating)) and not isinstance(v, bool) for v in value):
            return "[" + ", ".join(_dump(v) for v in value) + "]"
        if not value:
            return "[]"
        items = [f"{pad}  {_dump(v, indent + 1)}" for v in value]
        return "[\n" + ",\n".join(items) + "\n" + pad + "]"
    if isinstance(value, (bool, type(None), str)):
        return json.dumps(value)
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        if not np.isfinite(value):
            raise ValueError(f"cannot serialize non-finite value {value!r}")
        return format_float(value)
    raise TypeError(f"cannot serialize {type(value).__name__}")


def dumps(value) -> str:
    return _dump(value) + "\n"


# --- parsing helpers ---

_JSON_POSITION = re.compile(r"line (\d+) column (\d+)")


def _parse(model: type[BaseModel], text: str, source: str) -> BaseModel:
    try:
        return model.model_validate_json(text)
    except ValidationError as exc:
        error = exc.errors()[0]
        if error["type"] == "json_invalid":
            match = _JSON_POSITION.search(error["msg"])
            location = f"{source}:{match.group(1)}:{match.group(2)}" if match else source
        else:
            location = ".".join(str(part) for part in error["loc"])
        raise ParseError(error["msg"], location) from exc


def _check_version(text: str, expected: str, source: str) -> None:
    version = _parse(_VersionOnly, text, source).version
    if version != expected:
        raise VersionMismatch(f"{source}: expected version {expected!r}, found {version!r}")


def _matrix(values: list[float]) -> np.ndarray:
    return np.array(values, dtype=float).reshape(3, 3)


def _pose_from_record(record: PoseRecord) -> Pose:
    return Pose(_matrix(record.R), np.array(record.t, dtype=float))


def _pose_to_record(pose: Pose) -> dict:
    return {"R": [float(x) for x in np.ravel(pose.rotation)], "t": [float(x) for x in pose.translation]}


# --- rig ---

def rig_from_record(record: RigRecord) -> RigConfig:
    return RigConfig(tuple(
        Camera(
            CameraIntrinsics(fx=c.fx, fy=c.fy, cx=c.cx, cy=c.cy, width=c.width, height=c.height),
            CameraExtrinsics(_matrix(c.R), np.array(c.t, dtype=float)),
        )
        for c in record.cameras
    ))


def rig_to_dict(rig: RigConfig) -> dict:
    return {"cameras": [
        {
            "fx": float(c.intrinsics.fx),
            "fy": float(c.intrinsics.fy),
            "cx": float(c.intrinsics.cx),
            "cy": float(c.intrinsics.cy),
            "width": int(c.intrinsics.width),
            "height": int(c.intrinsics.height),
            "R": [float(x) for x in np.ravel(c.extrinsics.rotation)],
            "t": [float(x) for x in c.extrinsics.translation],
        }
        for c in rig.cameras
    ]}


def read_rig(path: Path) -> RigConfig:
    return rig_from_record(_parse(RigRecord, Path(path).read_text(encoding="utf-8"), str(path)))


def write_rig(path: Path, rig: RigConfig) -> None:
    write_text_atomic(path, dumps(rig_to_dict(rig)))


# --- problem ---

def problem_from_record(
    record: ProblemRecord,
    mode: Mode = Mode.MCPA,
    settings: SolverSettings | None = None,
) -> Problem:
    rig = rig_from_record(record.rig)
    poses = [_pose_from_record(p) for p in record.poses]
    gt_poses = [_pose_from_record(p) for p in record.gt_poses] if record.gt_poses is not None else None
    if gt_poses is not None and len(gt_poses) != len(poses):
        raise ParseError(f"{len(gt_poses)} ground-truth poses for {len(poses)} poses", "gt_poses")

    tracks = []
    for k, tr in enumerate(record.tracks):
        for j, ob in enumerate(tr.observations):
            where = f"tracks.{k}.observations.{j}"
            if ob.pose_id >= len(poses):
                raise ParseError(f"pose_id {ob.pose_id} out of range", f"{where}.pose_id")
            if ob.camera_id >= len(rig):
                raise ParseError(f"camera_id {ob.camera_id} out of range", f"{where}.camera_id")
        base = None
        if tr.base is not None:
            l, r = tr.base
            if l == r or not (0 <= l < len(tr.observations) and 0 <= r < len(tr.observations)):
                raise ParseError(f"invalid base pair {tr.base}", f"tracks.{k}.base")
            base = BasePair(l, r)
        observations = pixels_to_rays(
            rig,
            np.array([o.pose_id for o in tr.observations]),
            np.array([o.camera_id for o in tr.observations]),
            np.array([[o.u, o.v] for o in tr.observations], dtype=float),
            np.array([o.sigma_px for o in tr.observations], dtype=float).reshape(-1, 2, 2),
        )
        hint = np.array(tr.gt_point, dtype=float) if tr.gt_point is not None else None
        tracks.append(Track(track_id=tr.id, observations=observations, base=base, world_hint=hint))

    return Problem(
        rig=rig,
        poses=poses,
        tracks=tracks,
        mode=mode,
        settings=settings or SolverSettings(),
        gt_poses=gt_poses,
    )


def problem_to_dict(problem: Problem) -> dict:
    tracks = []
    for track in problem.tracks:
        obs = track.observations
        entry = {
            "id": int(track.track_id),
            "observations": [
                {
                    "pose_id": int(obs.pose_id[j]),
                    "camera_id": int(obs.camera_id[j]),
                    "u": float(obs.pixel[j, 0]),
                    "v": float(obs.pixel[j, 1]),
                    "sigma_px": [float(x) for x in np.ravel(obs.sigma_px[j])],
                }
                for j in range(len(track))
            ],
        }
        if track.world_hint is not None:
            entry["gt_point"] = [float(x) for x in track.world_hint]
        if track.base is not None:
            entry["base"] = [int(track.base.l), int(track.base.r)]
        tracks.append(entry)

    data = {
        "version": PROBLEM_VERSION,
        "rig": rig_to_dict(problem.rig),
        "poses": [_pose_to_record(p) for p in problem.poses],
    }
    if problem.gt_poses is not None:
        data["gt_poses"] = [_pose_to_record(p) for p in problem.gt_poses]
    data["tracks"] = tracks
    return data


def read_problem(
    path: Path,
    mode: Mode = Mode.MCPA,
    settings: SolverSettings | None = None,
) -> Problem:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    _check_version(text, PROBLEM_VERSION, str(path))
    record = _parse(ProblemRecord, text, str(path))
    problem = problem_from_record(record, mode, settings)
    logger.info("Read %s: %d poses, %d tracks", path, problem.n_poses, len(problem.tracks))
    return problem


def write_problem(path: Path, problem: Problem) -> None:
    write_text_atomic(path, dumps(problem_to_dict(problem)))
    logger.info("Wrote %s", path)


# --- poses ---

def read_poses(path: Path) -> list[Pose]:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    _check_version(text, POSES_VERSION, str(path))
    return [_pose_from_record(p) for p in _parse(PosesRecord, text, str(path)).poses]


def write_poses(path: Path, poses: list[Pose]) -> None:
    write_text_atomic(path, dumps({"version": POSES_VERSION, "poses": [_pose_to_record(p) for p in poses]}))
    logger.info("Wrote %s", path)


# --- CSV outputs ---

def csv_text(header: list[str], rows: list[list]) -> str:
    def cell(value) -> str:
        if isinstance(value, (bool, np.bool_)):
            return "1" if value else "0"
        if isinstance(value, (int, np.integer)):
            return str(int(value))
        if isinstance(value, (float, np.floating)):
            return format_float(value)
        return str(value)

    lines = [",".join(header)] + [",".join(cell(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


def write_points(path: Path, reconstruction: Reconstruction) -> None:
    """track_id,x,y,z for every successfully triangulated track."""
    rows = [
        [int(tid), *(float(x) for x in point)]
        for tid, point, ok in zip(reconstruction.track_ids, reconstruction.points, reconstruction.valid)
        if ok
    ]
    write_text_atomic(path, csv_text(["track_id", "x", "y", "z"], rows))
    logger.info("Wrote %d points to %s", len(rows), path)


def write_report(path: Path, report: SolveReport, record_timing: bool = True) -> None:
    """Per-iteration trace: iter,cost,lambda,accepted,wall_ms."""
    rows = [
        [r.iteration, r.cost, r.lam, int(r.accepted), r.wall_ms if record_timing else 0.0]
        for r in report.trace
    ]
    write_text_atomic(path, csv_text(["iter", "cost", "lambda", "accepted", "wall_ms"], rows))


def write_summary(path: Path, summary: dict) -> None:
    write_text_atomic(path, dumps(summary))
