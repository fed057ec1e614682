"""Import of COLMAP text models (cameras.txt, images.txt, points3D.txt).

COLMAP registers every image independently. A rig map groups images into
rig poses: it maps each image name to a (pose_id, camera_id) slot and may
carry the calibrated rig. Without a rig, intrinsics come from cameras.txt and
extrinsics are taken relative to camera 0 at the first pose where both
images were registered.
"""

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from pydantic import BaseModel, Field
from scipy.spatial.transform import Rotation

from mcpa.exceptions import InconsistentRig, ParseError, UnsupportedCameraModel
from mcpa.gcm import pixels_to_rays
from mcpa.models import (
    Camera,
    CameraExtrinsics,
    CameraIntrinsics,
    Mode,
    Pose,
    Problem,
    RigConfig,
    SolverSettings,
    Track,
)
from mcpa.services.problem_io import RigRecord, _parse, rig_from_record

logger = logging.getLogger(__name__)

PINHOLE_MODELS = ("PINHOLE", "SIMPLE_PINHOLE")


class RigMapRecord(BaseModel):
    images: dict[str, tuple[int, int]]
    rig: RigRecord | None = None
    sigma_px: float = Field(default=1.0, gt=0)


@dataclass
class ColmapCamera:
    id: int
    model: str
    width: int
    height: int
    params: np.ndarray


@dataclass
class ColmapImage:
    id: int
    qvec: np.ndarray
    tvec: np.ndarray
    camera_id: int
    name: str
    xys: np.ndarray

    @property
    def rotation(self) -> np.ndarray:
        w, x, y, z = self.qvec
        return Rotation.from_quat([x, y, z, w]).as_matrix()


@dataclass
class ColmapPoint:
    id: int
    xyz: np.ndarray
    image_ids: np.ndarray
    point2d_idxs: np.ndarray


def _records(path: Path):
    """Yield (line number, stripped line) for every non-comment line, blanks included."""
    with path.open("r", encoding="utf-8") as fh:
        for number, line in enumerate(fh, start=1):
            line = line.strip()
            if line.startswith("#"):
                continue
            yield number, line


def read_cameras(path: Path) -> dict[int, ColmapCamera]:
    cameras = {}
    for number, line in _records(path):
        if not line:
            continue
        elems = line.split()
        try:
            camera = ColmapCamera(
                id=int(elems[0]),
                model=elems[1],
                width=int(elems[2]),
                height=int(elems[3]),
                params=np.array([float(x) for x in elems[4:]]),
            )
        except (IndexError, ValueError) as exc:
            raise ParseError(f"malformed camera record: {exc}", f"{path}:{number}") from exc
        cameras[camera.id] = camera
    return cameras


def read_images(path: Path) -> dict[int, ColmapImage]:
    images = {}
    lines = iter(_records(path))
    for number, line in lines:
        if not line:
            continue
        elems = line.split()
        try:
            image_id = int(elems[0])
            qvec = np.array([float(x) for x in elems[1:5]])
            tvec = np.array([float(x) for x in elems[5:8]])
            camera_id = int(elems[8])
            name = elems[9]
        except (IndexError, ValueError) as exc:
            raise ParseError(f"malformed image record: {exc}", f"{path}:{number}") from exc
        points_number, points_line = next(lines, (number + 1, ""))
        elems = points_line.split()
        if len(elems) % 3:
            raise ParseError("POINTS2D must be (X, Y, POINT3D_ID) triples", f"{path}:{points_number}")
        try:
            xys = np.column_stack([
                [float(x) for x in elems[0::3]],
                [float(y) for y in elems[1::3]],
            ]).reshape(-1, 2)
        except ValueError as exc:
            raise ParseError(f"malformed POINTS2D: {exc}", f"{path}:{points_number}") from exc
        images[image_id] = ColmapImage(image_id, qvec, tvec, camera_id, name, xys)
    return images


def read_points3d(path: Path) -> dict[int, ColmapPoint]:
    points = {}
    for number, line in _records(path):
        if not line:
            continue
        elems = line.split()
        try:
            point = ColmapPoint(
                id=int(elems[0]),
                xyz=np.array([float(x) for x in elems[1:4]]),
                image_ids=np.array([int(x) for x in elems[8::2]], dtype=np.int64),
                point2d_idxs=np.array([int(x) for x in elems[9::2]], dtype=np.int64),
            )
        except (IndexError, ValueError) as exc:
            raise ParseError(f"malformed point record: {exc}", f"{path}:{number}") from exc
        if len(point.image_ids) != len(point.point2d_idxs):
            raise ParseError("TRACK must be (IMAGE_ID, POINT2D_IDX) pairs", f"{path}:{number}")
        points[point.id] = point
    return points


def _intrinsics(camera: ColmapCamera) -> CameraIntrinsics:
    if camera.model not in PINHOLE_MODELS:
        raise UnsupportedCameraModel(f"camera model {camera.model} is not a pinhole model", f"camera {camera.id}")
    if camera.model == "PINHOLE":
        fx, fy, cx, cy = camera.params[:4]
    else:
        fx, cx, cy = camera.params[:3]
        fy = fx
    return CameraIntrinsics(fx=float(fx), fy=float(fy), cx=float(cx), cy=float(cy),
                            width=camera.width, height=camera.height)


def _rig_from_images(
    slots: dict[tuple[int, int], ColmapImage],
    cameras: dict[int, ColmapCamera],
) -> RigConfig:
    n_cameras = max(c for _, c in slots) + 1
    rig_cameras = []
    for c in range(n_cameras):
        pose_ids = sorted(p for p, cam in slots if cam == c)
        if not pose_ids:
            raise InconsistentRig(f"rig camera {c} has no registered image")
        intrinsics = _intrinsics(cameras[slots[(pose_ids[0], c)].camera_id])
        if c == 0:
            rig_cameras.append(Camera(intrinsics, CameraExtrinsics(np.eye(3), np.zeros(3))))
            continue
        shared = [p for p in pose_ids if (p, 0) in slots]
        if not shared:
            raise InconsistentRig(f"rig camera {c} is never registered together with camera 0")
        ref, img = slots[(shared[0], 0)], slots[(shared[0], c)]
        rotation = ref.rotation @ img.rotation.T
        translation = ref.tvec - rotation @ img.tvec
        rig_cameras.append(Camera(intrinsics, CameraExtrinsics(rotation, translation)))
    return RigConfig(tuple(rig_cameras))


def import_colmap_text(
    model_dir: Path,
    rig_map: RigMapRecord,
    mode: Mode = Mode.MCPA,
    settings: SolverSettings | None = None,
) -> Problem:
    model_dir = Path(model_dir)
    cameras = read_cameras(model_dir / "cameras.txt")
    images = read_images(model_dir / "images.txt")
    points = read_points3d(model_dir / "points3D.txt")

    slots: dict[tuple[int, int], ColmapImage] = {}
    slot_of_image: dict[int, tuple[int, int]] = {}
    for image in sorted(images.values(), key=lambda im: im.id):
        if image.name not in rig_map.images:
            logger.debug("Image %s is not in the rig map, skipping", image.name)
            continue
        slot = tuple(rig_map.images[image.name])
        if slot in slots:
            raise InconsistentRig(
                f"images {slots[slot].name} and {image.name} both map to pose {slot[0]}, camera {slot[1]}"
            )
        slots[slot] = image
        slot_of_image[image.id] = slot
    if not slots:
        raise InconsistentRig("no image of the model appears in the rig map")

    rig = rig_from_record(rig_map.rig) if rig_map.rig is not None else _rig_from_images(slots, cameras)

    n_poses = max(p for p, _ in slots) + 1
    poses = []
    for p in range(n_poses):
        registered = sorted(c for pid, c in slots if pid == p)
        if not registered:
            logger.warning("Pose %d has no registered image; using identity", p)
            poses.append(Pose.identity())
            continue
        c = registered[0]
        image = slots[(p, c)]
        extrinsics = rig.camera(c).extrinsics
        rotation = extrinsics.rotation @ image.rotation
        poses.append(Pose(rotation, extrinsics.rotation @ image.tvec + extrinsics.translation))

    sigma_px = rig_map.sigma_px ** 2 * np.eye(2)
    tracks = []
    skipped = 0
    for point in sorted(points.values(), key=lambda pt: pt.id):
        pose_id, camera_id, pixels = [], [], []
        for image_id, idx in zip(point.image_ids, point.point2d_idxs):
            slot = slot_of_image.get(int(image_id))
            if slot is None:
                continue
            xys = images[int(image_id)].xys
            if not 0 <= idx < len(xys):
                raise ParseError(f"POINT2D_IDX {idx} out of range for image {image_id}", f"point {point.id}")
            pose_id.append(slot[0])
            camera_id.append(slot[1])
            pixels.append(xys[idx])
        if len(pose_id) < 2:
            skipped += 1
            continue
        observations = pixels_to_rays(
            rig, np.array(pose_id), np.array(camera_id), np.array(pixels),
            np.broadcast_to(sigma_px, (len(pixels), 2, 2)),
        )
        tracks.append(Track(track_id=point.id, observations=observations))
    if skipped:
        logger.info("Skipped %d points with fewer than two mapped observations", skipped)
    logger.info("Imported %s: %d poses, %d cameras, %d tracks", model_dir, n_poses, len(rig), len(tracks))
    return Problem(rig=rig, poses=poses, tracks=tracks, mode=mode, settings=settings or SolverSettings())


def read_rig_map(path: Path) -> RigMapRecord:
    return _parse(RigMapRecord, Path(path).read_text(encoding="utf-8"), str(path))
