"""Dataset persistence: a JSON manifest plus per-frame little-endian float32
raw arrays, designed to round-trip losslessly and diff cleanly.

Layout in the dataset directory:
    manifest.json
    frame_{k}_image.bin   (H, W, 3) float32, row-major
    frame_{k}_radar.bin   (N, 5)    float32
    frame_{k}_boxes.bin   (M, 12)   float32: center3, size3, yaw, vel2,
                                    class, score, attribute
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .scene import (
    Box3D,
    CameraFrame,
    DatasetFormatError,
    EgoPose,
    RadarSweep,
    SceneFrame,
    SceneSequence,
)

MANIFEST_NAME = "manifest.json"
FORMAT_VERSION = 1


def _write_array(path: Path, arr: np.ndarray):
    np.ascontiguousarray(arr, dtype="<f4").tofile(path)


def _read_array(path: Path, shape, what: str) -> np.ndarray:
    if not path.exists():
        raise DatasetFormatError(f"missing frame file {path.name} ({what})")
    raw = np.fromfile(path, dtype="<f4")
    expected = int(np.prod(shape))
    if raw.size != expected:
        raise DatasetFormatError(
            f"{path.name}: expected {expected} values for shape {tuple(shape)}, "
            f"got {raw.size}"
        )
    return raw.reshape(shape).astype(np.float64)


def write_dataset(sequence: SceneSequence, path, class_names=None, bev_extent=None):
    """Write a sequence to `path` (created if absent)."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    frames_meta = []
    for frame in sequence.frames:
        k = frame.frame_id
        cam = frame.cameras[0]
        image = np.asarray(cam.image)
        radar = frame.radar.points
        boxes = (
            np.stack([b.to_row() for b in frame.gt_boxes])
            if frame.gt_boxes
            else np.zeros((0, 12), dtype=np.float32)
        )
        _write_array(root / f"frame_{k}_image.bin", image)
        _write_array(root / f"frame_{k}_radar.bin", radar)
        _write_array(root / f"frame_{k}_boxes.bin", boxes)
        frames_meta.append(
            {
                "frame_id": k,
                "timestamp": frame.ego_pose.timestamp,
                "ego_pose": {
                    "translation": list(frame.ego_pose.translation),
                    "yaw": frame.ego_pose.yaw,
                },
                "image": {"file": f"frame_{k}_image.bin", "shape": list(image.shape)},
                "radar": {"file": f"frame_{k}_radar.bin", "shape": list(radar.shape)},
                "boxes": {"file": f"frame_{k}_boxes.bin", "shape": list(boxes.shape)},
                "intrinsics": cam.intrinsics.tolist(),
                "extrinsics": cam.extrinsics.tolist(),
            }
        )
    manifest = {
        "format_version": FORMAT_VERSION,
        "config_hash": sequence.config_hash,
        "dtype": "<f4",
        "num_frames": len(sequence.frames),
        "class_names": list(class_names) if class_names else None,
        "bev_extent": list(bev_extent) if bev_extent else None,
        "frames": frames_meta,
    }
    (root / MANIFEST_NAME).write_text(json.dumps(manifest, indent=1, sort_keys=True))


def read_manifest(path) -> dict:
    root = Path(path)
    mf = root / MANIFEST_NAME
    if not mf.exists():
        raise DatasetFormatError(f"no {MANIFEST_NAME} in {root}")
    try:
        return json.loads(mf.read_text())
    except json.JSONDecodeError as e:
        raise DatasetFormatError(f"corrupt manifest: {e}") from e


def read_dataset(path) -> SceneSequence:
    """Read a dataset directory back into a SceneSequence."""
    root = Path(path)
    manifest = read_manifest(root)
    frames = []
    for meta in manifest["frames"]:
        k = meta["frame_id"]
        radar_shape = meta["radar"]["shape"]
        if len(radar_shape) != 2 or radar_shape[1] != 5:
            raise DatasetFormatError(
                f"frame {k}: radar array has {radar_shape[1] if len(radar_shape) == 2 else '?'} "
                f"columns, expected 5 columns"
            )
        image = _read_array(root / meta["image"]["file"], meta["image"]["shape"],
                            f"frame {k} image")
        radar = _read_array(root / meta["radar"]["file"], radar_shape,
                            f"frame {k} radar")
        box_rows = _read_array(root / meta["boxes"]["file"], meta["boxes"]["shape"],
                               f"frame {k} boxes")
        if box_rows.shape[1:] != (12,) and box_rows.shape != (0, 12):
            raise DatasetFormatError(f"frame {k}: box rows must have 12 columns")
        ego = EgoPose(
            translation=np.array(meta["ego_pose"]["translation"]),
            yaw=float(meta["ego_pose"]["yaw"]),
            timestamp=float(meta["timestamp"]),
        )
        cam = CameraFrame(
            image=image,
            intrinsics=np.array(meta["intrinsics"]),
            extrinsics=np.array(meta["extrinsics"]),
            timestamp=float(meta["timestamp"]),
        )
        frames.append(
            SceneFrame(
                frame_id=k,
                ego_pose=ego,
                cameras=[cam],
                radar=RadarSweep(radar),
                gt_boxes=[Box3D.from_row(r) for r in box_rows],
            )
        )
    return SceneSequence(frames=frames, config_hash=manifest["config_hash"])
