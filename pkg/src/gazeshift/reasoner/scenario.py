"""Scenario files: pre-annotated interaction streams the pipeline replays.

A scenario is a JSON document holding camera intrinsics, the base-from-
camera transform, an ordered cycle array (semantics text plus candidate
instances with boxes and depths), canned backend responses keyed by cycle
index, and evaluation metadata (cue-onset cycle and expected target).
Detection and depth aggregation happen upstream; files carry their results.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import so3
from ..errors import DataError

SCENARIO_SCHEMA = "gazeshift-scenario"
SCENARIO_VERSION = 1

REGULARITIES = ("H1", "H2", "H3", "H4")
PERSON_CATEGORIES = frozenset({"person"})


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole parameters in pixels, plus the image size boxes live in."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be positive")

    def back_project(self, u: float, v: float, depth: float) -> np.ndarray:
        """Camera-frame 3D point for pixel (u, v) at the given depth."""
        if depth <= 0:
            raise ValueError("depth must be positive")
        return depth * np.array([(u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0])

    def project(self, point: np.ndarray) -> tuple:
        """Pixel (u, v) for a camera-frame point; inverse of back_project."""
        x, y, z = np.asarray(point, dtype=float)
        if z <= 0:
            raise ValueError("point must lie in front of the camera")
        return (self.fx * x / z + self.cx, self.fy * y / z + self.cy)

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}


@dataclass(frozen=True)
class RigidTransform:
    """base_from_camera: p_base = rotation @ p_camera + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float)
        t = np.asarray(self.translation, dtype=float)
        so3.check_rotation(R)
        if t.shape != (3,) or not np.all(np.isfinite(t)):
            raise ValueError("translation must be a finite 3-vector")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    def apply(self, point: np.ndarray) -> np.ndarray:
        return self.rotation @ np.asarray(point, dtype=float) + self.translation

    def to_dict(self) -> dict:
        return {"rotation": self.rotation.tolist(), "translation": self.translation.tolist()}


def _check_box(box, camera: CameraIntrinsics, what: str):
    box = tuple(float(v) for v in box)
    if len(box) != 4:
        raise ValueError(f"{what} must be (left, top, right, bottom)")
    left, top, right, bottom = box
    if not (left < right and top < bottom):
        raise ValueError(f"{what} is empty or inverted")
    if left < 0 or top < 0 or right > camera.width or bottom > camera.height:
        raise ValueError(f"{what} exceeds the {camera.width}x{camera.height} image")
    return box


def box_center(box) -> tuple:
    left, top, right, bottom = box
    return ((left + right) / 2.0, (top + bottom) / 2.0)


@dataclass(frozen=True)
class Instance:
    """One candidate gaze target visible in a cycle."""

    instance_id: str
    category: str
    box: tuple  # (left, top, right, bottom) pixels
    depth: float  # representative depth, metres
    face_box: tuple | None = None  # persons only, may be absent

    def __post_init__(self):
        if not self.instance_id or not self.category:
            raise ValueError("instance id and category must be non-empty")
        if self.depth <= 0 or not np.isfinite(self.depth):
            raise ValueError(f"instance {self.instance_id}: depth must be positive")

    def is_person(self) -> bool:
        return self.category in PERSON_CATEGORIES


@dataclass(frozen=True)
class ScenarioCycle:
    """One inference cycle: semantics text plus the candidate instances.

    Camera intrinsics and the base-from-camera transform are shared across
    a scenario but carried on every cycle so pipeline steps are local.
    ``expected_instance`` is set only on the cue-onset cycle.
    """

    index: int
    semantics: str
    instances: tuple
    camera: CameraIntrinsics
    base_from_camera: RigidTransform
    image_ref: str | None = None
    cue_onset: bool = False
    expected_instance: str | None = None

    def __post_init__(self):
        if self.index < 0:
            raise ValueError("cycle index must be non-negative")
        ids = [inst.instance_id for inst in self.instances]
        if len(set(ids)) != len(ids):
            raise ValueError(f"cycle {self.index}: duplicate instance ids")
        for inst in self.instances:
            _check_box(inst.box, self.camera, f"cycle {self.index} instance {inst.instance_id} box")
            if inst.face_box is not None:
                _check_box(inst.face_box, self.camera,
                           f"cycle {self.index} instance {inst.instance_id} face box")
        if self.expected_instance is not None and not self.cue_onset:
            raise ValueError(f"cycle {self.index}: expected_instance requires cue_onset")

    def find(self, instance_id: str) -> Instance:
        for inst in self.instances:
            if inst.instance_id == instance_id:
                return inst
        raise KeyError(instance_id)


@dataclass(frozen=True)
class Scenario:
    """A replayable clip: ordered cycles plus canned backend responses."""

    scenario_id: str
    regularity: str  # H1..H4 interaction-regularity group
    cycles: tuple
    responses: dict  # cycle index -> canned backend response text
    description: str = ""

    def __post_init__(self):
        if self.regularity not in REGULARITIES:
            raise ValueError(f"unknown regularity {self.regularity!r}")
        if not self.cycles:
            raise ValueError("scenario must have at least one cycle")
        for i, cycle in enumerate(self.cycles):
            if cycle.index != i:
                raise ValueError(f"cycle indices must be consecutive from 0, got {cycle.index} at {i}")
        onsets = [c for c in self.cycles if c.cue_onset]
        if len(onsets) > 1:
            raise ValueError("at most one cue-onset cycle per scenario")
        for idx in self.responses:
            if not 0 <= idx < len(self.cycles):
                raise ValueError(f"canned response for out-of-range cycle {idx}")

    def cue_cycle(self) -> ScenarioCycle | None:
        for cycle in self.cycles:
            if cycle.cue_onset:
                return cycle
        return None

    def has_evaluation_metadata(self) -> bool:
        cue = self.cue_cycle()
        return cue is not None and cue.expected_instance is not None


def scenario_to_doc(scenario: Scenario) -> dict:
    first = scenario.cycles[0]
    cycles = []
    for c in scenario.cycles:
        doc = {
            "index": c.index,
            "semantics": c.semantics,
            "instances": [
                {k: v for k, v in {
                    "id": inst.instance_id,
                    "category": inst.category,
                    "box": list(inst.box),
                    "depth": inst.depth,
                    "face_box": list(inst.face_box) if inst.face_box else None,
                }.items() if v is not None}
                for inst in c.instances
            ],
        }
        if c.image_ref:
            doc["image_ref"] = c.image_ref
        if c.cue_onset:
            doc["cue_onset"] = True
        if c.expected_instance:
            doc["expected_instance"] = c.expected_instance
        cycles.append(doc)
    return {
        "schema": SCENARIO_SCHEMA,
        "version": SCENARIO_VERSION,
        "scenario_id": scenario.scenario_id,
        "regularity": scenario.regularity,
        "description": scenario.description,
        "camera": first.camera.to_dict(),
        "base_from_camera": first.base_from_camera.to_dict(),
        "cycles": cycles,
        "responses": {str(k): v for k, v in sorted(scenario.responses.items())},
    }


def write_scenario(scenario: Scenario, path) -> None:
    doc = scenario_to_doc(scenario)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def scenario_from_doc(doc: dict, origin: str = "<doc>") -> Scenario:
    if doc.get("schema") != SCENARIO_SCHEMA:
        raise DataError(f"{origin}: not a scenario file (schema {doc.get('schema')!r})")
    if doc.get("version") != SCENARIO_VERSION:
        raise DataError(f"{origin}: unsupported scenario version {doc.get('version')!r}")
    try:
        camera = CameraIntrinsics(**doc["camera"])
        transform = RigidTransform(np.array(doc["base_from_camera"]["rotation"]),
                                   np.array(doc["base_from_camera"]["translation"]))
        cycles = []
        for cdoc in doc["cycles"]:
            instances = tuple(
                Instance(
                    instance_id=idoc["id"],
                    category=idoc["category"],
                    box=tuple(idoc["box"]),
                    depth=float(idoc["depth"]),
                    face_box=tuple(idoc["face_box"]) if idoc.get("face_box") else None,
                )
                for idoc in cdoc["instances"]
            )
            cycles.append(ScenarioCycle(
                index=int(cdoc["index"]),
                semantics=cdoc["semantics"],
                instances=instances,
                camera=camera,
                base_from_camera=transform,
                image_ref=cdoc.get("image_ref"),
                cue_onset=bool(cdoc.get("cue_onset", False)),
                expected_instance=cdoc.get("expected_instance"),
            ))
        responses = {int(k): v for k, v in doc.get("responses", {}).items()}
        return Scenario(
            scenario_id=doc["scenario_id"],
            regularity=doc["regularity"],
            cycles=tuple(cycles),
            responses=responses,
            description=doc.get("description", ""),
        )
    except DataError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{origin}: {exc}") from exc


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: {exc}") from exc
    return scenario_from_doc(doc, origin=str(path))


def load_scenario_dir(directory) -> list:
    """All scenarios under a directory, sorted by file name."""
    paths = sorted(Path(directory).glob("*.json"))
    if not paths:
        raise DataError(f"no scenario files found under {directory}")
    return [load_scenario(p) for p in paths]
