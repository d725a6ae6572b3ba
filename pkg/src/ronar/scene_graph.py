"""Depth-filtered object sets and spatial-relation triplets.

Image coordinates follow the usual raster convention: y grows downward, so
"above" means smaller centroid y. Every emitted relation is paired with its
symmetric inverse.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import RonarError

RELATIONS = ("left to", "right to", "above", "below", "in front of", "behind")

INVERSE = {
    "left to": "right to",
    "right to": "left to",
    "above": "below",
    "below": "above",
    "in front of": "behind",
    "behind": "in front of",
}

DEFAULT_DISTANCE_CUTOFF = 2.0  # meters


class DuplicateObjectId(RonarError):
    pass


@dataclass(frozen=True)
class DetectedObject:
    object_id: str
    label: str
    box: tuple[float, float, float, float]  # x0, y0, x1, y1 in pixels
    distance: float | None = None  # meters from the robot

    def __post_init__(self):
        x0, y0, x1, y1 = self.box
        if not (x0 < x1 and y0 < y1):
            raise ValueError(f"object {self.object_id!r}: degenerate box {self.box}")
        if self.distance is not None and self.distance < 0:
            raise ValueError(f"object {self.object_id!r}: negative distance")

    @property
    def centroid(self) -> tuple[float, float]:
        x0, y0, x1, y1 = self.box
        return ((x0 + x1) / 2.0, (y0 + y1) / 2.0)

    def to_dict(self) -> dict:
        return {
            "id": self.object_id,
            "label": self.label,
            "box": list(self.box),
            "distance_m": self.distance,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DetectedObject":
        return cls(
            object_id=str(d["id"]),
            label=str(d["label"]),
            box=tuple(float(v) for v in d["box"]),
            distance=None if d.get("distance_m") is None else float(d["distance_m"]),
        )


@dataclass(frozen=True)
class Triplet:
    subject_id: str
    relation: str
    object_id: str
    gap: float  # centroid gap in pixels, or depth gap in meters

    def key(self) -> tuple[str, str, str]:
        return (self.subject_id, self.relation, self.object_id)


@dataclass(frozen=True)
class Margins:
    horizontal: float = 20.0  # px
    vertical: float = 20.0  # px
    depth: float = 0.15  # m


@dataclass
class SceneGraph:
    objects: list[DetectedObject] = field(default_factory=list)
    triplets: list[Triplet] = field(default_factory=list)


def filter_objects(detections: list[DetectedObject], c_d: float = DEFAULT_DISTANCE_CUTOFF) -> list[DetectedObject]:
    """Keep objects strictly closer than c_d; objects without depth pass."""
    if c_d <= 0:
        raise ValueError("c_d must be positive")
    return [o for o in detections if o.distance is None or o.distance < c_d]


def relations(objects: list[DetectedObject], margins: Margins = Margins()) -> SceneGraph:
    ids = [o.object_id for o in objects]
    if len(set(ids)) != len(ids):
        seen = set()
        dup = next(i for i in ids if i in seen or seen.add(i))
        raise DuplicateObjectId(f"duplicate object id {dup!r}")

    triplets: list[Triplet] = []

    def emit(subject: DetectedObject, relation: str, obj: DetectedObject, gap: float):
        triplets.append(Triplet(subject.object_id, relation, obj.object_id, gap))
        triplets.append(Triplet(obj.object_id, INVERSE[relation], subject.object_id, gap))

    for i, a in enumerate(objects):
        for b in objects[i + 1:]:
            (ax, ay), (bx, by) = a.centroid, b.centroid
            dx, dy = bx - ax, by - ay
            if abs(dx) > margins.horizontal:
                if dx > 0:
                    emit(a, "left to", b, abs(dx))
                else:
                    emit(a, "right to", b, abs(dx))
            if abs(dy) > margins.vertical:
                if dy > 0:
                    emit(a, "above", b, abs(dy))
                else:
                    emit(a, "below", b, abs(dy))
            if a.distance is not None and b.distance is not None:
                dz = b.distance - a.distance
                if abs(dz) > margins.depth:
                    if dz > 0:
                        emit(a, "in front of", b, abs(dz))
                    else:
                        emit(a, "behind", b, abs(dz))

    return SceneGraph(objects=list(objects), triplets=triplets)


def environment_digest(graph: SceneGraph) -> str:
    """Deterministic, input-order-independent serialization of a scene graph."""
    if not graph.objects:
        return "no objects within range"

    def obj_key(o: DetectedObject):
        return (o.distance if o.distance is not None else float("inf"), o.object_id)

    lines = []
    for o in sorted(graph.objects, key=obj_key):
        dist = "unknown distance" if o.distance is None else f"{o.distance:.2f} m away"
        lines.append(f"{o.label} [{o.object_id}] {dist}")
    for t in sorted(graph.triplets, key=Triplet.key):
        lines.append(f"{t.subject_id} {t.relation} {t.object_id} (gap {t.gap:.2f})")
    return "\n".join(lines)


class Detector:
    """Plug-in contract for live object detection.

    Implementations take an image path (plus optional depth path) and return
    the detected objects; the episode-log "detection" records use the same
    wire schema.
    """

    def detect(self, image_path: str, depth_path: str | None = None) -> list[DetectedObject]:
        raise NotImplementedError


class FixtureDetector(Detector):
    """Stub detector backed by a mapping of image basename to objects."""

    def __init__(self, fixtures: dict[str, list[dict]]):
        self._fixtures = fixtures

    def detect(self, image_path: str, depth_path: str | None = None) -> list[DetectedObject]:
        import os

        records = self._fixtures.get(os.path.basename(image_path), [])
        return [DetectedObject.from_dict(r) for r in records]
