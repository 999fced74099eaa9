"""Pose sampling, dataset generation, and on-the-fly pair formation.

A dataset is built per connector: for each base placement the camera is
perturbed around a default pose 15 cm above the insertion pose, an image
is rendered, and the transform from the default pose to the perturbed
pose (t_d2e) is stored as the label. Training pairs are formed on the fly
from the n^2 ordered sample pairs with labels computed by relative_label.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose, Quat, compose, euler_to_quat, EulerAngles, inverse, relative_label
from .scene import (
    CameraIntrinsics,
    ConnectorSpec,
    Image,
    SceneState,
    connector_top_height,
    default_connectors,
    overhead_camera_rotation,
    render,
)

LIFT_HEIGHT = 0.15  # meters from insertion pose to default pose


@dataclass(frozen=True)
class SamplingRanges:
    cylinder_radius: float = 0.005  # meters
    cylinder_height: float = 0.010  # meters
    roll_pitch_limit: float = 5.0  # degrees
    yaw_limit: float = 10.0  # degrees

    def __post_init__(self):
        if min(self.cylinder_radius, self.cylinder_height,
               self.roll_pitch_limit, self.yaw_limit) <= 0:
            raise ValueError("sampling ranges must be positive")

    def to_json(self) -> dict:
        return {
            "cylinder_radius": self.cylinder_radius,
            "cylinder_height": self.cylinder_height,
            "roll_pitch_limit": self.roll_pitch_limit,
            "yaw_limit": self.yaw_limit,
        }

    @staticmethod
    def from_json(d: dict) -> "SamplingRanges":
        return SamplingRanges(**d)


@dataclass
class Sample:
    image: Image
    t_d2e: Pose
    placement: int = 0


@dataclass
class Pair:
    image_a: Image
    image_b: Image
    label: Pose


@dataclass
class DatasetManifest:
    connectors: list
    samples_per_placement: int = 200
    val_size: int = 50
    test_size: int = 50
    seed: int = 0
    ranges: SamplingRanges = field(default_factory=SamplingRanges)
    placements: list = field(default_factory=lambda: base_placements())
    width: int = 64
    height: int = 64
    hfov_deg: float = 70.0

    @property
    def samples_per_connector(self) -> int:
        return self.samples_per_placement * len(self.placements)

    def validate(self) -> None:
        if not self.connectors:
            raise ValueError("manifest needs at least one connector id")
        if len(set(self.connectors)) != len(self.connectors):
            raise ValueError("duplicate connector ids")
        if self.samples_per_placement <= 0:
            raise ValueError("samples_per_placement must be positive")
        if self.val_size < 0 or self.test_size < 0:
            raise ValueError("split sizes must be non-negative")
        if self.val_size + self.test_size >= self.samples_per_connector:
            raise ValueError("val + test splits exceed the per-connector sample count")
        known = default_connectors()
        for cid in self.connectors:
            if cid not in known:
                raise ValueError(f"unknown connector id: {cid}")

    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics.from_hfov(self.width, self.height, self.hfov_deg)

    def to_json(self) -> dict:
        return {
            "connectors": list(self.connectors),
            "samples_per_placement": self.samples_per_placement,
            "val_size": self.val_size,
            "test_size": self.test_size,
            "seed": self.seed,
            "ranges": self.ranges.to_json(),
            "placements": [[p[0], p[1], p[2]] for p in self.placements],
            "width": self.width,
            "height": self.height,
            "hfov_deg": self.hfov_deg,
        }

    @staticmethod
    def from_json(d: dict) -> "DatasetManifest":
        return DatasetManifest(
            connectors=list(d["connectors"]),
            samples_per_placement=int(d["samples_per_placement"]),
            val_size=int(d["val_size"]),
            test_size=int(d["test_size"]),
            seed=int(d["seed"]),
            ranges=SamplingRanges.from_json(d["ranges"]),
            placements=[tuple(p) for p in d["placements"]],
            width=int(d["width"]),
            height=int(d["height"]),
            hfov_deg=float(d["hfov_deg"]),
        )


def make_default_pose(insertion_pose: Pose) -> Pose:
    """Insertion pose lifted vertically by 15 cm, rotation unchanged."""
    t = insertion_pose.translation
    return Pose(insertion_pose.rotation, (t[0], t[1], t[2] + LIFT_HEIGHT))


def sample_pose(rng: np.random.Generator, default_pose: Pose, r: SamplingRanges) -> Pose:
    """Random pose around the default pose.

    Translation offset is uniform over a vertical cylinder whose base sits
    at the default-pose origin and extends upward (area-uniform over the
    disk, so radius uses a sqrt transform). Rotation offsets are uniform
    per axis and composed onto the default rotation about the moving frame
    in Z-Y-X order.
    """
    angle = rng.uniform(0.0, 2.0 * math.pi)
    radius = r.cylinder_radius * math.sqrt(rng.uniform(0.0, 1.0))
    dz = rng.uniform(0.0, r.cylinder_height)
    roll = rng.uniform(-r.roll_pitch_limit, r.roll_pitch_limit)
    pitch = rng.uniform(-r.roll_pitch_limit, r.roll_pitch_limit)
    yaw = rng.uniform(-r.yaw_limit, r.yaw_limit)

    t0 = default_pose.translation
    t = (t0[0] + radius * math.cos(angle), t0[1] + radius * math.sin(angle), t0[2] + dz)
    offset = euler_to_quat(EulerAngles(roll, pitch, yaw))
    return Pose(default_pose.rotation.multiply(offset).normalized(), t)


def base_placements(spacing: float = 0.05, yaws=(0.0, 30.0, 60.0, 90.0)) -> list:
    """Five base positions (square vertices + center), each at four yaws."""
    h = spacing / 2.0
    positions = [(-h, -h), (h, -h), (h, h), (-h, h), (0.0, 0.0)]
    return [(x, y, yaw) for (x, y) in positions for yaw in yaws]


def insertion_pose_for(connector: ConnectorSpec, placement) -> Pose:
    """End-effector pose at which the male connector is fully inserted."""
    x, y, yaw = placement
    top = connector_top_height(connector)
    rot = Quat.from_axis_angle((0.0, 0.0, 1.0), math.radians(yaw)).multiply(
        overhead_camera_rotation()
    ).normalized()
    return Pose(rot, (x, y, top))


def placement_scene(connector: ConnectorSpec, placement, seed: int,
                    connector_index: int, placement_index: int) -> SceneState:
    """Scene for one base placement, with seeded lighting variation."""
    x, y, yaw = placement
    rng = np.random.default_rng([seed, 7, connector_index, placement_index])
    azim = rng.uniform(0.0, 2.0 * math.pi)
    elev = math.radians(rng.uniform(40.0, 70.0))
    light = (
        math.cos(elev) * math.cos(azim),
        math.cos(elev) * math.sin(azim),
        math.sin(elev),
    )
    n = math.sqrt(sum(v * v for v in light))
    light = tuple(v / n for v in light)
    ambient = rng.uniform(0.45, 0.65)
    return SceneState(connector, (x, y), yaw, light, ambient=ambient)


def d2e_from_world(default_pose: Pose, world_pose: Pose) -> Pose:
    """Transform from the default pose to an end-effector world pose."""
    return compose(inverse(default_pose), world_pose)


def world_from_d2e(default_pose: Pose, t_d2e: Pose) -> Pose:
    return compose(default_pose, t_d2e)


def _write_atomic(path: str, data: bytes) -> None:
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)


def generate_dataset(manifest: DatasetManifest, out_dir: str,
                     hand_eye: Pose = None, progress=None) -> None:
    """Render and persist the full dataset described by the manifest.

    Layout: <out_dir>/manifest.json, <out_dir>/<connector>/<index>.pgm and
    <out_dir>/<connector>/labels.jsonl. Fully reproducible from the seed.
    """
    manifest.validate()
    hand_eye = hand_eye or Pose.identity()
    connectors = default_connectors()
    k = manifest.intrinsics()

    os.makedirs(out_dir, exist_ok=True)
    for ci, cid in enumerate(manifest.connectors):
        spec = connectors[cid]
        cdir = os.path.join(out_dir, cid)
        os.makedirs(cdir, exist_ok=True)
        lines = []
        index = 0
        for pi, placement in enumerate(manifest.placements):
            scene = placement_scene(spec, placement, manifest.seed, ci, pi)
            default = make_default_pose(insertion_pose_for(spec, placement))
            for si in range(manifest.samples_per_placement):
                rng = np.random.default_rng([manifest.seed, ci, pi, si])
                pose = sample_pose(rng, default, manifest.ranges)
                img = render(scene, compose(pose, hand_eye), k)
                t_d2e = d2e_from_world(default, pose)
                _write_atomic(os.path.join(cdir, f"{index}.pgm"), img.to_pgm_bytes())
                lines.append(json.dumps(
                    {"index": index, "t_d2e": t_d2e.to_list(), "placement": pi}
                ))
                index += 1
                if progress is not None:
                    progress(cid, index)
        _write_atomic(os.path.join(cdir, "labels.jsonl"),
                      ("\n".join(lines) + "\n").encode("ascii"))
    _write_atomic(os.path.join(out_dir, "manifest.json"),
                  json.dumps(manifest.to_json(), indent=2).encode("ascii"))


def load_manifest(out_dir: str) -> DatasetManifest:
    with open(os.path.join(out_dir, "manifest.json")) as f:
        return DatasetManifest.from_json(json.load(f))


def load_samples(out_dir: str, connector: str) -> list:
    """All samples of one connector, ordered by index."""
    cdir = os.path.join(out_dir, connector)
    samples = []
    with open(os.path.join(cdir, "labels.jsonl")) as f:
        for line in f:
            rec = json.loads(line)
            img = Image.load_pgm(os.path.join(cdir, f"{rec['index']}.pgm"))
            samples.append(Sample(img, Pose.from_list(rec["t_d2e"]), rec["placement"]))
    return samples


def split_indices(manifest: DatasetManifest, connector: str):
    """Deterministic (train, val, test) index partition for one connector."""
    n = manifest.samples_per_connector
    ci = manifest.connectors.index(connector)
    rng = np.random.default_rng([manifest.seed, 13, ci])
    perm = rng.permutation(n)
    val = sorted(int(i) for i in perm[: manifest.val_size])
    test = sorted(int(i) for i in perm[manifest.val_size : manifest.val_size + manifest.test_size])
    train = sorted(int(i) for i in perm[manifest.val_size + manifest.test_size :])
    return train, val, test


def pair_stream(samples, count: int, rng: np.random.Generator):
    """Yield `count` pairs uniform over the n^2 ordered pairs (with replacement).

    Self pairs are allowed; labels are computed on the fly and no pair set
    is ever materialized.
    """
    n = len(samples)
    if n < 1:
        raise ValueError("pair_stream needs a non-empty sample set")
    for _ in range(count):
        i = int(rng.integers(0, n))
        j = int(rng.integers(0, n))
        a, b = samples[i], samples[j]
        yield Pair(a.image, b.image, relative_label(a.t_d2e, b.t_d2e))
