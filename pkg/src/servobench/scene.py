"""Synthetic connector-on-base scene: pinhole projection and rasterization.

Replaces a physical camera rig with a deterministic software renderer.
Scenes are a white table plane, a white frustum-shaped base, a darker
connector body on top, and a connector-specific stud-marker layout on the
top face. Shading is flat Lambertian (ambient + directional term).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .geometry import Pose, Quat, inverse

WHITE_THRESHOLD = 0.9  # gray level at or above which a pixel counts as white


@dataclass(frozen=True)
class CameraIntrinsics:
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the frame")

    @staticmethod
    def from_hfov(width: int = 64, height: int = 64, hfov_deg: float = 70.0) -> "CameraIntrinsics":
        """Square-pixel intrinsics from a horizontal field of view."""
        fx = (width / 2.0) / math.tan(math.radians(hfov_deg / 2.0))
        return CameraIntrinsics(width, height, fx, fx, width / 2.0, height / 2.0)

    def to_json(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
        }

    @staticmethod
    def from_json(d: dict) -> "CameraIntrinsics":
        return CameraIntrinsics(
            int(d["width"]), int(d["height"]), float(d["fx"]),
            float(d["fy"]), float(d["cx"]), float(d["cy"]),
        )


@dataclass(frozen=True)
class ConnectorSpec:
    """Connector body geometry and appearance.

    half_extents are the body box half sizes (x, y, z) in meters; the base
    frustum under the body tapers from its bottom square to taper_ratio
    times that at the top.
    """

    half_extents: tuple
    taper_ratio: float
    stud_pattern: int
    albedo: float
    base_half: float = 0.040
    base_height: float = 0.022

    def __post_init__(self):
        if any(e <= 0 for e in self.half_extents):
            raise ValueError("half extents must be positive")
        if not (0.0 < self.taper_ratio <= 1.0):
            raise ValueError("taper ratio must be in (0, 1]")

    def to_json(self) -> dict:
        return {
            "half_extents": list(self.half_extents),
            "taper_ratio": self.taper_ratio,
            "stud_pattern": self.stud_pattern,
            "albedo": self.albedo,
            "base_half": self.base_half,
            "base_height": self.base_height,
        }

    @staticmethod
    def from_json(d: dict) -> "ConnectorSpec":
        return ConnectorSpec(
            tuple(d["half_extents"]), float(d["taper_ratio"]),
            int(d["stud_pattern"]), float(d["albedo"]),
            float(d.get("base_half", 0.022)), float(d.get("base_height", 0.020)),
        )


def default_connectors() -> dict:
    """Nine synthetic connector variants, ids A1..C3.

    Families A/B/C differ in albedo and taper; sizes 1..3 scale the body.
    """
    families = {"A": (0.55, 0.85), "B": (0.70, 0.75), "C": (0.30, 0.65)}
    out = {}
    pattern = 0
    for fam, (albedo, taper) in families.items():
        for size in (1, 2, 3):
            s = 0.85 + 0.15 * size
            out[f"{fam}{size}"] = ConnectorSpec(
                half_extents=(0.020 * s, 0.009 * s, 0.005 * s),
                taper_ratio=taper,
                stud_pattern=pattern,
                albedo=albedo,
                base_half=0.040,
                base_height=0.022,
            )
            pattern += 1
    return out


@dataclass(frozen=True)
class SceneState:
    connector: ConnectorSpec
    base_position: tuple  # (x, y) on the table plane, meters
    base_yaw_deg: float
    light_direction: tuple  # unit vector, points from the scene toward the light
    ambient: float = 0.55
    background: float = 0.97

    def __post_init__(self):
        n = math.sqrt(sum(v * v for v in self.light_direction))
        if abs(n - 1.0) > 1e-6:
            raise ValueError("light direction must be unit norm")
        for name in ("ambient", "background"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} must be within [0, 1]")

    def to_json(self) -> dict:
        return {
            "connector": self.connector.to_json(),
            "base_position": list(self.base_position),
            "base_yaw_deg": self.base_yaw_deg,
            "light_direction": list(self.light_direction),
            "ambient": self.ambient,
            "background": self.background,
        }

    @staticmethod
    def from_json(d: dict) -> "SceneState":
        return SceneState(
            ConnectorSpec.from_json(d["connector"]),
            tuple(d["base_position"]),
            float(d["base_yaw_deg"]),
            tuple(d["light_direction"]),
            float(d["ambient"]),
            float(d["background"]),
        )


class Image:
    """Single-channel image, gray levels in [0, 1], row-major."""

    def __init__(self, pixels: np.ndarray):
        pixels = np.asarray(pixels, dtype=np.float64)
        if pixels.ndim != 2:
            raise ValueError("image pixels must be 2-D")
        if pixels.min() < 0.0 or pixels.max() > 1.0:
            raise ValueError("pixel values must lie in [0, 1]")
        self.pixels = pixels

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def __eq__(self, other):
        return isinstance(other, Image) and np.array_equal(self.pixels, other.pixels)

    def copy(self) -> "Image":
        return Image(self.pixels.copy())

    def to_pgm_bytes(self) -> bytes:
        data = np.clip(np.rint(self.pixels * 255.0), 0, 255).astype(np.uint8)
        header = f"P5\n{self.width} {self.height}\n255\n".encode("ascii")
        return header + data.tobytes()

    def save_pgm(self, path) -> None:
        with open(path, "wb") as f:
            f.write(self.to_pgm_bytes())

    @staticmethod
    def from_pgm_bytes(raw: bytes) -> "Image":
        if not raw.startswith(b"P5"):
            raise ValueError("only binary PGM (P5) is supported")
        # header: magic, width, height, maxval, then raw bytes
        fields = []
        pos = 2
        while len(fields) < 3:
            while pos < len(raw) and raw[pos : pos + 1].isspace():
                pos += 1
            if raw[pos : pos + 1] == b"#":
                while raw[pos : pos + 1] != b"\n":
                    pos += 1
                continue
            start = pos
            while pos < len(raw) and not raw[pos : pos + 1].isspace():
                pos += 1
            fields.append(int(raw[start:pos]))
        pos += 1
        width, height, maxval = fields
        data = np.frombuffer(raw, dtype=np.uint8, count=width * height, offset=pos)
        return Image(data.reshape(height, width).astype(np.float64) / maxval)

    @staticmethod
    def load_pgm(path) -> "Image":
        with open(path, "rb") as f:
            return Image.from_pgm_bytes(f.read())


def project(point, camera_pose: Pose, k: CameraIntrinsics):
    """Pinhole projection of a world point into the camera.

    Returns (u, v, in_front); in_front is False when the camera-frame depth
    is at or below 1e-6 m (u, v are then meaningless).
    """
    cam = inverse(camera_pose)
    p = cam.rotation.to_matrix() @ np.asarray(point, dtype=float) + np.asarray(cam.translation)
    if p[2] <= 1e-6:
        return 0.0, 0.0, False
    return k.cx + k.fx * p[0] / p[2], k.cy + k.fy * p[1] / p[2], True


def _yaw_matrix(yaw_deg: float) -> np.ndarray:
    c, s = math.cos(math.radians(yaw_deg)), math.sin(math.radians(yaw_deg))
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _quad(v0, v1, v2, v3):
    return [(v0, v1, v2), (v0, v2, v3)]


def _box_faces(center, half, top_only=False):
    cx, cy, cz = center
    hx, hy, hz = half
    x0, x1 = cx - hx, cx + hx
    y0, y1 = cy - hy, cy + hy
    z0, z1 = cz - hz, cz + hz
    faces = _quad((x0, y0, z1), (x1, y0, z1), (x1, y1, z1), (x0, y1, z1))
    if top_only:
        return faces
    faces += _quad((x0, y0, z0), (x1, y0, z0), (x1, y0, z1), (x0, y0, z1))
    faces += _quad((x1, y0, z0), (x1, y1, z0), (x1, y1, z1), (x1, y0, z1))
    faces += _quad((x1, y1, z0), (x0, y1, z0), (x0, y1, z1), (x1, y1, z1))
    faces += _quad((x0, y1, z0), (x0, y0, z0), (x0, y0, z1), (x0, y1, z1))
    return faces


_STUD_OFFSETS = [  # unit-square marker layouts, selected by stud_pattern % 9
    [(0, 0)],
    [(-1, 0), (1, 0)],
    [(0, -1), (0, 1)],
    [(-1, -1), (1, 1)],
    [(-1, 1), (1, -1), (0, 0)],
    [(-1, -1), (-1, 1), (1, -1), (1, 1)],
    [(-1, 0), (1, 0), (0, -1), (0, 1)],
    [(-1, -1), (1, -1), (0, 1)],
    [(-1, 0), (0, 0), (1, 0)],
]


def scene_triangles(scene: SceneState):
    """World-space triangles with albedos: (list of (3x3 vertex array, albedo))."""
    c = scene.connector
    rot = _yaw_matrix(scene.base_yaw_deg)
    shift = np.array([scene.base_position[0], scene.base_position[1], 0.0])

    tris = []

    def add(faces, albedo, transform=True):
        for tri in faces:
            v = np.array(tri, dtype=float)
            if transform:
                v = v @ rot.T + shift
            tris.append((v, albedo))

    # table plane (kept moderate so corners stay in front of overhead cameras)
    add(_quad((-0.4, -0.4, 0.0), (0.4, -0.4, 0.0), (0.4, 0.4, 0.0), (-0.4, 0.4, 0.0)),
        scene.background, transform=False)

    # base frustum: square bottom at z=0, tapered square top
    b, h, t = c.base_half, c.base_height, c.taper_ratio
    bot = [(-b, -b), (b, -b), (b, b), (-b, b)]
    top = [(x * t, y * t) for x, y in bot]
    for i in range(4):
        j = (i + 1) % 4
        add(_quad((bot[i][0], bot[i][1], 0.0), (bot[j][0], bot[j][1], 0.0),
                  (top[j][0], top[j][1], h), (top[i][0], top[i][1], h)), 0.95)
    add(_quad((top[0][0], top[0][1], h), (top[1][0], top[1][1], h),
              (top[2][0], top[2][1], h), (top[3][0], top[3][1], h)), 0.95)

    # connector body box on the frustum top
    hx, hy, hz = c.half_extents
    add(_box_faces((0.0, 0.0, h + hz), (hx, hy, hz)), c.albedo)

    # stud markers on the body top face
    z_top = h + 2 * hz + 1e-5
    stud = 0.45 * min(hx, hy)
    pitch_x, pitch_y = 0.55 * hx, 0.55 * hy
    for gx, gy in _STUD_OFFSETS[c.stud_pattern % len(_STUD_OFFSETS)]:
        mx, my = gx * pitch_x, gy * pitch_y
        add(_quad((mx - stud, my - stud, z_top), (mx + stud, my - stud, z_top),
                  (mx + stud, my + stud, z_top), (mx - stud, my + stud, z_top)), 0.08)
    return tris


def connector_top_height(c: ConnectorSpec) -> float:
    """World z of the connector top face when the base sits on the table."""
    return c.base_height + 2 * c.half_extents[2]


def render(scene: SceneState, camera_pose: Pose, k: CameraIntrinsics,
           supersample: int = 3) -> Image:
    """Rasterize the scene into the camera: painter's order, flat shading.

    Rendering happens at supersample x the target resolution and is box
    filtered down, so edge pixels vary continuously with sub-pixel motion.
    """
    if supersample > 1:
        ss = supersample
        k_hi = CameraIntrinsics(k.width * ss, k.height * ss, k.fx * ss,
                                k.fy * ss, k.cx * ss, k.cy * ss)
        hi = render(scene, camera_pose, k_hi, supersample=1).pixels
        lo = hi.reshape(k.height, ss, k.width, ss).mean(axis=(1, 3))
        return Image(lo)
    cam = inverse(camera_pose)
    r_cw = cam.rotation.to_matrix()
    t_cw = np.asarray(cam.translation)
    cam_origin = np.asarray(camera_pose.translation)
    light = np.asarray(scene.light_direction, dtype=float)

    img = np.full((k.height, k.width), scene.background, dtype=np.float64)

    faces = []
    for verts, albedo in scene_triangles(scene):
        vc = verts @ r_cw.T + t_cw
        if np.any(vc[:, 2] <= 1e-6):
            continue
        u = k.cx + k.fx * vc[:, 0] / vc[:, 2]
        v = k.cy + k.fy * vc[:, 1] / vc[:, 2]
        n = np.cross(verts[1] - verts[0], verts[2] - verts[0])
        nn = np.linalg.norm(n)
        if nn < 1e-15:
            continue
        n = n / nn
        if np.dot(n, cam_origin - verts[0]) < 0:
            n = -n
        diffuse = max(0.0, float(np.dot(n, light)))
        # saturating shading keeps up-facing white surfaces white under any
        # sampled light elevation; side faces carry the lighting variation
        shade = albedo * min(1.0, scene.ambient + diffuse)
        faces.append((float(np.mean(vc[:, 2])), u, v, shade))

    faces.sort(key=lambda f: -f[0])  # far to near

    ys = np.arange(k.height) + 0.5
    xs = np.arange(k.width) + 0.5
    for _, u, v, shade in faces:
        x0 = max(0, int(math.floor(u.min() - 0.5)))
        x1 = min(k.width - 1, int(math.ceil(u.max() - 0.5)))
        y0 = max(0, int(math.floor(v.min() - 0.5)))
        y1 = min(k.height - 1, int(math.ceil(v.max() - 0.5)))
        if x1 < x0 or y1 < y0:
            continue
        px = xs[x0 : x1 + 1][None, :] - u[0]
        py = ys[y0 : y1 + 1][:, None] - v[0]
        e1 = (u[1] - u[0], v[1] - v[0])
        e2 = (u[2] - u[0], v[2] - v[0])
        den = e1[0] * e2[1] - e1[1] * e2[0]
        if abs(den) < 1e-12:
            continue
        a = (px * e2[1] - py * e2[0]) / den
        b = (py * e1[0] - px * e1[1]) / den
        mask = (a >= 0.0) & (b >= 0.0) & (a + b <= 1.0)
        block = img[y0 : y1 + 1, x0 : x1 + 1]
        block[mask] = shade
    return Image(np.clip(img, 0.0, 1.0))


def augment(img: Image, rng_seed: int, noise_amplitude: float) -> Image:
    """Add seeded uniform noise to white pixels (gray level > threshold)."""
    if not (0.0 <= noise_amplitude <= 1.0):
        raise ValueError("noise amplitude must be within [0, 1]")
    if noise_amplitude == 0.0:
        return img.copy()
    rng = np.random.default_rng(rng_seed)
    out = img.pixels.copy()
    mask = out > WHITE_THRESHOLD
    noise = rng.uniform(-noise_amplitude, noise_amplitude, size=out.shape)
    out[mask] = np.clip(out[mask] + noise[mask], 0.0, 1.0)
    return Image(out)


def connector_mask(img: Image) -> np.ndarray:
    """Pixels rendered dark enough to belong to the connector."""
    return img.pixels < WHITE_THRESHOLD


def occlude(img: Image, visible_fraction: float) -> Image:
    """Mask a border band so ~visible_fraction of connector pixels remain.

    Tries bands growing from each of the four image borders and keeps the
    one whose remaining connector-pixel fraction is closest to the target.
    """
    if visible_fraction <= 0.0:
        raise ValueError("visible fraction must be positive")
    if visible_fraction >= 1.0:
        return img.copy()
    mask = connector_mask(img)
    total = int(mask.sum())
    if total == 0:
        return img.copy()
    whites = img.pixels[~mask]
    fill = float(np.median(whites)) if whites.size else 1.0

    best = None  # (abs fraction error, side, width)
    h, w = img.pixels.shape
    for side in ("left", "right", "top", "bottom"):
        if side in ("left", "right"):
            axis_counts = mask.sum(axis=0)
            if side == "right":
                axis_counts = axis_counts[::-1]
            limit = w
        else:
            axis_counts = mask.sum(axis=1)
            if side == "bottom":
                axis_counts = axis_counts[::-1]
            limit = h
        hidden = np.cumsum(axis_counts)
        for width in range(1, limit):
            frac = (total - hidden[width - 1]) / total
            err = abs(frac - visible_fraction)
            if best is None or err < best[0]:
                best = (err, side, width)

    _, side, width = best
    out = img.pixels.copy()
    if side == "left":
        out[:, :width] = fill
    elif side == "right":
        out[:, w - width :] = fill
    elif side == "top":
        out[:width, :] = fill
    else:
        out[h - width :, :] = fill
    return Image(out)


def overhead_camera_rotation() -> Quat:
    """Rotation aligning camera +z with world -z (camera looking down)."""
    return Quat.from_axis_angle((1.0, 0.0, 0.0), math.pi)


def save_scene_json(scene: SceneState, path) -> None:
    with open(path, "w") as f:
        json.dump(scene.to_json(), f, indent=2)


def load_scene_json(path) -> SceneState:
    with open(path) as f:
        return SceneState.from_json(json.load(f))
