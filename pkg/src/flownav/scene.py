"""Deterministic synthetic world and pinhole ground-plane renderer.

The world is a flat ground plane carrying a multi-segment road (straights and
arcs), box obstacles and a goal point. Frames are produced by casting one ray
per pixel from the camera and shading ground hits with a seeded value-noise
texture plus lane markings; this replaces an external driving simulator for
closed-loop runs.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameterError
from .imgproc import GrayImage
from .vehicle import VehicleState, wrap_angle

LANE_WIDTH = 3.5
SKY_INTENSITY = 0.8


# ---------------------------------------------------------------------------
# road geometry
# ---------------------------------------------------------------------------


@dataclass
class RoadSegment:
    kind: str              # "straight" | "arc"
    length: float          # arclength in m
    radius: float = 0.0    # arc only
    turn: int = 0          # +1 left, -1 right (arc only)


class Road:
    """Piecewise straight/arc centerline with signed lateral projection.

    Lateral offsets are positive to the LEFT of the direction of travel.
    """

    def __init__(self, segments, width=14.0, lane_count=4):
        if not segments:
            raise InvalidParameterError("road needs at least one segment")
        if abs(width - lane_count * LANE_WIDTH) > 1e-9:
            raise InvalidParameterError("road width must equal lane_count * 3.5 m")
        self.segments = list(segments)
        self.width = width
        self.lane_count = lane_count
        self._starts = []  # (s0, x, y, heading)
        s = x = y = h = 0.0
        for seg in self.segments:
            self._starts.append((s, x, y, h))
            if seg.kind == "straight":
                x += seg.length * math.cos(h)
                y += seg.length * math.sin(h)
            elif seg.kind == "arc":
                if seg.radius <= 0 or seg.turn not in (-1, 1):
                    raise InvalidParameterError("arc needs positive radius and turn ±1")
                sweep = seg.length / seg.radius * seg.turn
                # center sits on the turn side
                cx = x - seg.radius * math.sin(h) * seg.turn
                cy = y + seg.radius * math.cos(h) * seg.turn
                a0 = math.atan2(y - cy, x - cx)
                a1 = a0 + sweep
                x = cx + seg.radius * math.cos(a1)
                y = cy + seg.radius * math.sin(a1)
                h = wrap_angle(h + sweep)
            else:
                raise InvalidParameterError(f"unknown segment kind {seg.kind!r}")
            s += seg.length
        self.total_length = s

    def pose_at(self, s):
        """(x, y, heading) of the centerline at arclength s (clamped)."""
        s = min(max(s, 0.0), self.total_length)
        for seg, (s0, x, y, h) in zip(self.segments, self._starts):
            if s <= s0 + seg.length + 1e-9:
                ds = s - s0
                if seg.kind == "straight":
                    return (x + ds * math.cos(h), y + ds * math.sin(h), h)
                sweep = ds / seg.radius * seg.turn
                cx = x - seg.radius * math.sin(h) * seg.turn
                cy = y + seg.radius * math.cos(h) * seg.turn
                a0 = math.atan2(y - cy, x - cx)
                a = a0 + sweep
                return (cx + seg.radius * math.cos(a),
                        cy + seg.radius * math.sin(a),
                        wrap_angle(h + sweep))
        raise InvalidParameterError(f"arclength {s} outside road")

    def project(self, px, py):
        """Vectorized projection of points onto the centerline.

        Returns (s, d): arclength (clamped to [0, total]) and signed lateral
        offset, positive left of travel direction.
        """
        px = np.asarray(px, dtype=np.float64)
        py = np.asarray(py, dtype=np.float64)
        best_dist = np.full(px.shape, np.inf)
        best_s = np.zeros(px.shape)
        best_d = np.zeros(px.shape)
        for seg, (s0, x0, y0, h) in zip(self.segments, self._starts):
            ch, sh = math.cos(h), math.sin(h)
            dx = px - x0
            dy = py - y0
            if seg.kind == "straight":
                s_loc = np.clip(ch * dx + sh * dy, 0.0, seg.length)
                cx = x0 + s_loc * ch
                cy = y0 + s_loc * sh
                hh = np.full(px.shape, h)
            else:
                ccx = x0 - seg.radius * sh * seg.turn
                ccy = y0 + seg.radius * ch * seg.turn
                a0 = math.atan2(y0 - ccy, x0 - ccx)
                ang = np.arctan2(py - ccy, px - ccx)
                sweep = (ang - a0) * seg.turn
                sweep = np.mod(sweep + math.pi, 2 * math.pi) - math.pi
                s_loc = np.clip(sweep * seg.radius, 0.0, seg.length)
                a = a0 + s_loc / seg.radius * seg.turn
                cx = ccx + seg.radius * np.cos(a)
                cy = ccy + seg.radius * np.sin(a)
                hh = h + s_loc / seg.radius * seg.turn
            ddx = px - cx
            ddy = py - cy
            dist = np.hypot(ddx, ddy)
            lat = -np.sin(hh) * ddx + np.cos(hh) * ddy
            closer = dist < best_dist
            best_dist = np.where(closer, dist, best_dist)
            best_s = np.where(closer, s0 + s_loc, best_s)
            best_d = np.where(closer, lat, best_d)
        return best_s, best_d


# ---------------------------------------------------------------------------
# world + camera
# ---------------------------------------------------------------------------


@dataclass
class BoxObstacle:
    x: float
    y: float
    hx: float
    hy: float
    hz: float
    intensity: float = 0.1


@dataclass
class WorldConfig:
    road: Road
    obstacles: list
    goal: tuple
    texture_seed: int = 7
    start_state: VehicleState = field(default_factory=VehicleState)


@dataclass
class CameraModel:
    offset: tuple = (1.0, 0.0, 1.4)   # (forward, left, up) from the CG, m
    pitch: float = math.radians(-5.0)
    focal: float = 280.0
    cx: float = 160.0
    cy: float = 120.0
    width: int = 320
    height: int = 240

    _dirs: np.ndarray = field(default=None, repr=False, compare=False)

    def pixel_dirs(self):
        """Cached camera-frame ray directions (x right, y down, z forward)."""
        if self._dirs is None:
            us, vs = np.meshgrid(np.arange(self.width), np.arange(self.height))
            self._dirs = np.stack([(us - self.cx) / self.focal,
                                   (vs - self.cy) / self.focal,
                                   np.ones_like(us, dtype=np.float64)], axis=-1)
        return self._dirs

    @property
    def horizon_row(self):
        """Image row of the ground-plane horizon (level flight)."""
        return self.cy + self.focal * math.tan(self.pitch)


# ---------------------------------------------------------------------------
# seeded value noise
# ---------------------------------------------------------------------------

_MASK = np.uint64(0xFFFFFFFFFFFFFFFF)


def _hash01(ix, iy, seed):
    seed_mix = np.uint64((seed * 0x165667B19E3779F9) & 0xFFFFFFFFFFFFFFFF)
    h = (ix.astype(np.uint64) * np.uint64(0x9E3779B97F4A7C15)
         ^ iy.astype(np.uint64) * np.uint64(0xC2B2AE3D27D4EB4F)
         ^ seed_mix)
    h ^= h >> np.uint64(33)
    h *= np.uint64(0xFF51AFD7ED558CCD)
    h ^= h >> np.uint64(33)
    return (h >> np.uint64(11)).astype(np.float64) / float(1 << 53)


def _lattice_noise(u, v, seed):
    iu = np.floor(u)
    iv = np.floor(v)
    fu = u - iu
    fv = v - iv
    fu = fu * fu * (3.0 - 2.0 * fu)
    fv = fv * fv * (3.0 - 2.0 * fv)
    iu = iu.astype(np.int64)
    iv = iv.astype(np.int64)
    n00 = _hash01(iu, iv, seed)
    n10 = _hash01(iu + 1, iv, seed)
    n01 = _hash01(iu, iv + 1, seed)
    n11 = _hash01(iu + 1, iv + 1, seed)
    top = n00 * (1 - fu) + n10 * fu
    bot = n01 * (1 - fu) + n11 * fu
    return top * (1 - fv) + bot * fv


def value_noise(u, v, seed, octaves=3, foot=None):
    """Seeded multi-octave value noise in [0, 1].

    foot (same units as u/v) is the sampling footprint per output sample;
    octaves whose wavelength approaches it are faded out toward their mean,
    the analytic equivalent of mip-mapping. Without it, distant texture
    aliases into frame-to-frame shimmer that a tracker mistakes for motion.
    """
    total = np.zeros(np.shape(u))
    amp = 1.0
    norm = 0.0
    freq = 1.0
    for o in range(octaves):
        amp_eff = amp
        if foot is not None:
            cyc = freq * np.asarray(foot)       # cycles per footprint
            amp_eff = amp * np.clip((0.5 - cyc) / 0.25, 0.0, 1.0)
        total = total + amp_eff * (_lattice_noise(np.asarray(u) * freq,
                                                  np.asarray(v) * freq,
                                                  seed + 101 * o) - 0.5)
        norm += amp
        amp *= 0.5
        freq *= 2.0
    return 0.5 + total / norm


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------


def _camera_basis(psi, pitch):
    ct, st = math.cos(pitch), math.sin(pitch)
    cp, sp = math.cos(psi), math.sin(psi)
    forward = np.array([ct * cp, ct * sp, st])
    right = np.array([sp, -cp, 0.0])
    down = np.array([st * cp, st * sp, -ct])
    return right, down, forward


def _shade_ground(world, gx, gy, foot=None):
    """Texture value for ground-plane points (vectorized).

    foot is the per-sample ground footprint in metres; texture octaves and
    lane-marking coverage are anti-aliased against it.
    """
    s, d = world.road.project(gx, gy)
    seed = world.texture_seed
    if foot is None:
        foot = np.zeros_like(s)
    on_road = np.abs(d) <= world.road.width / 2.0
    off_road = ~on_road
    val = np.empty_like(s)
    val[on_road] = 0.33 + 0.28 * value_noise(s[on_road] * 1.7, d[on_road] * 1.7,
                                             seed, octaves=3,
                                             foot=foot[on_road] * 1.7)
    val[off_road] = 0.52 + 0.18 * value_noise(s[off_road] * 1.3,
                                              d[off_road] * 1.3, seed + 7,
                                              foot=foot[off_road] * 1.3)
    # lane markings: solid edges, dashed interior boundaries. Coverage
    # blending: a line narrower than the sample footprint dims smoothly
    # instead of shimmering.
    aa = np.maximum(foot, 1e-6)
    half = world.road.width / 2.0
    for b in (-half, half):
        cov = np.clip((0.15 - np.abs(d - b)) / aa + 0.5, 0.0, 1.0)
        val = val + (0.92 - val) * cov
    for b in (-LANE_WIDTH, 0.0, LANE_WIDTH):
        cov = np.clip((0.10 - np.abs(d - b)) / aa + 0.5, 0.0, 1.0)
        cov = np.where(np.mod(s, 12.0) < 3.0, cov, 0.0)
        val = val + (0.92 - val) * cov
    return val


def _box_hits(box, origin, dirs, seed):
    """Slab-method ray/AABB intersection; returns (t, shade) arrays."""
    lo = np.array([box.x - box.hx, box.y - box.hy, 0.0])
    hi = np.array([box.x + box.hx, box.y + box.hy, 2.0 * box.hz])
    t_near = np.full(dirs.shape[:-1], -np.inf)
    t_far = np.full(dirs.shape[:-1], np.inf)
    ok = np.ones(dirs.shape[:-1], dtype=bool)
    for k in range(3):
        dk = dirs[..., k]
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (lo[k] - origin[k]) / dk
            t2 = (hi[k] - origin[k]) / dk
        swap = t1 > t2
        t1, t2 = np.where(swap, t2, t1), np.where(swap, t1, t2)
        par = np.abs(dk) < 1e-12
        inside = (origin[k] >= lo[k]) & (origin[k] <= hi[k])
        t1 = np.where(par, np.where(inside, -np.inf, np.inf), t1)
        t2 = np.where(par, np.where(inside, np.inf, -np.inf), t2)
        t_near = np.maximum(t_near, t1)
        t_far = np.minimum(t_far, t2)
    ok = (t_near <= t_far) & (t_far > 0.0)
    t = np.where(t_near > 0.0, t_near, t_far)
    t = np.where(ok, t, np.inf)
    t_safe = np.where(np.isfinite(t), t, 0.0)
    hit = origin[None, None, :] + dirs * t_safe[..., None]
    shade = np.clip(box.intensity
                    + 0.12 * (value_noise(hit[..., 0] * 4.1 + hit[..., 2] * 2.3,
                                          hit[..., 1] * 4.1 + hit[..., 2] * 1.7,
                                          seed + 31) - 0.5), 0.0, 1.0)
    return t, shade


def render(world, cam, state):
    """Render the grayscale camera view for a vehicle state. Deterministic."""
    if cam.offset[2] <= 0:
        raise InvalidParameterError("camera must sit above the ground plane")
    right, down, forward = _camera_basis(state.psi, cam.pitch)
    basis = np.stack([right, down, forward])          # (3, 3)
    dirs = cam.pixel_dirs() @ basis                   # (H, W, 3) world rays
    cp, sp = math.cos(state.psi), math.sin(state.psi)
    ox = state.x + cam.offset[0] * cp - cam.offset[1] * sp
    oy = state.y + cam.offset[0] * sp + cam.offset[1] * cp
    origin = np.array([ox, oy, cam.offset[2]])

    dz = dirs[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        t_ground = np.where(dz < -1e-9, -origin[2] / dz, np.inf)
    img = np.full(dz.shape, SKY_INTENSITY)
    ground = np.isfinite(t_ground)
    if ground.any():
        gx = origin[0] + dirs[..., 0][ground] * t_ground[ground]
        gy = origin[1] + dirs[..., 1][ground] * t_ground[ground]
        # ground footprint of one pixel: (t * |dir| / f) across the ray,
        # divided by the grazing factor |dz| / |dir|
        norm2 = np.sum(dirs * dirs, axis=-1)[ground]
        foot = (t_ground[ground] * norm2
                / (cam.focal * np.maximum(np.abs(dz[ground]), 1e-9)))
        img[ground] = _shade_ground(world, gx, gy, foot)

    t_best = t_ground
    for box in world.obstacles:
        t_box, shade = _box_hits(box, origin, dirs, world.texture_seed)
        closer = t_box < t_best
        img = np.where(closer, shade, img)
        t_best = np.where(closer, t_box, t_best)
    return GrayImage(np.clip(img, 0.0, 1.0))


# ---------------------------------------------------------------------------
# weather degradation
# ---------------------------------------------------------------------------


def droplet_spots(shape, seed, count=40):
    """Deterministic droplet ellipse list: (cx, cy, rx, ry)."""
    h, w = shape
    rng = np.random.default_rng(seed)
    spots = []
    for _ in range(count):
        cx = rng.uniform(0, w)
        cy = rng.uniform(0, h)
        rx = rng.uniform(1.5, 4.0)
        ry = rx * rng.uniform(1.0, 2.0)
        spots.append((cx, cy, rx, ry))
    return spots


def degrade(img, mode, seed=0):
    """Weather degradation: identity for 'clear', wet-road mirror plus
    windshield droplets for 'rain'."""
    if mode == "clear":
        return img
    if mode != "rain":
        raise InvalidParameterError(f"unknown weather mode {mode!r}")
    data = img.data.copy()
    h, w = data.shape
    h0 = int(0.4 * h)
    rows = np.arange(h0, h)
    src = np.clip(2 * h0 - rows, 0, h - 1)
    data[rows] = 0.65 * data[rows] + 0.35 * data[src]
    ys, xs = np.mgrid[0:h, 0:w]
    for cx, cy, rx, ry in droplet_spots((h, w), seed):
        blob = np.exp(-(((xs - cx) / rx) ** 2 + ((ys - cy) / ry) ** 2))
        data += 0.3 * np.where(blob > 0.05, blob, 0.0)
    return GrayImage(np.clip(data, 0.0, 1.0))


# ---------------------------------------------------------------------------
# ground truth + built-in courses
# ---------------------------------------------------------------------------


def ground_truth(world, state):
    """Exact world-geometry quantities for a vehicle state."""
    s, d = world.road.project(np.array([state.x]), np.array([state.y]))
    dist_goal = math.hypot(state.x - world.goal[0], state.y - world.goal[1])
    clearance = math.inf
    for box in world.obstacles:
        ddx = max(abs(state.x - box.x) - box.hx, 0.0)
        ddy = max(abs(state.y - box.y) - box.hy, 0.0)
        clearance = min(clearance, math.hypot(ddx, ddy))
    return {
        "arclength": float(s[0]),
        "lateral_offset": float(d[0]),
        "distance_to_goal": dist_goal,
        "clearance": clearance,
    }


def make_course(name, seed=7):
    """Built-in closed-loop courses.

    straight-arc:       120 m straight into a 100 m arc (R = 200 m, left).
    straight:           a plain 220 m straight.
    obstacles:          straight-arc course with two boxes near the cruise line.
    """
    segments = {
        "straight": [RoadSegment("straight", 220.0)],
        "straight-arc": [RoadSegment("straight", 120.0),
                         RoadSegment("arc", 100.0, radius=200.0, turn=1)],
        "obstacles": [RoadSegment("straight", 120.0),
                      RoadSegment("arc", 100.0, radius=200.0, turn=1)],
    }
    if name not in segments:
        raise InvalidParameterError(f"unknown course {name!r}")
    road = Road(segments[name])
    obstacles = []
    if name == "obstacles":
        for s_obs, d_obs, intensity in ((70.0, 0.9, 0.08), (150.0, -0.9, 0.95)):
            x, y, h = road.pose_at(s_obs)
            x += -math.sin(h) * d_obs
            y += math.cos(h) * d_obs
            obstacles.append(BoxObstacle(x, y, 0.8, 0.8, 1.25, intensity))
    gx, gy, _ = road.pose_at(road.total_length - 2.0)
    x0, y0, h0 = road.pose_at(2.0)
    start = VehicleState(x=x0, y=y0, psi=h0, v=0.0, delta_f=0.0)
    return WorldConfig(road=road, obstacles=obstacles, goal=(gx, gy),
                       texture_seed=seed, start_state=start)
