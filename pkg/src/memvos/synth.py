"""Deterministic moving-shapes sequences with exact ground truth.

Shapes translate at constant velocity and bounce elastically off the canvas
edges. Occluders are painted after the objects, so ground truth keeps an
object's id only where it is actually visible. Optional uniform noise is the
only source of randomness; everything else is pure kinematics, so masks can
be recomputed independently and must match bit for bit.

Also holds the reference segmenter the pipeline is measured against: label
every pixel with the first-frame label whose mean color is nearest.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .types import DataError, ImageFrame, LabelMask, ObjectSet

MIN_CANVAS_SIDE = 8
MIN_COLOR_GAP = 40


@dataclass(frozen=True)
class Shape:
    """One moving disk or rectangle.

    `size` is the disk radius or the rectangle's half-width; `size_y` is the
    rectangle's half-height (None keeps it square). Positions and velocities
    are in pixels, pixel centers at integer coordinates.
    """

    kind: str
    cx: float
    cy: float
    vx: float
    vy: float
    size: float
    size_y: float | None = None
    color: tuple[int, int, int] = (255, 255, 255)

    def __post_init__(self) -> None:
        if self.kind not in ("disk", "rect"):
            raise DataError(f"shape kind must be disk or rect, got {self.kind!r}")
        if self.kind == "disk" and self.size_y is not None:
            raise DataError("size_y only applies to rect shapes")
        if not self.size > 0 or (self.size_y is not None and not self.size_y > 0):
            raise DataError("shape sizes must be > 0")
        if len(self.color) != 3 or any(not 0 <= c <= 255 for c in self.color):
            raise DataError(f"color must be three values in 0..255, got {self.color}")

    @property
    def extent_x(self) -> float:
        return self.size

    @property
    def extent_y(self) -> float:
        return self.size if self.size_y is None else self.size_y

    def contains(self, ys: np.ndarray, xs: np.ndarray, cx: float, cy: float) -> np.ndarray:
        if self.kind == "disk":
            return (xs - cx) ** 2 + (ys - cy) ** 2 <= self.size**2
        return (np.abs(xs - cx) <= self.extent_x) & (np.abs(ys - cy) <= self.extent_y)


@dataclass(frozen=True)
class SynthSpec:
    height: int
    width: int
    frames: int
    objects: tuple[Shape, ...]
    occluders: tuple[Shape, ...] = ()
    background: tuple[int, int, int] = (51, 51, 51)
    noise: float = 0.0

    def __post_init__(self) -> None:
        if self.height < MIN_CANVAS_SIDE or self.width < MIN_CANVAS_SIDE:
            raise DataError(f"canvas must be at least {MIN_CANVAS_SIDE} pixels per side")
        if self.frames < 1:
            raise DataError("frames must be >= 1")
        if not 1 <= len(self.objects) <= 255:
            raise DataError("need between 1 and 255 objects")
        if self.noise < 0:
            raise DataError("noise amplitude must be >= 0")
        if len(self.background) != 3 or any(not 0 <= c <= 255 for c in self.background):
            raise DataError(f"background must be three values in 0..255, got {self.background}")
        for a_idx in range(len(self.objects)):
            for b_idx in range(a_idx + 1, len(self.objects)):
                a, b = self.objects[a_idx].color, self.objects[b_idx].color
                gap = min(abs(a[k] - b[k]) for k in range(3))
                if gap < MIN_COLOR_GAP:
                    raise DataError(
                        f"object colors {a} and {b} must differ by >= {MIN_COLOR_GAP} in every channel"
                    )
        for shape in (*self.objects, *self.occluders):
            lo_x, hi_x = shape.extent_x, self.width - 1 - shape.extent_x
            lo_y, hi_y = shape.extent_y, self.height - 1 - shape.extent_y
            if not (lo_x <= shape.cx <= hi_x and lo_y <= shape.cy <= hi_y):
                raise DataError(
                    f"shape at ({shape.cx}, {shape.cy}) with extents "
                    f"({shape.extent_x}, {shape.extent_y}) does not fit the canvas at frame 0"
                )
            if abs(shape.vx) > self.width / 2 or abs(shape.vy) > self.height / 2:
                raise DataError("shape velocity may not exceed half the canvas per frame")

    @property
    def object_set(self) -> ObjectSet:
        return ObjectSet(tuple(range(1, len(self.objects) + 1)))


def _bounce(pos: float, vel: float, lo: float, hi: float) -> tuple[float, float]:
    pos += vel
    while pos < lo or pos > hi:
        if pos < lo:
            pos = 2 * lo - pos
        else:
            pos = 2 * hi - pos
        vel = -vel
    return pos, vel


def synth_generate(spec: SynthSpec, seed: int) -> tuple[list[ImageFrame], list[LabelMask]]:
    """Render the sequence: frames with noise plus exact per-frame ground truth."""
    rng = np.random.default_rng(seed)
    ys, xs = np.mgrid[0 : spec.height, 0 : spec.width].astype(np.float64)
    state = [[s.cx, s.cy, s.vx, s.vy] for s in (*spec.objects, *spec.occluders)]
    n_objects = len(spec.objects)
    frames = []
    gts = []
    for _ in range(spec.frames):
        canvas = np.empty((spec.height, spec.width, 3), dtype=np.float64)
        canvas[...] = spec.background
        gt = np.zeros((spec.height, spec.width), dtype=np.uint8)
        for idx, shape in enumerate((*spec.objects, *spec.occluders)):
            cx, cy = state[idx][0], state[idx][1]
            inside = shape.contains(ys, xs, cx, cy)
            canvas[inside] = shape.color
            gt[inside] = idx + 1 if idx < n_objects else 0
        if spec.noise > 0:
            canvas += rng.uniform(-spec.noise, spec.noise, size=canvas.shape)
        frames.append(ImageFrame(np.clip(np.rint(canvas), 0, 255).astype(np.uint8)))
        gts.append(LabelMask(gt))
        for idx, shape in enumerate((*spec.objects, *spec.occluders)):
            cx, cy, vx, vy = state[idx]
            cx, vx = _bounce(cx, vx, shape.extent_x, spec.width - 1 - shape.extent_x)
            cy, vy = _bounce(cy, vy, shape.extent_y, spec.height - 1 - shape.extent_y)
            state[idx] = [cx, cy, vx, vy]
    return frames, gts


def nearest_color_baseline(frames: list[ImageFrame], first_mask: LabelMask) -> list[LabelMask]:
    """Label every pixel with the first-frame label of the nearest mean color.

    Frame 0 passes the given mask through; later frames are classified
    per pixel by squared distance to each label's frame-0 mean color, ties
    going to the lowest label.
    """
    if not frames:
        raise DataError("need at least one frame")
    if first_mask.ids.shape != frames[0].rgb.shape[:2]:
        raise DataError("first mask size does not match the frames")
    labels = np.unique(first_mask.ids)
    ref = frames[0].rgb.astype(np.float64)
    means = np.stack([ref[first_mask.ids == lab].mean(axis=0) for lab in labels])
    out = [first_mask]
    for frame in frames[1:]:
        img = frame.rgb.astype(np.float64)
        dists = ((img[None] - means[:, None, None, :]) ** 2).sum(axis=-1)
        picked = labels[np.argmin(dists, axis=0)]
        out.append(LabelMask(picked.astype(np.uint8)))
    return out


# ---------------------------------------------------------------------------
# Benchmark suites. The seeds are part of the published benchmark definition;
# changing any entry changes every score measured against it.
# ---------------------------------------------------------------------------

# Object colors are deliberately saturated and sum-balanced: each channel
# triple adds up to 3 * 128, so around mid-gray every object direction is
# orthogonal to every gray (background, white occluders, shadows), and the
# three primaries are mutually obtuse with equal norms. Washed-out tones
# (low norm, small angle to a brighter neighbour) make one surface's cells
# indistinguishable from another's; these cannot shadow each other.
WHITE = (235, 235, 235)
RED = (232, 48, 104)
GREEN = (104, 232, 48)
BLUE = (48, 104, 232)
DARK = (99, 99, 99)
MAGENTA = (160, 24, 200)

# Occluder tints sitting a few counts away from an object color. A per-pixel
# color classifier latches onto them permanently; anything with temporal
# reasoning can drop them.
RED_DECOY = (224, 44, 116)
GREEN_DECOY = (116, 224, 44)


@dataclass(frozen=True)
class SuiteEntry:
    name: str
    spec: SynthSpec
    seed: int


def _canvas(objects, occluders=(), noise=0.0, frames=30, side=128):
    return SynthSpec(
        height=side,
        width=side,
        frames=frames,
        objects=tuple(objects),
        occluders=tuple(occluders),
        noise=noise,
    )


DYNAMIC_SUITE = (
    SuiteEntry(
        "slide",
        _canvas(
            [Shape("disk", 38, 46, 1.5, 0.8, 24, color=RED)],
            [
                Shape("rect", 104, 46, -3.0, 0.0, 7, 22, color=WHITE),
                Shape("rect", 14, 116, 0.0, 0.0, 7, 7, color=RED_DECOY),
            ],
            noise=22,
        ),
        1101,
    ),
    SuiteEntry(
        "two-disks",
        _canvas(
            [
                Shape("disk", 28, 34, 1.7, 0.2, 22, color=RED),
                Shape("disk", 100, 96, -1.7, -0.2, 22, color=GREEN),
            ],
            [
                Shape("rect", 64, 14, 0.0, 2.4, 20, 6, color=WHITE),
                Shape("rect", 14, 114, 0.0, 0.0, 8, 8, color=RED_DECOY),
                Shape("rect", 114, 14, 0.0, 0.0, 8, 8, color=GREEN_DECOY),
            ],
            noise=22,
        ),
        1102,
    ),
    SuiteEntry(
        "dark-drift",
        _canvas(
            [
                Shape("disk", 40, 84, 1.2, -0.6, 22, color=DARK),
                Shape("rect", 96, 30, -1.0, 0.4, 16, 14, color=MAGENTA),
            ],
            [Shape("rect", 64, 108, 2.2, 0.0, 16, 5, color=WHITE)],
            noise=40,
        ),
        1103,
    ),
    SuiteEntry(
        "decoy",
        _canvas(
            [Shape("disk", 30, 98, 0.7, -1.3, 22, color=RED)],
            [Shape("rect", 112, 12, 0.0, 0.0, 7, 7, color=RED_DECOY)],
            noise=22,
        ),
        1104,
    ),
    SuiteEntry(
        "small-object",
        _canvas(
            [
                Shape("disk", 68, 60, 1.1, 0.6, 10, color=BLUE),
                Shape("rect", 30, 30, 0.9, 1.2, 16, 14, color=RED),
            ],
            [Shape("rect", 108, 104, -0.6, -2.6, 10, 7, color=WHITE)],
            noise=20,
        ),
        1105,
    ),
    SuiteEntry(
        "bounce",
        _canvas(
            [Shape("disk", 30, 30, 4.0, 3.1, 23, color=GREEN)],
            [Shape("rect", 116, 14, 0.0, 0.0, 9, 9, color=GREEN_DECOY)],
            noise=24,
        ),
        1106,
    ),
    SuiteEntry(
        "cross",
        _canvas(
            [
                Shape("rect", 30, 64, 2.2, 0.0, 18, 14, color=RED),
                Shape("rect", 98, 64, -2.2, 0.0, 14, 18, color=GREEN),
            ],
            [
                Shape("rect", 16, 16, 0.0, 0.0, 8, 8, color=RED_DECOY),
                Shape("rect", 112, 112, 0.0, 0.0, 8, 8, color=GREEN_DECOY),
            ],
            noise=22,
        ),
        1107,
    ),
    SuiteEntry(
        "gauntlet",
        _canvas(
            [
                Shape("disk", 36, 36, 1.0, 0.7, 22, color=RED),
                Shape("rect", 96, 28, -2.4, 1.5, 16, 12, color=GREEN),
                Shape("disk", 96, 96, -0.3, -0.2, 16, color=BLUE),
            ],
            [
                Shape("rect", 64, 12, 0.0, 2.2, 18, 5, color=WHITE),
                Shape("rect", 118, 64, 0.0, 0.0, 8, 8, color=RED_DECOY),
                Shape("rect", 14, 116, 0.0, 0.0, 8, 8, color=GREEN_DECOY),
            ],
            noise=26,
        ),
        1108,
    ),
)

# Static scenes: zero motion, zero noise, block-aligned full-width or
# full-height bands. Used to pin down exact mask recovery.


def _band_h(r0: int, r1: int, color) -> Shape:
    cy = (r0 + r1) / 2.0
    sy = (r1 - r0) / 2.0
    return Shape("rect", 63.5, cy, 0.0, 0.0, 63.5, sy, color=color)


def _band_v(c0: int, c1: int, color) -> Shape:
    cx = (c0 + c1) / 2.0
    sx = (c1 - c0) / 2.0
    return Shape("rect", cx, 63.5, 0.0, 0.0, sx, 63.5, color=color)


STATIC_SUITE = (
    SuiteEntry("band-one", _canvas([_band_h(32, 63, RED)], frames=10), 2101),
    SuiteEntry(
        "band-two",
        _canvas([_band_h(16, 47, RED), _band_h(80, 111, GREEN)], frames=10),
        2102,
    ),
    SuiteEntry("column", _canvas([_band_v(48, 95, BLUE)], frames=10), 2103),
    SuiteEntry(
        "band-three",
        _canvas(
            [_band_h(0, 31, RED), _band_h(48, 79, GREEN), _band_h(96, 127, BLUE)],
            frames=10,
        ),
        2104,
    ),
)


# ---------------------------------------------------------------------------
# Flat text format for describing a scene to the synth CLI command.
# ---------------------------------------------------------------------------


def _parse_color(token: str, line_no: int) -> tuple[int, int, int]:
    parts = token.split(",")
    if len(parts) != 3:
        raise DataError(f"line {line_no}: color needs three comma-separated values")
    try:
        values = tuple(int(p) for p in parts)
    except ValueError:
        raise DataError(f"line {line_no}: color values must be integers") from None
    return values  # range-checked by Shape/SynthSpec


def _parse_shape(value: str, line_no: int) -> Shape:
    tokens = value.split()
    if not tokens:
        raise DataError(f"line {line_no}: shape definition is empty")
    kind = tokens[0]
    fields: dict[str, object] = {}
    for token in tokens[1:]:
        if "=" not in token:
            raise DataError(f"line {line_no}: expected key=value, got {token!r}")
        key, _, raw = token.partition("=")
        if key in ("cx", "cy", "vx", "vy", "size", "size_y"):
            try:
                fields[key] = float(raw)
            except ValueError:
                raise DataError(f"line {line_no}: {key} must be a number, got {raw!r}") from None
        elif key == "color":
            fields[key] = _parse_color(raw, line_no)
        else:
            raise DataError(f"line {line_no}: unknown shape field {key!r}")
    missing = {"cx", "cy", "size", "color"} - fields.keys()
    if missing:
        raise DataError(f"line {line_no}: shape is missing {sorted(missing)}")
    fields.setdefault("vx", 0.0)
    fields.setdefault("vy", 0.0)
    try:
        return Shape(kind=kind, **fields)  # type: ignore[arg-type]
    except DataError as exc:
        raise DataError(f"line {line_no}: {exc}") from None


def parse_synth_spec(text: str) -> SynthSpec:
    """Parse the flat scene description format.

    Scalar lines are `key = value` (height, width, frames, noise,
    background). Each `object = ...` or `occluder = ...` line holds a kind
    followed by key=value tokens, e.g.
    `object = disk cx=36 cy=40 vx=1.5 vy=0.8 size=13 color=200,80,60`.
    """
    scalars: dict[str, str] = {}
    objects: list[Shape] = []
    occluders: list[Shape] = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"line {line_no}: expected key = value")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key == "object":
            objects.append(_parse_shape(value, line_no))
        elif key == "occluder":
            occluders.append(_parse_shape(value, line_no))
        elif key in ("height", "width", "frames", "noise", "background"):
            if key in scalars:
                raise DataError(f"line {line_no}: duplicate key {key!r}")
            scalars[key] = value
        else:
            raise DataError(f"line {line_no}: unknown key {key!r}")
    missing = {"height", "width", "frames"} - scalars.keys()
    if missing:
        raise DataError(f"scene is missing {sorted(missing)}")
    try:
        height = int(scalars["height"])
        width = int(scalars["width"])
        frames = int(scalars["frames"])
        noise = float(scalars.get("noise", "0"))
    except ValueError as exc:
        raise DataError(f"bad scalar value: {exc}") from None
    background = (
        _parse_color(scalars["background"], 0) if "background" in scalars else (16, 16, 16)
    )
    return SynthSpec(
        height=height,
        width=width,
        frames=frames,
        objects=tuple(objects),
        occluders=tuple(occluders),
        background=background,
        noise=noise,
    )


def synth_spec_to_text(spec: SynthSpec) -> str:
    def shape_line(prefix: str, s: Shape) -> str:
        parts = [prefix, "=", s.kind, f"cx={s.cx!r}", f"cy={s.cy!r}", f"vx={s.vx!r}", f"vy={s.vy!r}", f"size={s.size!r}"]
        if s.size_y is not None:
            parts.append(f"size_y={s.size_y!r}")
        parts.append("color={},{},{}".format(*s.color))
        return " ".join(parts)

    lines = [
        f"height = {spec.height}",
        f"width = {spec.width}",
        f"frames = {spec.frames}",
        f"noise = {spec.noise!r}",
        "background = {},{},{}".format(*spec.background),
    ]
    lines.extend(shape_line("object", s) for s in spec.objects)
    lines.extend(shape_line("occluder", s) for s in spec.occluders)
    return "\n".join(lines) + "\n"
