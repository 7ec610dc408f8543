"""Layout editing: four semantics-preserving transformations over object
masks, plus the step-budgeted editor that composes an edited layout.

The four moves (tags MR1..MR4 in configs and traces):

- MR1 translate: integer shift, kept in-canvas by the bbox constraints
  -x_min <= dx <= Width-1-x_max and -y_min <= dy <= Height-1-y_max.
- MR2 rotate: nearest-neighbor rotation about the object's bbox center.
- MR3 scale: nearest-neighbor scaling about the same center.
- MR4 mirror: left-right reflection about the object's own vertical
  center line x -> (x_min + x_max) - x.

Rotation and scaling may clip at the canvas border; the editor resamples
a step when too little of the object survives, and also when the edited
composition would change any category's connected-component count, so an
edit never changes what is in the picture, only where it is.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from random import Random
from typing import Mapping, Optional, Sequence

import numpy as np

from .core import (
    BinaryMask,
    ObjectInstance,
    SemanticMap,
    component_census,
    tight_bbox,
)
from .errors import (
    ConstraintViolation,
    DegenerateTransform,
    EditExhausted,
    NoLegalMove,
    ShapeError,
)

MR_TAGS = ("MR1", "MR2", "MR3", "MR4")


@dataclass(frozen=True)
class EditConfig:
    """Knobs for one editing pass (one pass applies `step_budget` moves)."""

    step_budget: int = 1
    rotation_range_deg: tuple[float, float] = (-30.0, 30.0)
    rotation_dead_zone_deg: float = 2.0
    scale_range: tuple[float, float] = (0.6, 1.4)
    scale_dead_zone: tuple[float, float] = (0.95, 1.05)
    enabled_mrs: tuple[str, ...] = MR_TAGS
    max_resample_attempts: int = 10
    min_retained_area_fraction: float = 0.5

    def __post_init__(self):
        if self.step_budget < 1:
            raise ValueError(f"step_budget must be >= 1, got {self.step_budget}")
        lo, hi = self.rotation_range_deg
        if not lo < hi:
            raise ValueError(f"rotation range {self.rotation_range_deg} is not well-ordered")
        if self.rotation_dead_zone_deg < 0 or self.rotation_dead_zone_deg >= max(abs(lo), hi):
            raise ValueError(f"rotation dead zone {self.rotation_dead_zone_deg} outside range")
        slo, shi = self.scale_range
        dlo, dhi = self.scale_dead_zone
        if not 0 < slo < shi:
            raise ValueError(f"scale range {self.scale_range} is not well-ordered and positive")
        if not slo <= dlo < dhi <= shi:
            raise ValueError(f"scale dead zone {self.scale_dead_zone} not inside {self.scale_range}")
        mrs = tuple(self.enabled_mrs)
        if not mrs or not set(mrs) <= set(MR_TAGS):
            raise ValueError(f"enabled_mrs must be a non-empty subset of {MR_TAGS}, got {mrs}")
        object.__setattr__(self, "enabled_mrs", mrs)
        if self.max_resample_attempts < 1:
            raise ValueError("max_resample_attempts must be >= 1")
        if not 0 < self.min_retained_area_fraction <= 1:
            raise ValueError("min_retained_area_fraction must be in (0, 1]")

    def to_json_obj(self) -> dict:
        return {
            "step_budget": self.step_budget,
            "rotation_range_deg": list(self.rotation_range_deg),
            "rotation_dead_zone_deg": self.rotation_dead_zone_deg,
            "scale_range": list(self.scale_range),
            "scale_dead_zone": list(self.scale_dead_zone),
            "enabled_mrs": list(self.enabled_mrs),
            "max_resample_attempts": self.max_resample_attempts,
            "min_retained_area_fraction": self.min_retained_area_fraction,
        }

    @classmethod
    def from_json_obj(cls, obj: Mapping) -> "EditConfig":
        kwargs = dict(obj)
        for key in ("rotation_range_deg", "scale_range", "scale_dead_zone", "enabled_mrs"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)


@dataclass(frozen=True)
class EditStep:
    instance_id: str
    mr: str
    params: Mapping[str, object]

    def __post_init__(self):
        if self.mr not in MR_TAGS:
            raise ValueError(f"unknown MR tag {self.mr!r}")
        object.__setattr__(self, "params", dict(self.params))

    def to_json_obj(self) -> dict:
        return {"instance_id": self.instance_id, "mr": self.mr, "params": dict(self.params)}

    @classmethod
    def from_json_obj(cls, obj: Mapping) -> "EditStep":
        return cls(obj["instance_id"], obj["mr"], dict(obj["params"]))


@dataclass(frozen=True)
class EditTrace:
    steps: tuple[EditStep, ...]

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))

    def to_json_obj(self) -> dict:
        return {"steps": [s.to_json_obj() for s in self.steps]}

    @classmethod
    def from_json_obj(cls, obj: Mapping) -> "EditTrace":
        return cls(tuple(EditStep.from_json_obj(s) for s in obj["steps"]))


# ---------------------------------------------------------------------------
# single-object transformations


def _check_canvas(obj: ObjectInstance, canvas: tuple[int, int]):
    width, height = canvas
    if (obj.mask.height, obj.mask.width) != (height, width):
        raise ShapeError(
            f"object mask {obj.mask.width}x{obj.mask.height} does not match "
            f"canvas {width}x{height}"
        )


def _replace_mask(obj: ObjectInstance, bits: np.ndarray) -> ObjectInstance:
    mask = BinaryMask(bits)
    return ObjectInstance(obj.instance_id, obj.category, mask, tight_bbox(mask), obj.z_order)


def translation_bounds(obj: ObjectInstance, canvas: tuple[int, int]) -> tuple[range, range]:
    """Inclusive legal shift ranges keeping the bbox fully in-canvas."""
    width, height = canvas
    box = obj.bbox
    return (
        range(-box.x_min, width - 1 - box.x_max + 1),
        range(-box.y_min, height - 1 - box.y_max + 1),
    )


def translate(obj: ObjectInstance, dx: int, dy: int, canvas: tuple[int, int]) -> ObjectInstance:
    _check_canvas(obj, canvas)
    xs, ys = translation_bounds(obj, canvas)
    if dx not in xs or dy not in ys:
        raise ConstraintViolation(
            f"shift ({dx}, {dy}) outside legal ranges x{[xs[0], xs[-1]]} y{[ys[0], ys[-1]]}"
        )
    box = obj.bbox
    bits = np.zeros_like(obj.mask.bits)
    sub = obj.mask.bits[box.y_min : box.y_max + 1, box.x_min : box.x_max + 1]
    bits[
        box.y_min + dy : box.y_max + 1 + dy, box.x_min + dx : box.x_max + 1 + dx
    ] = sub
    return _replace_mask(obj, bits)


def sample_translation(obj: ObjectInstance, canvas: tuple[int, int], rng: Random) -> tuple[int, int]:
    """Uniform over the legal integer shifts, excluding the null move."""
    _check_canvas(obj, canvas)
    xs, ys = translation_bounds(obj, canvas)
    nx, ny = len(xs), len(ys)
    if nx * ny <= 1:
        raise NoLegalMove("object spans the full canvas in both axes")
    null_index = (0 - ys[0]) * nx + (0 - xs[0])
    k = rng.randrange(nx * ny - 1)
    if k >= null_index:
        k += 1
    return xs[0] + k % nx, ys[0] + k // nx


def object_center(obj: ObjectInstance) -> tuple[float, float]:
    """Bbox center ((x_min+x_max)/2, (y_min+y_max)/2); exact, halves allowed."""
    box = obj.bbox
    return ((box.x_min + box.x_max) / 2, (box.y_min + box.y_max) / 2)


def _gather_inverse(
    obj: ObjectInstance,
    canvas: tuple[int, int],
    window: tuple[int, int, int, int],
    inverse_xy,
) -> tuple[np.ndarray, int]:
    """Nearest-neighbor inverse-mapped resample of the mask.

    Returns the canvas-clipped result plus the pixel count the transform
    would have produced on an unbounded canvas, so callers can tell clip
    loss apart from intrinsic size change.
    """
    width, height = canvas
    x0, x1, y0, y1 = window
    bits = np.zeros_like(obj.mask.bits)
    dest_x, dest_y = np.meshgrid(np.arange(x0, x1 + 1), np.arange(y0, y1 + 1))
    src_x, src_y = inverse_xy(dest_x, dest_y)
    src_x = np.rint(src_x).astype(np.int64)
    src_y = np.rint(src_y).astype(np.int64)
    valid = (src_x >= 0) & (src_x < width) & (src_y >= 0) & (src_y < height)
    hit = np.zeros(dest_x.shape, dtype=bool)
    hit[valid] = obj.mask.bits[src_y[valid], src_x[valid]]
    unclipped = int(hit.sum())
    cx0, cy0 = max(x0, 0), max(y0, 0)
    cx1, cy1 = min(x1, width - 1), min(y1, height - 1)
    if cx0 <= cx1 and cy0 <= cy1:
        bits[cy0 : cy1 + 1, cx0 : cx1 + 1] = hit[
            cy0 - y0 : cy1 - y0 + 1, cx0 - x0 : cx1 - x0 + 1
        ]
    return bits, unclipped


def _rotate_bits(obj: ObjectInstance, theta_deg: float, canvas: tuple[int, int]):
    cx, cy = object_center(obj)
    theta = math.radians(theta_deg)
    cos_t, sin_t = math.cos(theta), math.sin(theta)

    def inverse(dest_x, dest_y):
        rel_x, rel_y = dest_x - cx, dest_y - cy
        return cx + cos_t * rel_x + sin_t * rel_y, cy - sin_t * rel_x + cos_t * rel_y

    box = obj.bbox
    reach = int(math.ceil(math.hypot(box.width, box.height) / 2)) + 1
    window = (
        int(math.floor(cx)) - reach,
        int(math.ceil(cx)) + reach,
        int(math.floor(cy)) - reach,
        int(math.ceil(cy)) + reach,
    )
    return _gather_inverse(obj, canvas, window, inverse)


def rotate(obj: ObjectInstance, theta_deg: float, canvas: tuple[int, int]) -> ObjectInstance:
    _check_canvas(obj, canvas)
    bits, _ = _rotate_bits(obj, theta_deg, canvas)
    if not bits.any():
        raise DegenerateTransform(f"rotation by {theta_deg} deg left no pixels in canvas")
    return _replace_mask(obj, bits)


def _scale_bits(obj: ObjectInstance, alpha: float, canvas: tuple[int, int]):
    cx, cy = object_center(obj)

    def inverse(dest_x, dest_y):
        return cx + (dest_x - cx) / alpha, cy + (dest_y - cy) / alpha

    box = obj.bbox
    half_w = (box.width / 2) * alpha + 1
    half_h = (box.height / 2) * alpha + 1
    window = (
        int(math.floor(cx - half_w)),
        int(math.ceil(cx + half_w)),
        int(math.floor(cy - half_h)),
        int(math.ceil(cy + half_h)),
    )
    return _gather_inverse(obj, canvas, window, inverse)


def scale(obj: ObjectInstance, alpha: float, canvas: tuple[int, int]) -> ObjectInstance:
    if not alpha > 0:
        raise ConstraintViolation(f"scale ratio must be positive, got {alpha}")
    _check_canvas(obj, canvas)
    bits, _ = _scale_bits(obj, alpha, canvas)
    if not bits.any():
        raise DegenerateTransform(f"scaling by {alpha} left no pixels in canvas")
    return _replace_mask(obj, bits)


def mirror(obj: ObjectInstance, canvas: tuple[int, int]) -> ObjectInstance:
    """Reflect about the object's own vertical center line.

    x maps to (x_min + x_max) - x, which lands inside the original bbox
    for every source column, so the result needs no clipping and mirror
    composed with itself restores the mask bit-exactly.
    """
    _check_canvas(obj, canvas)
    box = obj.bbox
    bits = obj.mask.bits.copy()
    sub = bits[box.y_min : box.y_max + 1, box.x_min : box.x_max + 1]
    bits[box.y_min : box.y_max + 1, box.x_min : box.x_max + 1] = sub[:, ::-1]
    return _replace_mask(obj, bits)


# ---------------------------------------------------------------------------
# composition and the step-budgeted editor


def compose_map(background: SemanticMap, singles: Sequence[ObjectInstance]) -> SemanticMap:
    """Write singles onto the background in ascending z_order."""
    labels = background.labels.copy()
    palette = background.palette
    for inst in sorted(singles, key=lambda o: o.z_order):
        if inst.mask.bits.shape != labels.shape:
            raise ShapeError(
                f"instance {inst.instance_id!r} mask shape {inst.mask.bits.shape} "
                f"does not match background {labels.shape}"
            )
        labels[inst.mask.bits] = palette.index_of(inst.category)
    return SemanticMap(labels, palette)


def _sample_in_range(rng: Random, lo: float, hi: float, dead_lo: float, dead_hi: float) -> float:
    """Uniform over [lo, hi] minus the open dead zone (dead_lo, dead_hi)."""
    left = dead_lo - lo
    right = hi - dead_hi
    u = rng.uniform(0, left + right)
    return lo + u if u < left else dead_hi + (u - left)


def _sample_step(
    obj: ObjectInstance, mr: str, config: EditConfig, canvas: tuple[int, int], rng: Random
) -> tuple[ObjectInstance, dict, float]:
    """Returns (moved object, recorded params, fraction surviving the clip)."""
    if mr == "MR1":
        dx, dy = sample_translation(obj, canvas, rng)
        return translate(obj, dx, dy, canvas), {"dx": dx, "dy": dy}, 1.0
    if mr == "MR2":
        lo, hi = config.rotation_range_deg
        dz = config.rotation_dead_zone_deg
        theta = _sample_in_range(rng, lo, hi, -dz, dz)
        bits, unclipped = _rotate_bits(obj, theta, canvas)
        if not bits.any():
            raise DegenerateTransform(f"rotation by {theta} deg left no pixels in canvas")
        return _replace_mask(obj, bits), {"theta_deg": theta}, bits.sum() / unclipped
    if mr == "MR3":
        alpha = _sample_in_range(rng, *config.scale_range, *config.scale_dead_zone)
        bits, unclipped = _scale_bits(obj, alpha, canvas)
        if not bits.any():
            raise DegenerateTransform(f"scaling by {alpha} left no pixels in canvas")
        return _replace_mask(obj, bits), {"alpha": alpha}, bits.sum() / unclipped
    if mr == "MR4":
        return mirror(obj, canvas), {"mirror": True}, 1.0
    raise ValueError(f"unknown MR tag {mr!r}")


def edit(
    background: SemanticMap,
    singles: Sequence[ObjectInstance],
    config: EditConfig,
    rng: Random,
) -> tuple[SemanticMap, EditTrace]:
    """Apply `step_budget` random moves to randomly chosen objects.

    Each draw picks an object and an enabled MR uniformly and samples
    parameters; draws that degenerate (no legal move, empty result, too
    much clipped away, or a changed per-category component census in the
    composed map) are retried, re-picking object and MR after
    `max_resample_attempts` consecutive failures. The total draw budget
    is step_budget x max_resample_attempts; going over raises
    EditExhausted.
    """
    if not singles:
        raise ValueError("edit requires at least one object")
    canvas = (background.width, background.height)
    working = list(singles)
    baseline = component_census(compose_map(background, working))
    steps: list[EditStep] = []
    draws = 0
    draw_limit = config.step_budget * config.max_resample_attempts
    while len(steps) < config.step_budget:
        if draws >= draw_limit:
            raise EditExhausted(
                f"completed {len(steps)}/{config.step_budget} steps in {draws} draws"
            )
        index = rng.randrange(len(working))
        mr = config.enabled_mrs[rng.randrange(len(config.enabled_mrs))]
        committed = False
        for _ in range(config.max_resample_attempts):
            if draws >= draw_limit:
                break
            draws += 1
            obj = working[index]
            try:
                moved, params, retained = _sample_step(obj, mr, config, canvas, rng)
            except (NoLegalMove, DegenerateTransform):
                continue
            if retained < config.min_retained_area_fraction:
                continue
            candidate = working.copy()
            candidate[index] = moved
            if component_census(compose_map(background, candidate)) != baseline:
                continue
            working = candidate
            steps.append(EditStep(obj.instance_id, mr, params))
            committed = True
            break
        if not committed and draws >= draw_limit:
            raise EditExhausted(
                f"completed {len(steps)}/{config.step_budget} steps in {draws} draws"
            )
    return compose_map(background, working), EditTrace(tuple(steps))


def apply_trace(
    background: SemanticMap, singles: Sequence[ObjectInstance], trace: EditTrace
) -> SemanticMap:
    """Replay a recorded trace bit-exactly (no randomness involved)."""
    canvas = (background.width, background.height)
    working = {obj.instance_id: obj for obj in singles}
    for step in trace.steps:
        obj = working[step.instance_id]
        if step.mr == "MR1":
            moved = translate(obj, int(step.params["dx"]), int(step.params["dy"]), canvas)
        elif step.mr == "MR2":
            moved = rotate(obj, float(step.params["theta_deg"]), canvas)
        elif step.mr == "MR3":
            moved = scale(obj, float(step.params["alpha"]), canvas)
        else:
            moved = mirror(obj, canvas)
        working[step.instance_id] = moved
    return compose_map(background, list(working.values()))
