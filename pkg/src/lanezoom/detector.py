"""Detector interface and the analytic stand-in used for testing.

A detector maps a crop to an :class:`~lanezoom.lp_field.LPField`. The
synthetic detector renders ground truth from a planted :class:`Scene`, then
applies a field-of-view rule for gaps and a seeded noise model.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Protocol, Sequence

import numpy as np

from .geometry import Rect
from .lp_field import N_TYPES, CropSpec, FieldConfig, Lane, LPField, _render
from .scene import FovRule, NoiseModel, Scene


class Detector(Protocol):
    def detect(self, crop: CropSpec, context: Sequence[LPField] | None = None) -> LPField:
        ...


@lru_cache(maxsize=1024)
def _gap_geometry(lane: Lane, t0: float, t1: float) -> tuple[float, Rect]:
    """Arc length and bounding box of the curve over ``[t0, t1]``."""
    approx = float(np.linalg.norm(np.diff(lane.curve.points, axis=0), axis=1).sum())
    n = max(int(math.ceil(approx * (t1 - t0) * 4)), 8)
    pts = lane.curve.evaluate(np.linspace(t0, t1, n + 1))
    length = float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    return length, Rect(float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1]))


def _touches(a: Rect, b: Rect) -> bool:
    return a.x0 <= b.x1 and b.x0 <= a.x1 and a.y0 <= b.y1 and b.y0 <= a.y1


def noise_seed(seed: int, crop: CropSpec) -> int:
    """Stream seed derived from the scene seed and crop geometry only."""
    payload = struct.pack("<q5d", int(seed), crop.origin[0], crop.origin[1],
                          crop.width, crop.height, crop.zoom_ratio)
    return int.from_bytes(hashlib.sha256(payload).digest()[:8], "little")


def _apply_noise(field_: LPField, noise: NoiseModel, seed: int, inside: np.ndarray,
                 cap: float) -> LPField:
    rows, cols = field_.shape
    n = rows * cols
    rng = np.random.default_rng(noise_seed(seed, field_.crop))
    # every draw happens unconditionally so the stream layout is fixed
    d_pos = rng.normal(0.0, 1.0, size=(n, 2)) * noise.position_sigma
    d_ang = rng.normal(0.0, 1.0, size=n) * noise.direction_sigma
    u_mask = rng.random(n)
    u_conf = rng.random(n)
    u_type = rng.random(n)
    new_type = rng.integers(0, N_TYPES - 1, size=n)

    position = field_.position.reshape(n, 2) + d_pos
    c, s = np.cos(d_ang), np.sin(d_ang)
    dx, dy = field_.direction.reshape(n, 2).T
    direction = np.stack([c * dx - s * dy, s * dx + c * dy], axis=1)
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)

    mask = field_.mask.ravel().copy()
    flip = (u_mask < noise.mask_flip_rate) & inside
    mask[flip] = 1.0 - mask[flip]
    confidence = field_.confidence.ravel().copy()
    flip = u_conf < noise.confidence_flip_rate
    confidence[flip] = 1.0 - confidence[flip]

    type_scores = field_.type_scores.reshape(n, N_TYPES).copy()
    current = np.argmax(type_scores, axis=1)
    confuse = u_type < noise.type_confusion_rate
    # draw among the other types: skip over the current index
    other = np.where(new_type >= current, new_type + 1, new_type)
    type_scores[confuse] = 0.0
    type_scores[np.flatnonzero(confuse), other[confuse]] = 1.0

    distance = np.minimum(np.linalg.norm(position, axis=1), cap)
    return LPField(
        crop=field_.crop, stride=field_.stride,
        mask=mask.reshape(rows, cols), type_scores=type_scores.reshape(rows, cols, N_TYPES),
        position=position.reshape(rows, cols, 2), direction=direction.reshape(rows, cols, 2),
        confidence=confidence.reshape(rows, cols), distance=distance.reshape(rows, cols),
    )


def detect(scene: Scene, crop: CropSpec, noise: NoiseModel | None = None,
           fov_rule: FovRule | None = None, context: Sequence[LPField] | None = None,
           config: FieldConfig | None = None) -> LPField:
    """Render the scene for ``crop`` and degrade it like a real detector would.

    ``context`` carries thumbnail fields; when the rule allows, a gap that the
    crop itself is too small to recognise is still typed ``OcclusionOrGap``
    if a thumbnail with a large enough view covered it.
    """
    noise = noise or NoiseModel.none()
    fov_rule = fov_rule or FovRule()
    config = config or FieldConfig()
    field_, aux = _render(scene.lanes, crop, config, scene.image_size)

    if fov_rule.enabled and config.model_occlusion and scene.lanes:
        mask = field_.mask.ravel()
        hide = np.zeros(mask.shape, dtype=bool)
        for li, lane in enumerate(scene.lanes):
            for pi, (t0, t1, _, is_gap) in enumerate(lane.pieces(True)):
                if not is_gap:
                    continue
                sel = (aux.lane == li) & (aux.piece == pi) & (mask > 0)
                if not np.any(sel):
                    continue
                length, bbox = _gap_geometry(lane, t0, t1)
                seen = crop.fov > length
                if not seen and fov_rule.inherit_from_context and context:
                    seen = any(ctx.crop.fov > length and _touches(ctx.crop.rect, bbox)
                               for ctx in context)
                if not seen:
                    hide |= sel
        if np.any(hide):
            mask = np.where(hide, 0.0, mask)
            field_ = LPField(crop=field_.crop, stride=field_.stride,
                             mask=mask.reshape(field_.shape), type_scores=field_.type_scores,
                             position=field_.position, direction=field_.direction,
                             confidence=field_.confidence, distance=field_.distance)

    if not noise.is_zero:
        field_ = _apply_noise(field_, noise, scene.seed, aux.inside, config.distance_cap)
    return field_


@dataclass(frozen=True)
class SyntheticDetector:
    """:class:`Detector` backed by a planted scene."""

    scene: Scene
    noise: NoiseModel = field(default_factory=NoiseModel.none)
    fov_rule: FovRule = field(default_factory=FovRule)
    config: FieldConfig = field(default_factory=FieldConfig)

    def detect(self, crop: CropSpec, context: Sequence[LPField] | None = None) -> LPField:
        return detect(self.scene, crop, self.noise, self.fov_rule, context, self.config)


__all__ = ["Detector", "SyntheticDetector", "detect", "noise_seed"]
