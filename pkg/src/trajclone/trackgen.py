"""Random closed-track generation.

Tracks are convex polygons with arc-rounded corners, which close exactly by
construction, plus optional chicanes (four-arc S pairs) dropped into long
straights for curvature-sign variety. Mirroring flips every curvature, so both
left- and right-turning tracks appear.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import ARC, STRAIGHT, SegmentSpec, Track, TrackSpec, build_track


@dataclass(frozen=True)
class TrackGenConfig:
    n_corners: tuple[int, int] = (4, 7)
    polygon_radius: tuple[float, float] = (260.0, 420.0)
    corner_radius: tuple[float, float] = (45.0, 110.0)
    chicane_prob: float = 0.35
    chicane_radius: tuple[float, float] = (70.0, 140.0)
    chicane_angle: tuple[float, float] = (0.15, 0.3)
    min_straight: float = 30.0
    lane_width: float = 3.5
    num_lanes: int = 3


def _convex_hull(points: np.ndarray) -> np.ndarray:
    """Counterclockwise convex hull (monotone chain), no collinear vertices."""
    pts = points[np.lexsort((points[:, 1], points[:, 0]))]

    def half(seq):
        out = []
        for p in seq:
            while len(out) >= 2:
                o, a = out[-2], out[-1]
                if (a[0] - o[0]) * (p[1] - o[1]) - (a[1] - o[1]) * (p[0] - o[0]) <= 0:
                    out.pop()
                else:
                    break
            out.append(p)
        return out

    lower = half(pts)
    upper = half(pts[::-1])
    return np.array(lower[:-1] + upper[:-1])


def _convex_polygon(rng: np.random.Generator, cfg: TrackGenConfig) -> np.ndarray:
    """Random convex vertex loop (counterclockwise) around the origin."""
    for _ in range(200):
        n = int(rng.integers(cfg.n_corners[0], cfg.n_corners[1] + 1))
        angles = np.sort(rng.uniform(0.0, 2.0 * math.pi, size=n))
        gaps = np.diff(np.concatenate([angles, [angles[0] + 2.0 * math.pi]]))
        if np.min(gaps) < 0.5:  # corners too bunched: turn angles get extreme
            continue
        radii = rng.uniform(*cfg.polygon_radius, size=n)
        verts = np.column_stack([radii * np.cos(angles), radii * np.sin(angles)])
        hull = _convex_hull(verts)
        if len(hull) >= 3:
            return hull
    raise RuntimeError("polygon sampling failed; widen the generator ranges")


def _rounded_polygon_segments(verts: np.ndarray, rng: np.random.Generator,
                              cfg: TrackGenConfig) -> list[SegmentSpec]:
    n = len(verts)
    edges = [verts[(i + 1) % n] - verts[i] for i in range(n)]
    edge_len = [float(np.hypot(*e)) for e in edges]
    headings = [math.atan2(e[1], e[0]) for e in edges]
    turns = []
    for i in range(n):
        turn = (headings[i] - headings[i - 1]) % (2.0 * math.pi)
        turns.append(turn)  # convex CCW: every turn in (0, pi)

    radii = [float(rng.uniform(*cfg.corner_radius)) for _ in range(n)]
    # tangent offsets must fit on both adjacent edges; shrink radii if not
    for _ in range(50):
        tangents = [radii[i] * math.tan(0.5 * turns[i]) for i in range(n)]
        ok = True
        for i in range(n):
            room = edge_len[i] - cfg.min_straight
            if tangents[i] + tangents[(i + 1) % n] > room:
                scale = max(0.25, room / (tangents[i] + tangents[(i + 1) % n] + 1e-9))
                radii[i] *= scale
                radii[(i + 1) % n] *= scale
                ok = False
        if ok:
            break
    else:
        raise ValueError("could not fit corner radii; polygon too cramped")

    tangents = [radii[i] * math.tan(0.5 * turns[i]) for i in range(n)]
    segments = []
    for i in range(n):
        straight = edge_len[i] - tangents[i] - tangents[(i + 1) % n]
        if straight > 1e-6:
            segments.append(SegmentSpec(STRAIGHT, straight))
        j = (i + 1) % n
        segments.append(SegmentSpec(ARC, radii[j] * turns[j], 1.0 / radii[j]))
    return segments


def _with_chicanes(segments: list[SegmentSpec], rng: np.random.Generator,
                   cfg: TrackGenConfig) -> list[SegmentSpec]:
    out = []
    for seg in segments:
        if (seg.kind != STRAIGHT or seg.length < 220.0
                or rng.uniform() >= cfg.chicane_prob):
            out.append(seg)
            continue
        r = float(rng.uniform(*cfg.chicane_radius))
        theta = float(rng.uniform(*cfg.chicane_angle))
        span = 4.0 * r * math.sin(theta)  # longitudinal extent of the S pair
        if span > seg.length - 2.0 * cfg.min_straight:
            out.append(seg)
            continue
        lead = float(rng.uniform(cfg.min_straight,
                                 seg.length - span - cfg.min_straight))
        sign = 1.0 if rng.uniform() < 0.5 else -1.0
        k = sign / r
        arc_len = r * theta
        out.append(SegmentSpec(STRAIGHT, lead))
        out.append(SegmentSpec(ARC, arc_len, k))
        out.append(SegmentSpec(ARC, arc_len, -k))
        out.append(SegmentSpec(ARC, arc_len, -k))
        out.append(SegmentSpec(ARC, arc_len, k))
        out.append(SegmentSpec(STRAIGHT, seg.length - span - lead))
    return out


def generate_track_spec(rng: np.random.Generator,
                        cfg: TrackGenConfig = TrackGenConfig()) -> TrackSpec:
    verts = _convex_polygon(rng, cfg)
    segments = _rounded_polygon_segments(verts, rng, cfg)
    segments = _with_chicanes(segments, rng, cfg)
    if rng.uniform() < 0.5:  # mirror: same shape, all turns flipped
        segments = [
            SegmentSpec(s.kind, s.length, -s.curvature) for s in segments
        ]
    return TrackSpec(tuple(segments), cfg.lane_width, cfg.num_lanes, closed=True)


def generate_track(rng: np.random.Generator,
                   cfg: TrackGenConfig = TrackGenConfig()) -> Track:
    return build_track(generate_track_spec(rng, cfg))
