"""ASCII DXF reading, curve sampling, and seam/contour extraction.

The drawing carries the cut contour (any colour) and the sewing seam, which
is drawn in a designated colour (DXF colour index 1, red, unless configured
otherwise). Supported entities: LINE, LWPOLYLINE, ARC and SPLINE; anything
else in the ENTITIES section is skipped and counted.
"""

import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np
from scipy.interpolate import BSpline

from . import geometry
from .errors import DxfParseError, ThreadError, ValidationError
from .validation import check_positive

logger = logging.getLogger(__name__)

SUPPORTED_KINDS = ("LINE", "LWPOLYLINE", "ARC", "SPLINE")
DEFAULT_MAX_CHORD_ERROR = 0.05
CHAIN_TOLERANCE = 0.5
CLOSURE_TOLERANCE = 1e-6
BYLAYER = 256


# ---------------------------------------------------------------------------
# Entities
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Line:
    start: tuple
    end: tuple
    color_index: int = BYLAYER
    layer: str = "0"
    kind = "Line"


@dataclass(frozen=True)
class LwPolyline:
    vertices: tuple
    closed: bool = False
    color_index: int = BYLAYER
    layer: str = "0"
    kind = "LwPolyline"

    def __post_init__(self):
        if len(self.vertices) < 2:
            raise ValidationError("LwPolyline needs at least 2 vertices")


@dataclass(frozen=True)
class Arc:
    """Counter-clockwise arc; angles in degrees as stored in DXF."""

    center: tuple
    radius: float
    start_angle: float
    end_angle: float
    color_index: int = BYLAYER
    layer: str = "0"
    kind = "Arc"

    def __post_init__(self):
        if not self.radius > 0:
            raise ValidationError(f"Arc radius must be > 0, got {self.radius}")
        if math.isclose(self.sweep_deg, 0.0, abs_tol=1e-12):
            raise ValidationError("Arc start and end angles coincide")

    @property
    def sweep_deg(self):
        sweep = (self.end_angle - self.start_angle) % 360.0
        return 0.0 if math.isclose(sweep, 360.0) else sweep

    def point_at(self, angle_deg):
        a = math.radians(angle_deg)
        return (self.center[0] + self.radius * math.cos(a),
                self.center[1] + self.radius * math.sin(a))


@dataclass(frozen=True)
class Spline:
    """Clamped, non-rational B-spline."""

    degree: int
    control_points: tuple
    knots: tuple = ()
    color_index: int = BYLAYER
    layer: str = "0"
    kind = "Spline"

    def __post_init__(self):
        if self.degree not in (2, 3):
            raise ValidationError(f"Spline degree must be 2 or 3, got {self.degree}")
        if len(self.control_points) < self.degree + 1:
            raise ValidationError(
                f"Spline of degree {self.degree} needs >= {self.degree + 1} control points")
        if self.knots:
            if len(self.knots) != len(self.control_points) + self.degree + 1:
                raise ValidationError("Spline knot count must be n_control + degree + 1")
            if any(b < a for a, b in zip(self.knots, self.knots[1:])):
                raise ValidationError("Spline knot vector must be non-decreasing")

    def knot_vector(self):
        if self.knots:
            return np.asarray(self.knots, dtype=float)
        n, p = len(self.control_points), self.degree
        interior = np.linspace(0.0, 1.0, n - p + 1)[1:-1]
        return np.concatenate([np.zeros(p + 1), interior, np.ones(p + 1)])

    def to_bspline(self):
        return BSpline(self.knot_vector(), np.asarray(self.control_points, dtype=float),
                       self.degree, extrapolate=False)

    @property
    def domain(self):
        k = self.knot_vector()
        return float(k[self.degree]), float(k[len(self.control_points)])


DxfEntity = Union[Line, LwPolyline, Arc, Spline]


class DxfEntities(list):
    """Entities in document order, plus what the parser skipped.

    ``skipped`` is the number of unsupported entities and ``skipped_kinds``
    counts them by DXF type name. ``header`` maps ``$VARIABLE`` names to their
    first value.
    """

    def __init__(self, entities=(), skipped_kinds=None, header=None):
        super().__init__(entities)
        self.skipped_kinds = Counter(skipped_kinds or {})
        self.header = dict(header or {})

    @property
    def skipped(self):
        return sum(self.skipped_kinds.values())


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

def _read_pairs(text):
    lines = text.splitlines()
    while lines and not lines[-1].strip():
        lines.pop()
    if len(lines) % 2:
        raise DxfParseError("dangling group code without a value", line=len(lines))
    pairs = []
    for i in range(0, len(lines), 2):
        raw = lines[i].strip()
        try:
            code = int(raw)
        except ValueError:
            raise DxfParseError(f"expected integer group code, got {raw!r}", line=i + 1) from None
        pairs.append((i + 1, code, lines[i + 1].strip()))
    return pairs


def _num(line, code, value, kind, conv=float):
    try:
        return conv(value)
    except ValueError:
        raise DxfParseError(f"{kind}: bad value {value!r} for group code {code}",
                            line=line, kind=kind) from None


def _require(found, codes, kind, line):
    missing = [c for c in codes if c not in found]
    if missing:
        raise DxfParseError(f"truncated {kind} entity: missing group code(s) {missing}",
                            line=line, kind=kind)


def _common(groups, kind):
    color, layer = BYLAYER, "0"
    for line, code, value in groups:
        if code == 62:
            color = _num(line, code, value, kind, int)
        elif code == 8:
            layer = value
    return color, layer


def _point_list(groups, xcode, ycode, kind):
    pts, pending = [], None
    for line, code, value in groups:
        if code == xcode:
            if pending is not None:
                raise DxfParseError(f"truncated {kind} entity: x without y",
                                    line=pending[0], kind=kind)
            pending = (line, _num(line, code, value, kind))
        elif code == ycode:
            if pending is None:
                raise DxfParseError(f"{kind}: y coordinate without x", line=line, kind=kind)
            pts.append((pending[1], _num(line, code, value, kind)))
            pending = None
    if pending is not None:
        raise DxfParseError(f"truncated {kind} entity: x without y", line=pending[0], kind=kind)
    return pts


def _build_entity(kind, start_line, groups):
    color, layer = _common(groups, kind)
    first = {}
    for line, code, value in groups:
        first.setdefault(code, (line, value))

    def scalar(code, conv=float):
        line, value = first[code]
        return _num(line, code, value, kind, conv)

    if kind == "LINE":
        _require(first, (10, 20, 11, 21), kind, start_line)
        return Line((scalar(10), scalar(20)), (scalar(11), scalar(21)), color, layer)
    if kind == "ARC":
        _require(first, (10, 20, 40, 50, 51), kind, start_line)
        return Arc((scalar(10), scalar(20)), scalar(40), scalar(50), scalar(51), color, layer)
    if kind == "LWPOLYLINE":
        verts = _point_list(groups, 10, 20, kind)
        if 90 in first and scalar(90, int) != len(verts):
            raise DxfParseError(
                f"truncated LWPOLYLINE entity: expected {scalar(90, int)} vertices, "
                f"found {len(verts)}", line=start_line, kind=kind)
        if len(verts) < 2:
            raise DxfParseError("truncated LWPOLYLINE entity: fewer than 2 vertices",
                                line=start_line, kind=kind)
        closed = bool(scalar(70, int) & 1) if 70 in first else False
        return LwPolyline(tuple(verts), closed, color, layer)
    if kind == "SPLINE":
        _require(first, (71,), kind, start_line)
        degree = scalar(71, int)
        ctrl = _point_list(groups, 10, 20, kind)
        knots = [_num(line, code, value, kind) for line, code, value in groups if code == 40]
        if 73 in first and scalar(73, int) != len(ctrl):
            raise DxfParseError(
                f"truncated SPLINE entity: expected {scalar(73, int)} control points, "
                f"found {len(ctrl)}", line=start_line, kind=kind)
        if 72 in first and scalar(72, int) != len(knots):
            raise DxfParseError(
                f"truncated SPLINE entity: expected {scalar(72, int)} knots, "
                f"found {len(knots)}", line=start_line, kind=kind)
        if not ctrl:
            raise DxfParseError("truncated SPLINE entity: no control points",
                                line=start_line, kind=kind)
        return Spline(degree, tuple(ctrl), tuple(knots), color, layer)
    raise AssertionError(kind)


def parse_dxf(text):
    """Parse ASCII DXF ``text`` into a :class:`DxfEntities` list.

    Raises :class:`DxfParseError` (carrying the line number) on malformed
    group-code pairs, and on entities missing required groups.
    """
    pairs = _read_pairs(text)
    entities, skipped, header = [], Counter(), {}
    section = None
    i = 0
    n = len(pairs)
    while i < n:
        line, code, value = pairs[i]
        if code == 0 and value == "SECTION":
            if i + 1 >= n or pairs[i + 1][1] != 2:
                raise DxfParseError("SECTION without a name (group code 2)", line=line)
            section = pairs[i + 1][2]
            i += 2
            continue
        if code == 0 and value in ("ENDSEC", "EOF"):
            section = None
            i += 1
            continue
        if section == "HEADER" and code == 9:
            if i + 1 < n and pairs[i + 1][1] not in (0, 9):
                vline, vcode, vvalue = pairs[i + 1]
                header[value] = vvalue
                i += 2
            else:
                i += 1
            continue
        if section == "ENTITIES" and code == 0:
            kind, start = value, line
            j = i + 1
            while j < n and pairs[j][1] != 0:
                j += 1
            if j >= n:
                raise DxfParseError(f"truncated {kind} entity: document ends inside it",
                                    line=start, kind=kind)
            groups = pairs[i + 1:j]
            if kind in SUPPORTED_KINDS:
                try:
                    entities.append(_build_entity(kind, start, groups))
                except ValidationError as exc:
                    raise DxfParseError(f"invalid {kind}: {exc}", line=start, kind=kind) from exc
            else:
                skipped[kind] += 1
                logger.debug("skipping unsupported entity %s at line %d", kind, start)
            i = j
            continue
        i += 1
    if section == "ENTITIES":
        raise DxfParseError("ENTITIES section not terminated by ENDSEC", line=pairs[-1][0])
    return DxfEntities(entities, skipped, header)


def read_dxf(path):
    path = Path(path)
    return parse_dxf(path.read_text(encoding="utf-8", errors="strict"))


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

def _arc_segment_count(radius, sweep_rad, tol):
    if tol >= radius:
        step = math.pi / 2
    else:
        step = min(2.0 * math.acos(1.0 - tol / radius), math.pi / 2)
    return max(1, math.ceil(sweep_rad / step - 1e-12))


def _chord_deviation(curve, u0, u1, n_probe=7):
    """Largest distance from interior curve samples to the chord."""
    a, b = curve(u0), curve(u1)
    us = np.linspace(u0, u1, n_probe + 2)[1:-1]
    dist, _, _ = geometry.closest_points_on_polyline(curve(us), np.array([a, b]))
    return float(dist.max())


def _sample_spline(spline, tol):
    curve = spline.to_bspline()
    lo, hi = spline.domain
    breaks = np.unique(np.clip(spline.knot_vector(), lo, hi))
    # seed with four sub-intervals per knot span before adaptive refinement
    seeds = np.unique(np.concatenate(
        [np.linspace(a, b, 5) for a, b in zip(breaks[:-1], breaks[1:])]))
    params = [seeds[0]]

    def refine(u0, u1, depth):
        if depth < 40 and _chord_deviation(curve, u0, u1) > tol:
            mid = 0.5 * (u0 + u1)
            refine(u0, mid, depth + 1)
            refine(mid, u1, depth + 1)
        else:
            params.append(u1)

    for u0, u1 in zip(seeds[:-1], seeds[1:]):
        refine(u0, u1, 0)
    pts = curve(np.asarray(params))
    ctrl = np.asarray(spline.control_points, dtype=float)
    # clamped splines interpolate their end control points
    pts[0], pts[-1] = ctrl[0], ctrl[-1]
    keep = np.concatenate([[True], np.any(np.diff(pts, axis=0) != 0, axis=1)])
    return pts[keep]


def sample_entity(entity, max_chord_error=DEFAULT_MAX_CHORD_ERROR):
    """Discretise ``entity`` into an ``(n, 2)`` polyline within ``max_chord_error`` mm."""
    tol = check_positive(max_chord_error, "max_chord_error")
    if isinstance(entity, Line):
        pts = np.array([entity.start, entity.end], dtype=float)
        if np.allclose(pts[0], pts[1], rtol=0, atol=1e-12):
            raise ValidationError("degenerate Line: zero length")
        return pts
    if isinstance(entity, Arc):
        sweep = entity.sweep_deg
        n = _arc_segment_count(entity.radius, math.radians(sweep), tol)
        angles = entity.start_angle + sweep * np.arange(n + 1) / n
        pts = np.column_stack([entity.center[0] + entity.radius * np.cos(np.radians(angles)),
                               entity.center[1] + entity.radius * np.sin(np.radians(angles))])
        pts[0] = entity.point_at(entity.start_angle)
        pts[-1] = entity.point_at(entity.start_angle + sweep)
        return pts
    if isinstance(entity, LwPolyline):
        pts = np.asarray(entity.vertices, dtype=float)
        if entity.closed and not np.allclose(pts[0], pts[-1]):
            pts = np.vstack([pts, pts[:1]])
        if geometry.polyline_length(pts) == 0:
            raise ValidationError("degenerate LwPolyline: zero length")
        return pts
    if isinstance(entity, Spline):
        pts = _sample_spline(entity, tol)
        if len(pts) < 2:
            raise ValidationError("degenerate Spline: all control points coincide")
        return pts
    raise ValidationError(f"unsupported entity type {type(entity).__name__}")


# ---------------------------------------------------------------------------
# Thread extraction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SeamSpec:
    seam_color_index: int = 1
    seam_allowance: float = 20.0
    stitch_length: float = 3.0

    def __post_init__(self):
        check_positive(self.seam_allowance, "seam_allowance")
        check_positive(self.stitch_length, "stitch_length")

    def to_dict(self):
        return {"seam_color_index": self.seam_color_index,
                "seam_allowance_mm": self.seam_allowance,
                "stitch_length_mm": self.stitch_length}


HEADER_KEYS = {"$SEAMALLOWANCE": "seam_allowance", "$STITCHLENGTH": "stitch_length",
               "$SEAMCOLOR": "seam_color_index"}
CONFIG_KEYS = {"seam_allowance_mm": "seam_allowance", "stitch_length_mm": "stitch_length",
               "seam_color_index": "seam_color_index"}


def load_seam_spec(config=None, header=None):
    """Build a SeamSpec from DXF header variables overridden by a sidecar config.

    ``config`` may be a mapping or a path to the JSON sidecar.
    """
    values = {}
    for var, key in HEADER_KEYS.items():
        if header and var in header:
            values[key] = header[var]
    if config is not None:
        if not isinstance(config, dict):
            config = json.loads(Path(config).read_text())
        for ckey, key in CONFIG_KEYS.items():
            if ckey in config:
                if key in values and float(values[key]) != float(config[ckey]):
                    logger.info("config %s=%s overrides DXF header value %s",
                                ckey, config[ckey], values[key])
                values[key] = config[ckey]
    try:
        if "seam_color_index" in values:
            values["seam_color_index"] = int(values["seam_color_index"])
        for key in ("seam_allowance", "stitch_length"):
            if key in values:
                values[key] = float(values[key])
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"bad seam specification value: {exc}") from exc
    return SeamSpec(**values)


@dataclass(frozen=True, eq=False)
class DigitalThread:
    """Garment contour (closed, CCW) and seam path, both in the garment frame."""

    contour: np.ndarray
    seam: np.ndarray
    spec: SeamSpec = field(default_factory=SeamSpec)

    def __post_init__(self):
        contour = np.array(self.contour, dtype=float)
        seam = np.array(self.seam, dtype=float)
        if contour.ndim != 2 or contour.shape[1] != 2 or len(contour) < 4:
            raise ThreadError("contour must be a closed polyline with at least 3 distinct vertices")
        if seam.ndim != 2 or seam.shape[1] != 2 or len(seam) < 2:
            raise ThreadError("seam must be a polyline with at least 2 vertices")
        if np.hypot(*(contour[0] - contour[-1])) > CLOSURE_TOLERANCE:
            raise ThreadError("contour is not closed")
        if not geometry.is_simple_polygon(contour):
            raise ThreadError("contour self-intersects")
        sd, _ = geometry.signed_distance(seam, contour)
        if np.any(sd < -CLOSURE_TOLERANCE):
            bad = seam[np.argmin(sd)]
            raise ThreadError(f"seam vertex ({bad[0]:.3f}, {bad[1]:.3f}) lies outside the contour")
        contour.flags.writeable = False
        seam.flags.writeable = False
        object.__setattr__(self, "contour", contour)
        object.__setattr__(self, "seam", seam)

    @property
    def seam_length(self):
        return geometry.polyline_length(self.seam)

    @property
    def contour_length(self):
        return geometry.polyline_length(self.contour)

    @property
    def centroid(self):
        return geometry.polygon_centroid(self.contour)

    @property
    def seam_closed(self):
        return bool(np.hypot(*(self.seam[0] - self.seam[-1])) <= CLOSURE_TOLERANCE)

    def to_dict(self):
        return {"contour": self.contour.tolist(), "seam": self.seam.tolist(),
                "spec": self.spec.to_dict(),
                "seam_length_mm": self.seam_length,
                "contour_length_mm": self.contour_length}


def _chain(pieces, label, tol=CHAIN_TOLERANCE):
    """Join sampled pieces end-to-start into one polyline.

    Returns ``(points, closed)``. Joining is independent of input order: each
    piece end links to at most one other end within ``tol``; joints snap to
    the midpoint of the two ends.
    """
    ends = []
    for i, piece in enumerate(pieces):
        ends.append((i, 0, piece[0]))
        ends.append((i, 1, piece[-1]))
    links = {}
    for a in range(len(ends)):
        for b in range(a + 1, len(ends)):
            ia, ea, pa = ends[a]
            ib, eb, pb = ends[b]
            if np.hypot(*(pa - pb)) <= tol:
                for key, other in (((ia, ea), (ib, eb)), ((ib, eb), (ia, ea))):
                    if key in links:
                        p = pieces[key[0]][-1 if key[1] else 0]
                        raise ThreadError(
                            f"{label} chain ambiguity: branching at ({p[0]:.3f}, {p[1]:.3f})")
                    links[key] = other

    free = [(i, e) for i, e, _ in ends if (i, e) not in links]
    visited = set()
    chains = []
    starts = free + [(i, 0) for i in range(len(pieces))]
    for start in starts:
        if start[0] in visited:
            continue
        order = []
        cur = start
        while cur[0] not in visited:
            visited.add(cur[0])
            order.append(cur)
            exit_end = (cur[0], 1 - cur[1])
            if exit_end not in links:
                break
            cur = links[exit_end]
        chains.append(order)

    if len(chains) > 1:
        if label == "contour" and free:
            raise ThreadError(_gap_message(pieces, free))
        raise ThreadError(f"{label} chain ambiguity: {len(chains)} disconnected chains")

    order = chains[0]
    closed = not free
    segs = []
    for idx, entry in order:
        pts = np.array(pieces[idx], dtype=float)
        segs.append(pts if entry == 0 else pts[::-1].copy())
    for k in range(len(segs) - 1 + closed):
        a, b = segs[k], segs[(k + 1) % len(segs)]
        mid = 0.5 * (a[-1] + b[0])
        a[-1] = mid
        b[0] = mid
    points = np.vstack([segs[0]] + [s[1:] for s in segs[1:]])
    if closed:
        points[-1] = points[0]
    # majority of native piece length decides the open direction
    forward = sum(geometry.polyline_length(pieces[i]) * (1 if e == 0 else -1) for i, e in order)
    if forward < 0 or (forward == 0 and tuple(points[-1]) < tuple(points[0])):
        points = points[::-1].copy()
    return points, closed


def _gap_message(pieces, free):
    pts = [pieces[i][-1 if e else 0] for i, e in free]
    desc = ", ".join(f"({p[0]:.3f}, {p[1]:.3f})" for p in pts)
    return f"open contour: unmatched endpoints {desc}"


def _canonical_loop(points, ccw=None):
    loop = points[:-1]
    if ccw is not None and (geometry.signed_area(points) > 0) != ccw:
        loop = loop[::-1]
    start = np.lexsort((loop[:, 1], loop[:, 0]))[0]
    loop = np.roll(loop, -start, axis=0)
    return np.vstack([loop, loop[:1]])


def extract_thread(entities, spec=None, max_chord_error=DEFAULT_MAX_CHORD_ERROR):
    """Split entities into seam (designated colour) and contour, and chain each."""
    spec = spec or SeamSpec()
    seam_pieces, contour_pieces = [], []
    for ent in entities:
        pts = sample_entity(ent, max_chord_error)
        (seam_pieces if ent.color_index == spec.seam_color_index else contour_pieces).append(pts)
    if not seam_pieces:
        raise ThreadError(f"seam not designated: no entity with colour index {spec.seam_color_index}")
    if not contour_pieces:
        raise ThreadError("no contour entities (every entity carries the seam colour)")

    contour, contour_closed = _chain(contour_pieces, "contour")
    if not contour_closed:
        raise ThreadError(
            f"open contour: gap between ({contour[-1][0]:.3f}, {contour[-1][1]:.3f}) "
            f"and ({contour[0][0]:.3f}, {contour[0][1]:.3f})")
    contour = _canonical_loop(contour, ccw=True)
    seam, seam_closed = _chain(seam_pieces, "seam")
    if seam_closed:
        seam = _canonical_loop(seam)
    return DigitalThread(contour, seam, spec)


def load_thread(dxf_path, config=None, max_chord_error=DEFAULT_MAX_CHORD_ERROR):
    """Read a drawing plus optional sidecar config into a DigitalThread."""
    entities = read_dxf(dxf_path)
    spec = load_seam_spec(config, entities.header)
    return extract_thread(entities, spec, max_chord_error)


# ---------------------------------------------------------------------------
# Writing (round-trip support)
# ---------------------------------------------------------------------------

def _lwpolyline_lines(points, closed, color, layer):
    out = ["0", "LWPOLYLINE", "8", layer, "62", str(color), "90", str(len(points)),
           "70", "1" if closed else "0"]
    for x, y in points:
        out += ["10", repr(float(x)), "20", repr(float(y))]
    return out


def write_dxf(thread: DigitalThread, contour_color: Optional[int] = None):
    """Serialise ``thread`` as a minimal ASCII DXF document."""
    seam_color = thread.spec.seam_color_index
    if contour_color is None:
        contour_color = 7 if seam_color != 7 else 8
    out = ["0", "SECTION", "2", "HEADER",
           "9", "$SEAMALLOWANCE", "40", repr(float(thread.spec.seam_allowance)),
           "9", "$STITCHLENGTH", "40", repr(float(thread.spec.stitch_length)),
           "9", "$SEAMCOLOR", "62", str(seam_color),
           "0", "ENDSEC", "0", "SECTION", "2", "ENTITIES"]
    out += _lwpolyline_lines(thread.contour[:-1], True, contour_color, "CONTOUR")
    seam = thread.seam[:-1] if thread.seam_closed else thread.seam
    out += _lwpolyline_lines(seam, thread.seam_closed, seam_color, "SEAM")
    out += ["0", "ENDSEC", "0", "EOF"]
    return "\n".join(out) + "\n"
