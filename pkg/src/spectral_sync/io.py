"""Line-oriented ``.posegraph`` text format.

Vertices and edges use the usual ``VERTEX_SE3:QUAT`` / ``EDGE_SE3:QUAT``
records (quaternion on the wire as qx qy qz qw, information as the 21
upper-triangular entries, row major). Metadata rides in comment lines so
that other tools reading the file skip it:

    # posegraph frame=<frame_id>
    VERTEX_SE3:QUAT id x y z qx qy qz qw
    #META id robot_id submap_id timestamp_ns
    EDGE_SE3:QUAT from to x y z qx qy qz qw I11 I12 ... I66
    #KIND kind

A ``#META`` line must follow its vertex, a ``#KIND`` line its edge. Edges
without a ``#KIND`` line are read as odometry.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import ParseError, SpectralSyncError
from .posegraph import Pose, PoseGraph, PoseNode, RelativeConstraint

HEADER = "# posegraph"
_IU = np.triu_indices(6)


def _fmt(x) -> str:
    return format(float(x), ".17g")


def _pose_fields(p: Pose) -> list:
    w, x, y, z = p.rotation
    return [_fmt(v) for v in (*p.translation, x, y, z, w)]


def format_vertex(node: PoseNode) -> str:
    return " ".join(["VERTEX_SE3:QUAT", str(node.node_id), *_pose_fields(node.pose)])


def format_edge(edge: RelativeConstraint) -> str:
    info = [_fmt(v) for v in edge.information[_IU]]
    return " ".join(["EDGE_SE3:QUAT", str(edge.from_id), str(edge.to_id), *_pose_fields(edge.measurement), *info])


def serialize_graph(g: PoseGraph) -> bytes:
    lines = [f"{HEADER} frame={g.frame_id}"]
    for n in g.nodes:
        lines.append(format_vertex(n))
        lines.append(f"#META {n.node_id} {n.robot_id} {n.submap_id} {n.timestamp}")
    for e in g.edges:
        lines.append(format_edge(e))
        lines.append(f"#KIND {e.kind}")
    return ("\n".join(lines) + "\n").encode("utf-8")


def _floats(tokens, lineno):
    try:
        return [float(t) for t in tokens]
    except ValueError as exc:
        raise ParseError(f"bad number ({exc})", lineno) from None


def _int(token, lineno):
    try:
        return int(token)
    except ValueError:
        raise ParseError(f"bad integer {token!r}", lineno) from None


def _pose(vals) -> Pose:
    x, y, z, qx, qy, qz, qw = vals
    return Pose([x, y, z], [qw, qx, qy, qz])


def parse_graph(data) -> PoseGraph:
    if isinstance(data, (bytes, bytearray)):
        try:
            text = bytes(data).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(f"not UTF-8: {exc}") from None
    else:
        text = str(data)

    frame_id = "map"
    vertices = []  # [id, pose, meta or None]
    edges = []  # [from, to, pose, info, kind]
    last = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        tokens = line.split()
        if line.startswith(HEADER):
            for tok in tokens[2:]:
                if tok.startswith("frame="):
                    frame_id = tok[len("frame="):]
            continue
        if tokens[0] == "#META":
            if last is None or last[0] != "v":
                raise ParseError("#META does not follow a vertex", lineno)
            if len(tokens) != 5:
                raise ParseError("#META needs id robot submap timestamp", lineno)
            vid, robot, submap, stamp = (_int(t, lineno) for t in tokens[1:])
            if vid != vertices[-1][0]:
                raise ParseError(f"#META id {vid} does not match vertex {vertices[-1][0]}", lineno)
            vertices[-1][2] = (robot, submap, stamp)
            last = ("meta",)
            continue
        if tokens[0] == "#KIND":
            if last is None or last[0] != "e":
                raise ParseError("#KIND does not follow an edge", lineno)
            if len(tokens) != 2:
                raise ParseError("#KIND needs exactly one kind", lineno)
            edges[-1][4] = tokens[1]
            last = ("kind",)
            continue
        if line.startswith("#"):
            continue
        tag = tokens[0]
        if tag == "VERTEX_SE3:QUAT":
            if len(tokens) != 9:
                raise ParseError(f"VERTEX_SE3:QUAT needs 8 fields, got {len(tokens) - 1}", lineno)
            vid = _int(tokens[1], lineno)
            try:
                pose = _pose(_floats(tokens[2:], lineno))
            except SpectralSyncError as exc:
                if isinstance(exc, ParseError):
                    raise
                raise ParseError(str(exc), lineno) from None
            vertices.append([vid, pose, None, lineno])
            last = ("v",)
        elif tag == "EDGE_SE3:QUAT":
            if len(tokens) != 31:
                raise ParseError(f"EDGE_SE3:QUAT needs 30 fields, got {len(tokens) - 1}", lineno)
            a, b = _int(tokens[1], lineno), _int(tokens[2], lineno)
            vals = _floats(tokens[3:], lineno)
            try:
                pose = _pose(vals[:7])
            except SpectralSyncError as exc:
                raise ParseError(str(exc), lineno) from None
            info = np.zeros((6, 6))
            info[_IU] = vals[7:]
            info = info + np.triu(info, 1).T
            edges.append([a, b, pose, info, "odometry", lineno])
            last = ("e",)
        else:
            raise ParseError(f"unknown record {tag!r}", lineno)

    nodes = []
    for vid, pose, meta, lineno in vertices:
        robot, submap, stamp = meta if meta is not None else (0, 0, 0)
        nodes.append(PoseNode(vid, robot, submap, stamp, pose))
    constraints = []
    ids = {n.node_id for n in nodes}
    for a, b, pose, info, kind, lineno in edges:
        if a not in ids or b not in ids:
            raise ParseError(f"edge {a}->{b} references a missing vertex", lineno)
        try:
            constraints.append(RelativeConstraint(a, b, pose, info, kind))
        except SpectralSyncError as exc:
            raise ParseError(str(exc), lineno) from None
    try:
        return PoseGraph(tuple(nodes), tuple(constraints), frame_id)
    except SpectralSyncError as exc:
        raise ParseError(str(exc)) from None


def write_graph(g: PoseGraph, path) -> None:
    Path(path).write_bytes(serialize_graph(g))


def read_graph(path) -> PoseGraph:
    return parse_graph(Path(path).read_bytes())
