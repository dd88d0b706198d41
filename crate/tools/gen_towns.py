#!/usr/bin/env python3
"""Generates the built-in town maps.

Each town is a rectangular ring road (one lane per direction, offset 2 m
from the road centerline) plus a cross road that meets the ring at two
T-junctions. Junctions consist of explicit connector lanes: straight
connectors bridge the interrupted through lanes, right turns are 6 m
quarter arcs and left turns are 10 m quarter arcs. With approach ends 8 m
from the junction center and lane offsets of 2 m both arc families land
exactly on the outgoing lane ends, so the lane graph merges without gaps.

Run from the repository root:  python3 tools/gen_towns.py
"""

import math
import os

ARC_STEPS = 12  # points per quarter arc = ARC_STEPS + 1
LANE_OFF = 2.0  # lane center offset from the road centerline
APPROACH = 8.0  # distance from junction center to the approach lane end
R_RIGHT = 6.0
R_LEFT = 10.0
WIDTH = 4.0


def fnum(v):
    if v == int(v):
        return str(int(v))
    return repr(round(v, 9))


def pts(points):
    return "  ".join(f"{fnum(x)} {fnum(y)}" for x, y in points)


def quarter_arc(center, radius, a0, a1):
    out = []
    for i in range(ARC_STEPS + 1):
        a = a0 + (a1 - a0) * i / ARC_STEPS
        out.append((center[0] + radius * math.cos(a), center[1] + radius * math.sin(a)))
    return out


def snap(points, start, end):
    points[0] = start
    points[-1] = end
    return points


def left_arc(start, heading):
    """Counterclockwise quarter arc from `start` with initial `heading`."""
    c = (
        start[0] + R_LEFT * math.cos(heading + math.pi / 2),
        start[1] + R_LEFT * math.sin(heading + math.pi / 2),
    )
    a0 = math.atan2(start[1] - c[1], start[0] - c[0])
    points = quarter_arc(c, R_LEFT, a0, a0 + math.pi / 2)
    end = (c[0] + R_LEFT * math.cos(a0 + math.pi / 2), c[1] + R_LEFT * math.sin(a0 + math.pi / 2))
    return snap(points, start, nice(end))


def right_arc(start, heading):
    """Clockwise quarter arc from `start` with initial `heading`."""
    c = (
        start[0] + R_RIGHT * math.cos(heading - math.pi / 2),
        start[1] + R_RIGHT * math.sin(heading - math.pi / 2),
    )
    a0 = math.atan2(start[1] - c[1], start[0] - c[0])
    points = quarter_arc(c, R_RIGHT, a0, a0 - math.pi / 2)
    end = (c[0] + R_RIGHT * math.cos(a0 - math.pi / 2), c[1] + R_RIGHT * math.sin(a0 - math.pi / 2))
    return snap(points, start, nice(end))


def nice(p):
    return (round(p[0], 6), round(p[1], 6))


class TownBuilder:
    def __init__(self, name):
        self.name = name
        self.lanes = []
        self.lights = []
        self.signs = []
        self.sidewalks = []
        self.actors = []

    def lane(self, lid, points, limit, succ=None, opposite=None, junction=False):
        self.lanes.append(
            {
                "id": lid,
                "points": points,
                "limit": limit,
                "succ": succ or {},
                "opposite": opposite,
                "junction": junction,
            }
        )

    def light(self, lid, pose, cycle, offset, stopline):
        self.lights.append(
            {"id": lid, "pose": pose, "cycle": cycle, "offset": offset, "stopline": stopline}
        )

    def sign(self, sid, pose, limit):
        self.signs.append({"id": sid, "pose": pose, "limit": limit})

    def sidewalk(self, sid, poly):
        self.sidewalks.append({"id": sid, "poly": poly})

    def prop(self, aid, pose, half):
        self.actors.append({"id": aid, "pose": pose, "half": half})

    def render(self):
        out = [f"town {self.name}", ""]
        for lane in self.lanes:
            out.append(f"lane {lane['id']}")
            out.append(f"  center {pts(lane['points'])}")
            out.append(f"  width {fnum(WIDTH)}")
            out.append(f"  limit {fnum(lane['limit'])}")
            for cmd in ("straight", "left", "right"):
                if cmd in lane["succ"]:
                    out.append(f"  succ {cmd} {lane['succ'][cmd]}")
            if lane["opposite"]:
                out.append(f"  opposite {lane['opposite']}")
            if lane["junction"]:
                out.append("  junction")
            out.append("")
        for light in self.lights:
            x, y, h = light["pose"]
            g, o, r = light["cycle"]
            (ax, ay), (bx, by) = light["stopline"]
            out.append(f"light {light['id']}")
            out.append(f"  pose {fnum(x)} {fnum(y)} {fnum(h)}")
            out.append(f"  cycle {fnum(g)} {fnum(o)} {fnum(r)}")
            out.append(f"  offset {fnum(light['offset'])}")
            out.append(f"  stopline {fnum(ax)} {fnum(ay)}  {fnum(bx)} {fnum(by)}")
            out.append("")
        for sign in self.signs:
            x, y, h = sign["pose"]
            out.append(f"sign {sign['id']}")
            out.append(f"  pose {fnum(x)} {fnum(y)} {fnum(h)}")
            out.append(f"  limit {fnum(sign['limit'])}")
            out.append("")
        for sw in self.sidewalks:
            out.append(f"sidewalk {sw['id']}")
            out.append(f"  poly {pts(sw['poly'])}")
            out.append("")
        for actor in self.actors:
            x, y, h = actor["pose"]
            hx, hy = actor["half"]
            out.append(f"actor {actor['id']}")
            out.append("  kind static")
            out.append(f"  pose {fnum(x)} {fnum(y)} {fnum(h)}")
            out.append(f"  half_extents {fnum(hx)} {fnum(hy)}")
            out.append("")
        return "\n".join(out).rstrip() + "\n"


HPI = math.pi / 2


def t_junction(b, prefix, center, open_leg, limit, cycle, ring_offset, cross_offset):
    """Emits the six connector lanes and three lights of a T-junction.

    `open_leg` is the compass direction of the leg that leaves the ring
    ('n', 's', 'e' or 'w'). Approach and exit lane endpoints follow from
    the junction center, so callers only wire up the surrounding lanes by
    name. Returns a dict of connector endpoints keyed by role.
    """
    cx, cy = center
    # Unit vectors for each compass leg.
    legs = {"e": (1, 0), "w": (-1, 0), "n": (0, 1), "s": (0, -1)}
    # Incoming traffic on a leg travels toward the center, so the connector
    # and light names use the direction of travel, not the leg.
    travel = {"e": "w", "w": "e", "n": "s", "s": "n"}
    # The through road runs perpendicular to the open leg.
    through = ("e", "w") if open_leg in ("n", "s") else ("n", "s")

    def lane_end(leg, incoming):
        """Endpoint of the (in|out)going lane on `leg`, right-hand traffic."""
        ux, uy = legs[leg]
        dx, dy = (-ux, -uy) if incoming else (ux, uy)
        rx, ry = dy, -dx  # right-hand side of the direction of travel
        return (cx + ux * APPROACH + rx * LANE_OFF, cy + uy * APPROACH + ry * LANE_OFF)

    def heading(leg, incoming):
        ux, uy = legs[leg]
        dx, dy = (-ux, -uy) if incoming else (ux, uy)
        return math.atan2(dy, dx)

    a, bleg = through

    def add(name, points):
        b.lane(f"{prefix}-{name}", points, limit, junction=True)

    # Straight connectors for both through directions.
    for leg_in, leg_out in ((a, bleg), (bleg, a)):
        s = lane_end(leg_in, True)
        e = lane_end(leg_out, False)
        add(f"{travel[leg_in]}-straight", [s, e])
    # Turns between the through road and the open leg.
    for leg_in in (a, bleg):
        s = lane_end(leg_in, True)
        h = heading(leg_in, True)
        ux, uy = legs[open_leg]
        ix, iy = legs[leg_in]
        cross = (-ix) * uy - (-iy) * ux  # direction of travel x open leg
        if cross > 0:
            add(f"{travel[leg_in]}-left", left_arc(s, h))
        else:
            add(f"{travel[leg_in]}-right", right_arc(s, h))
    # Turns from the open leg onto both through directions.
    s = lane_end(open_leg, True)
    h = heading(open_leg, True)
    for leg_out in (a, bleg):
        ux, uy = legs[leg_out]
        hx, hy = math.cos(h), math.sin(h)
        cross = hx * uy - hy * ux
        if cross > 0:
            add(f"{travel[open_leg]}-left", left_arc(s, h))
        else:
            add(f"{travel[open_leg]}-right", right_arc(s, h))

    # One light per approach: stop line across the incoming lane at its end,
    # pole 10 m further along the approach, 4.5 m right of the lane center.
    for leg_in in (a, bleg, open_leg):
        ux, uy = legs[leg_in]
        dx, dy = -ux, -uy  # direction of travel
        rx, ry = dy, -dx
        ex, ey = lane_end(leg_in, True)
        line = (
            (ex - rx * LANE_OFF, ey - ry * LANE_OFF),
            (ex + rx * LANE_OFF, ey + ry * LANE_OFF),
        )
        pole = (ex + dx * 10.0 + rx * 4.5, ey + dy * 10.0 + ry * 4.5)
        offset = cross_offset if leg_in == open_leg else ring_offset
        b.light(
            f"{prefix}-{travel[leg_in]}",
            (pole[0], pole[1], math.atan2(dy, dx)),
            cycle,
            offset,
            line,
        )


def build_town_a():
    b = TownBuilder("town-a")
    w, h = 240.0, 160.0
    jx = 120.0
    ring_limit, cross_limit, conn_limit = 60.0, 30.0, 30.0

    # Outer loop, counterclockwise. Bottom edge is split by the junction.
    b.lane("out-s-w", [(8, -2), (jx - 8, -2)], ring_limit,
           {"straight": "jb-e-straight", "left": "jb-e-left"}, opposite="in-s-w")
    b.lane("out-s-e", [(jx + 8, -2), (w - 8, -2)], ring_limit,
           {"straight": "out-se"}, opposite="in-s-e")
    b.lane("out-se", left_arc((w - 8, -2), 0.0), ring_limit, {"straight": "out-e"})
    b.lane("out-e", [(w + 2, 8), (w + 2, h - 8)], ring_limit,
           {"straight": "out-ne"}, opposite="in-e")
    b.lane("out-ne", left_arc((w + 2, h - 8), HPI), ring_limit, {"straight": "out-n-e"})
    b.lane("out-n-e", [(w - 8, h + 2), (jx + 8, h + 2)], ring_limit,
           {"straight": "jt-w-straight", "left": "jt-w-left"}, opposite="in-n-e")
    b.lane("out-n-w", [(jx - 8, h + 2), (8, h + 2)], ring_limit,
           {"straight": "out-nw"}, opposite="in-n-w")
    b.lane("out-nw", left_arc((8, h + 2), math.pi), ring_limit, {"straight": "out-w"})
    b.lane("out-w", [(-2, h - 8), (-2, 8)], ring_limit,
           {"straight": "out-sw"}, opposite="in-w")
    b.lane("out-sw", left_arc((-2, 8), -HPI), ring_limit, {"straight": "out-s-w"})

    # Inner loop, clockwise.
    b.lane("in-s-e", [(w - 8, 2), (jx + 8, 2)], ring_limit,
           {"straight": "jb-w-straight", "right": "jb-w-right"}, opposite="out-s-e")
    b.lane("in-s-w", [(jx - 8, 2), (8, 2)], ring_limit,
           {"straight": "in-sw"}, opposite="out-s-w")
    b.lane("in-sw", right_arc((8, 2), math.pi), ring_limit, {"straight": "in-w"})
    b.lane("in-w", [(2, 8), (2, h - 8)], ring_limit,
           {"straight": "in-nw"}, opposite="out-w")
    b.lane("in-nw", right_arc((2, h - 8), HPI), ring_limit, {"straight": "in-n-w"})
    b.lane("in-n-w", [(8, h - 2), (jx - 8, h - 2)], ring_limit,
           {"straight": "jt-e-straight", "right": "jt-e-right"}, opposite="out-n-w")
    b.lane("in-n-e", [(jx + 8, h - 2), (w - 8, h - 2)], ring_limit,
           {"straight": "in-ne"}, opposite="out-n-e")
    b.lane("in-ne", right_arc((w - 8, h - 2), 0.0), ring_limit, {"straight": "in-e"})
    b.lane("in-e", [(w - 2, h - 8), (w - 2, 8)], ring_limit,
           {"straight": "in-se"}, opposite="out-e")
    b.lane("in-se", right_arc((w - 2, 8), -HPI), ring_limit, {"straight": "in-s-e"})

    # Cross road between the two junctions.
    b.lane("cross-n", [(jx + 2, 8), (jx + 2, h - 8)], cross_limit,
           {"left": "jt-n-left", "right": "jt-n-right"}, opposite="cross-s")
    b.lane("cross-s", [(jx - 2, h - 8), (jx - 2, 8)], cross_limit,
           {"left": "jb-s-left", "right": "jb-s-right"}, opposite="cross-n")

    cycle = (10.0, 3.0, 13.0)
    t_junction(b, "jb", (jx, 0.0), "n", conn_limit, cycle, 0.0, 13.0)
    t_junction(b, "jt", (jx, h), "s", conn_limit, cycle, 0.0, 13.0)

    # Wire the connectors into the surrounding lanes.
    succ = {
        "jb-e-straight": "out-s-e",
        "jb-e-left": "cross-n",
        "jb-w-straight": "in-s-w",
        "jb-w-right": "cross-n",
        "jb-s-left": "out-s-e",
        "jb-s-right": "in-s-w",
        "jt-e-straight": "in-n-e",
        "jt-e-right": "cross-s",
        "jt-w-straight": "out-n-w",
        "jt-w-left": "cross-s",
        "jt-n-left": "out-n-w",
        "jt-n-right": "in-n-e",
    }
    for lane in b.lanes:
        if lane["id"] in succ:
            lane["succ"]["straight"] = succ[lane["id"]]

    b.sign("a-s1", (60, -6.5, 0.0), 60)
    b.sign("a-s2", (jx + 6.5, 60, HPI), 30)
    b.sign("a-s3", (180, h + 6.5, math.pi), 90)
    b.sign("a-s4", (60, h - 6.5, 0.0), 60)

    b.sidewalk("walk-s-out-w", [(8, -4), (jx - 8, -4), (jx - 8, -8), (8, -8)])
    b.sidewalk("walk-s-out-e", [(jx + 8, -4), (w - 8, -4), (w - 8, -8), (jx + 8, -8)])
    b.sidewalk("walk-s-in", [(8, 4), (jx - 8, 4), (jx - 8, 8), (8, 8)])
    b.sidewalk("walk-n-in-w", [(8, h - 4), (jx - 8, h - 4), (jx - 8, h - 8), (8, h - 8)])
    b.sidewalk("walk-n-in-e",
               [(jx + 8, h - 4), (w - 8, h - 4), (w - 8, h - 8), (jx + 8, h - 8)])
    b.sidewalk("walk-cross-w", [(jx - 10, 14), (jx - 4, 14), (jx - 4, h - 14), (jx - 10, h - 14)])
    b.sidewalk("walk-cross-e", [(jx + 4, 14), (jx + 10, 14), (jx + 10, h - 14), (jx + 4, h - 14)])

    b.prop("kiosk-s", (60, 6, 0.0), (1.0, 1.0))
    b.prop("kiosk-n", (180, h - 7, 0.0), (1.0, 1.0))
    return b


def build_town_b():
    b = TownBuilder("town-b")
    w, h = 180.0, 120.0
    jy = 60.0
    ring_limit, cross_limit, conn_limit = 60.0, 90.0, 30.0

    # Outer loop, counterclockwise. Left and right edges are split.
    b.lane("out-s", [(8, -2), (w - 8, -2)], ring_limit,
           {"straight": "out-se"}, opposite="in-s")
    b.lane("out-se", left_arc((w - 8, -2), 0.0), ring_limit, {"straight": "out-e-s"})
    b.lane("out-e-s", [(w + 2, 8), (w + 2, jy - 8)], ring_limit,
           {"straight": "jr-n-straight", "left": "jr-n-left"}, opposite="in-e-s")
    b.lane("out-e-n", [(w + 2, jy + 8), (w + 2, h - 8)], ring_limit,
           {"straight": "out-ne"}, opposite="in-e-n")
    b.lane("out-ne", left_arc((w + 2, h - 8), HPI), ring_limit, {"straight": "out-n"})
    b.lane("out-n", [(w - 8, h + 2), (8, h + 2)], ring_limit,
           {"straight": "out-nw"}, opposite="in-n")
    b.lane("out-nw", left_arc((8, h + 2), math.pi), ring_limit, {"straight": "out-w-n"})
    b.lane("out-w-n", [(-2, h - 8), (-2, jy + 8)], ring_limit,
           {"straight": "jl-s-straight", "left": "jl-s-left"}, opposite="in-w-n")
    b.lane("out-w-s", [(-2, jy - 8), (-2, 8)], ring_limit,
           {"straight": "out-sw"}, opposite="in-w-s")
    b.lane("out-sw", left_arc((-2, 8), -HPI), ring_limit, {"straight": "out-s"})

    # Inner loop, clockwise.
    b.lane("in-s", [(w - 8, 2), (8, 2)], ring_limit,
           {"straight": "in-sw"}, opposite="out-s")
    b.lane("in-sw", right_arc((8, 2), math.pi), ring_limit, {"straight": "in-w-s"})
    b.lane("in-w-s", [(2, 8), (2, jy - 8)], ring_limit,
           {"straight": "jl-n-straight", "right": "jl-n-right"}, opposite="out-w-s")
    b.lane("in-w-n", [(2, jy + 8), (2, h - 8)], ring_limit,
           {"straight": "in-nw"}, opposite="out-w-n")
    b.lane("in-nw", right_arc((2, h - 8), HPI), ring_limit, {"straight": "in-n"})
    b.lane("in-n", [(8, h - 2), (w - 8, h - 2)], ring_limit,
           {"straight": "in-ne"}, opposite="out-n")
    b.lane("in-ne", right_arc((w - 8, h - 2), 0.0), ring_limit, {"straight": "in-e-n"})
    b.lane("in-e-n", [(w - 2, h - 8), (w - 2, jy + 8)], ring_limit,
           {"straight": "jr-s-straight", "right": "jr-s-right"}, opposite="out-e-n")
    b.lane("in-e-s", [(w - 2, jy - 8), (w - 2, 8)], ring_limit,
           {"straight": "in-se"}, opposite="out-e-s")
    b.lane("in-se", right_arc((w - 2, 8), -HPI), ring_limit, {"straight": "in-s"})

    # Cross road between the junctions.
    b.lane("cross-e", [(8, jy - 2), (w - 8, jy - 2)], cross_limit,
           {"left": "jr-e-left", "right": "jr-e-right"}, opposite="cross-w")
    b.lane("cross-w", [(w - 8, jy + 2), (8, jy + 2)], cross_limit,
           {"left": "jl-w-left", "right": "jl-w-right"}, opposite="cross-e")

    cycle = (10.0, 3.0, 13.0)
    t_junction(b, "jl", (0.0, jy), "e", conn_limit, cycle, 0.0, 13.0)
    t_junction(b, "jr", (w, jy), "w", conn_limit, cycle, 0.0, 13.0)

    succ = {
        "jl-s-straight": "out-w-s",
        "jl-s-left": "cross-e",
        "jl-n-straight": "in-w-n",
        "jl-n-right": "cross-e",
        "jl-w-left": "out-w-s",
        "jl-w-right": "in-w-n",
        "jr-n-straight": "out-e-n",
        "jr-n-left": "cross-w",
        "jr-s-straight": "in-e-s",
        "jr-s-right": "cross-w",
        "jr-e-left": "out-e-n",
        "jr-e-right": "in-e-s",
    }
    for lane in b.lanes:
        if lane["id"] in succ:
            lane["succ"]["straight"] = succ[lane["id"]]

    b.sign("b-s1", (90, jy - 6.5, 0.0), 90)
    b.sign("b-s2", (90, jy + 6.5, math.pi), 90)
    b.sign("b-s3", (6.5, 30, HPI), 60)
    b.sign("b-s4", (w + 6.5, 90, HPI), 30)

    b.sidewalk("walk-cross-s", [(14, jy - 6), (w - 14, jy - 6), (w - 14, jy - 10), (14, jy - 10)])
    b.sidewalk("walk-cross-n", [(14, jy + 6), (w - 14, jy + 6), (w - 14, jy + 10), (14, jy + 10)])
    b.sidewalk("walk-s-out", [(8, -4), (w - 8, -4), (w - 8, -8), (8, -8)])
    b.sidewalk("walk-n-in", [(8, h - 4), (w - 8, h - 4), (w - 8, h - 8), (8, h - 8)])

    b.prop("kiosk-cross", (120, jy - 8, 0.0), (1.0, 1.0))
    b.prop("kiosk-north", (60, h - 6, 0.0), (1.0, 1.0))
    return b


def main():
    root = os.path.join(os.path.dirname(__file__), "..", "crates", "core", "assets")
    for builder in (build_town_a(), build_town_b()):
        path = os.path.join(root, f"{builder.name}.town")
        with open(path, "w") as f:
            f.write(builder.render())
        print(f"wrote {path}: {len(builder.lanes)} lanes, {len(builder.lights)} lights")


if __name__ == "__main__":
    main()
