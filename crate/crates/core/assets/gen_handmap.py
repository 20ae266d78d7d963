"""Regenerates handmap_v1.txt (palmar right-side-up hand, 2 mm cells)."""
import math

SCALE = 2.0
W, H = 60, 90
# finger capsules: (region, tip_xy, base_xy, radius) in mm
FINGERS = [
    ("T", (8.0, 80.0), (26.0, 126.0), 10.0),
    ("I", (36.0, 28.0), (38.0, 96.0), 8.0),
    ("M", (55.0, 16.0), (55.0, 94.0), 8.0),
    ("R", (74.0, 26.0), (72.0, 96.0), 7.5),
    ("L", (96.0, 50.0), (88.0, 100.0), 6.5),
]
NAMES = {"T": "thumb", "I": "index", "M": "middle", "R": "ring", "L": "little"}
PALM = (30.0, 88.0, 94.0, 154.0)
WRIST = (38.0, 152.0, 86.0, 180.0)


def seg_dist(p, a, b):
    ax, ay = a
    bx, by = b
    px, py = p
    dx, dy = bx - ax, by - ay
    t = max(0.0, min(1.0, ((px - ax) * dx + (py - ay) * dy) / (dx * dx + dy * dy)))
    return math.hypot(px - ax - t * dx, py - ay - t * dy)


def inside(rect, p):
    return rect[0] <= p[0] <= rect[2] and rect[1] <= p[1] <= rect[3]


grid = []
for row in range(H):
    line = ""
    for col in range(W):
        p = ((col + 0.5) * SCALE, (row + 0.5) * SCALE)
        c = "."
        if inside(WRIST, p):
            c = "W"
        for code, tip, base, r in FINGERS:
            if seg_dist(p, tip, base) <= r:
                c = code
        if inside(PALM, p):
            c = "P"
        line += c
    grid.append(line)

out = ["# hand map v1: palmar side, fingertips at the top, wrist at the bottom",
       "# regions: . background, W wrist, P palm, T thumb, I index, M middle, R ring, L little",
       "version 1", f"scale_mm {SCALE:g}", f"size {W} {H}"]
for code, tip, base, _ in FINGERS:
    out.append(f"finger {NAMES[code]} {tip[0]:g} {tip[1]:g} {base[0]:g} {base[1]:g}")
out.append("grid")
out += grid
open("handmap_v1.txt", "w").write("\n".join(out) + "\n")
