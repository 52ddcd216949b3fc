#!/usr/bin/env python3
"""Regenerates the bundled G-code corpus under data/gcode.

The files imitate common slicer dialects (Cura ;LAYER:n markers, PrusaSlicer
;LAYER_CHANGE markers, marker-less Z changes) so layer detection is exercised
on all of them. Output is deterministic.
"""

import math
import sys
from pathlib import Path

FILAMENT_AREA = math.pi * (1.75 / 2) ** 2


class Writer:
    def __init__(self, relative_e=False, width=0.45):
        self.lines = []
        self.relative_e = relative_e
        self.e = 0.0
        self.width = width
        self.x = 0.0
        self.y = 0.0
        self.z = 0.0
        self.layer_height = 0.2

    def emit(self, text):
        self.lines.append(text)

    def travel(self, x, y, f=9000):
        self.emit(f"G0 F{f} X{x:.3f} Y{y:.3f}")
        self.x, self.y = x, y

    def extrude_to(self, x, y, f=None):
        length = math.hypot(x - self.x, y - self.y)
        de = length * self.width * self.layer_height / FILAMENT_AREA
        if self.relative_e:
            e_word = f"E{de:.5f}"
        else:
            self.e += de
            e_word = f"E{self.e:.5f}"
        feed = f" F{f}" if f else ""
        self.emit(f"G1{feed} X{x:.3f} Y{y:.3f} {e_word}")
        self.x, self.y = x, y

    def retract(self, length=0.8):
        if self.relative_e:
            self.emit(f"G1 F2400 E-{length:.5f}")
        else:
            self.e -= length
            self.emit(f"G1 F2400 E{self.e:.5f}")

    def unretract(self, length=0.8):
        if self.relative_e:
            self.emit(f"G1 F2400 E{length:.5f}")
        else:
            self.e += length
            self.emit(f"G1 F2400 E{self.e:.5f}")

    def polygon(self, pts, f=None):
        self.travel(*pts[0])
        self.unretract()
        for i, p in enumerate(pts[1:] + pts[:1]):
            self.extrude_to(*p, f=f if i == 0 else None)
        self.retract()

    def text(self, newline="\n", trailing=True):
        body = newline.join(self.lines)
        return body + newline if trailing else body


def start_gcode(w, nozzle=200, bed=60, flavor="cura"):
    if flavor == "cura":
        w.emit(";FLAVOR:Marlin")
        w.emit(";Generated with a test slicer profile")
    else:
        w.emit("; generated by test slicer profile (PrusaSlicer dialect)")
    w.emit(f"M140 S{bed} ; bed")
    w.emit(f"M104 S{nozzle} ; nozzle")
    w.emit(f"M190 S{bed}")
    w.emit(f"M109 S{nozzle}")
    w.emit("G28 ; home all axes")
    w.emit("G90")
    w.emit("M83" if w.relative_e else "M82")
    w.emit("G92 E0")


def end_gcode(w):
    w.retract(2.0)
    w.emit("G91")
    w.emit("G1 Z10 F600")
    w.emit("G90")
    w.emit("M104 S0")
    w.emit("M140 S0")
    w.emit("M107")
    w.emit("M84 ; motors off")


def raster(w, x0, y0, x1, y1, spacing, horizontal=True, f=None):
    """Zig-zag fill of a rectangle."""
    w.travel(x0, y0)
    w.unretract()
    n = int(round(((y1 - y0) if horizontal else (x1 - x0)) / spacing))
    for i in range(n + 1):
        if horizontal:
            y = y0 + i * spacing
            xs = (x0, x1) if i % 2 == 0 else (x1, x0)
            if i > 0:
                w.extrude_to(xs[0], y)
            w.extrude_to(xs[1], y, f=f if i == 0 else None)
        else:
            x = x0 + i * spacing
            ys = (y0, y1) if i % 2 == 0 else (y1, y0)
            if i > 0:
                w.extrude_to(x, ys[0])
            w.extrude_to(x, ys[1], f=f if i == 0 else None)
    w.retract()


def wrench_outline(cx, cy):
    pts = []
    # handle
    pts += [(cx - 40, cy - 4), (cx + 22, cy - 4)]
    # open-ended head: arc around (cx+30, cy) with a jaw slot
    for k in range(0, 13):
        a = math.radians(-150 + k * 25)
        pts.append((cx + 30 + 12 * math.cos(a), cy + 12 * math.sin(a)))
    pts += [(cx + 40, cy + 3), (cx + 30, cy + 3), (cx + 30, cy - 3), (cx + 40, cy - 3)]
    pts += [(cx + 22, cy + 4), (cx - 40, cy + 4)]
    # ring end
    for k in range(0, 9):
        a = math.radians(60 + k * 30)
        pts.append((cx - 44 + 8 * math.cos(a), cy + 8 * math.sin(a)))
    return pts


def make_wrench():
    w = Writer(relative_e=False)
    start_gcode(w, nozzle=200, bed=60, flavor="cura")
    w.emit(";LAYER_COUNT:12")
    cx, cy = 110.0, 110.0
    for layer in range(12):
        z = 0.2 * (layer + 1)
        w.emit(f";LAYER:{layer}")
        w.emit(f"G0 F600 Z{z:.3f}")
        if layer == 0:
            w.emit("M106 S0")
        elif layer == 1:
            w.emit("M106 S255")
        w.emit(";TYPE:WALL-OUTER")
        w.polygon(wrench_outline(cx, cy), f=1800)
        w.emit(";TYPE:FILL")
        raster(w, cx - 38, cy - 2.5, cx + 20, cy + 2.5, 0.5, horizontal=(layer % 2 == 0), f=3600)
    end_gcode(w)
    return w.text()


LETTERS = {
    # stroke rectangles per glyph in a 10 x 14 cell: (x0, y0, x1, y1)
    "L": [(0, 0, 2, 14), (0, 0, 9, 2)],
    "M": [(0, 0, 2, 14), (8, 0, 10, 14), (2, 10, 4, 14), (6, 10, 8, 14), (4, 7, 6, 11)],
    "P": [(0, 0, 2, 14), (2, 12, 8, 14), (2, 6, 8, 8), (8, 6, 10, 14)],
    "R": [(0, 0, 2, 14), (2, 12, 8, 14), (2, 6, 8, 8), (8, 8, 10, 14), (6, 0, 8, 6)],
    "I": [(4, 0, 6, 14)],
    "N": [(0, 0, 2, 14), (8, 0, 10, 14), (2, 9, 4, 12), (4, 6, 6, 9), (6, 3, 8, 6)],
    "T": [(4, 0, 6, 12), (0, 12, 10, 14)],
}


def make_text():
    w = Writer(relative_e=True)
    start_gcode(w, nozzle=205, bed=60, flavor="prusa")
    word = "PRINT"
    for layer in range(6):
        z = 0.2 * (layer + 1)
        w.emit(";LAYER_CHANGE")
        w.emit(f";Z:{z:.1f}")
        w.emit(f";HEIGHT:0.2")
        w.emit(f"G1 Z{z:.3f} F720")
        for i, ch in enumerate(word):
            ox = 60 + i * 14
            oy = 100
            for (x0, y0, x1, y1) in LETTERS[ch]:
                w.emit(f";TYPE:Perimeter")
                w.polygon([(ox + x0, oy + y0), (ox + x1, oy + y0), (ox + x1, oy + y1), (ox + x0, oy + y1)], f=1500)
    end_gcode(w)
    return w.text()


def make_square():
    w = Writer(relative_e=False, width=0.5)
    w.layer_height = 0.35
    start_gcode(w, nozzle=190, bed=60, flavor="cura")
    w.emit(";LAYER_COUNT:1")
    w.emit(";LAYER:0")
    w.emit("G0 F600 Z0.350")
    w.emit(";TYPE:WALL-OUTER")
    w.polygon([(50, 50), (150, 50), (150, 150), (50, 150)], f=7200)
    w.emit(";TYPE:SKIN")
    raster(w, 50.5, 50.5, 149.5, 149.5, 0.5, horizontal=True, f=7200)
    end_gcode(w)
    return w.text()


def make_ten_layer():
    w = Writer(relative_e=True)
    start_gcode(w, nozzle=200, bed=60, flavor="cura")
    w.emit(";LAYER_COUNT:10")
    for layer in range(10):
        w.emit(f";LAYER:{layer}")
        w.emit(f"G0 F600 Z{0.2 * (layer + 1):.3f}")
        w.emit(";TYPE:WALL-OUTER")
        w.polygon([(90, 90), (130, 90), (130, 130), (90, 130)], f=2400)
        w.emit(";TYPE:FILL")
        raster(w, 92, 92, 128, 128, 2.0, horizontal=(layer % 2 == 0), f=4800)
    end_gcode(w)
    return w.text()


def make_markerless():
    w = Writer(relative_e=False)
    w.layer_height = 0.35
    w.emit("; hand-written test part, no layer markers")
    w.emit("M104 S200")
    w.emit("M140 S60")
    w.emit("G28")
    w.emit("G90")
    w.emit("M82")
    w.emit("G92 E0")
    for z in (0.35, 0.70):
        w.emit(f"G1 Z{z:.2f} F600")
        w.polygon([(100, 100), (120, 100), (120, 120), (100, 120)], f=1800)
        raster(w, 101, 101, 119, 119, 1.0, horizontal=(z < 0.5), f=3000)
    w.emit("G1 Z5 F600")
    w.emit("M104 S0")
    return w.text()


def make_crlf():
    """Windows line endings and no final newline."""
    w = Writer(relative_e=True)
    start_gcode(w, nozzle=215, bed=70, flavor="cura")
    for layer in range(3):
        w.emit(f";LAYER:{layer}")
        w.emit(f"G0 F600 Z{0.25 * (layer + 1):.3f}")
        w.polygon([(70, 70), (80, 70), (80, 80), (70, 80)], f=1200)
    end_gcode(w)
    return w.text(newline="\r\n", trailing=False)


def main():
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).resolve().parent.parent / "data" / "gcode"
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "wrench.gcode": make_wrench(),
        "text_print.gcode": make_text(),
        "square_single_layer.gcode": make_square(),
        "box_10_layers.gcode": make_ten_layer(),
        "markerless_two_layer.gcode": make_markerless(),
        "small_square_crlf.gcode": make_crlf(),
    }
    for name, text in files.items():
        (out / name).write_bytes(text.encode())
        print(f"{name}: {text.count(chr(10)) + 1} lines")


if __name__ == "__main__":
    main()
