"""Reading and writing the MovingAI benchmark ``.map`` and ``.scen`` formats."""
from pathlib import Path

import numpy as np

from .errors import ContractError, ParseError
from .gridworld import GridMap, MapfInstance
from .heuristics import distance_field

FREE_GLYPHS = ".G"
OBSTACLE_GLYPHS = "@OT"


def parse_map(text, path=None):
    lines = text.split("\n")
    header = {}
    i = 0
    while i < len(lines):
        line = lines[i].rstrip("\r")
        i += 1
        if line.strip() == "map":
            break
        parts = line.split()
        if len(parts) != 2 or parts[0] not in ("type", "height", "width"):
            raise ParseError(f"expected a header line (type/height/width/map), got {line!r}", i, path)
        header[parts[0]] = parts[1]
    else:
        raise ParseError("missing 'map' header line", i, path)
    for key in ("type", "height", "width"):
        if key not in header:
            raise ParseError(f"missing '{key}' header", None, path)
    try:
        h, w = int(header["height"]), int(header["width"])
    except ValueError:
        raise ParseError("height and width must be integers", None, path) from None
    if h < 1 or w < 1:
        raise ParseError(f"non-positive map size {h}x{w}", None, path)

    body = [ln.rstrip("\r") for ln in lines[i:]]
    while body and body[-1] == "":
        body.pop()
    if len(body) != h:
        raise ParseError(f"declared height {h} but found {len(body)} map rows", i + len(body), path)
    cells = np.zeros((h, w), dtype=bool)
    for r, row in enumerate(body):
        lineno = i + r + 1
        if len(row) != w:
            raise ParseError(f"row {r} has {len(row)} columns, declared width is {w}", lineno, path)
        for c, ch in enumerate(row):
            if ch in OBSTACLE_GLYPHS:
                cells[r, c] = True
            elif ch not in FREE_GLYPHS:
                raise ParseError(f"unknown glyph {ch!r} at column {c}", lineno, path)
    return GridMap(cells, glyphs=body), header["type"]


def load_map(path):
    """Parse a benchmark map file into a GridMap that remembers its glyphs."""
    return parse_map(Path(path).read_text(), str(path))[0]


def map_body(grid):
    if grid.glyphs is not None:
        return list(grid.glyphs)
    return ["".join("@" if v else "." for v in row) for row in grid.cells]


def format_map(grid, map_type="octile"):
    rows = map_body(grid)
    return f"type {map_type}\nheight {grid.height}\nwidth {grid.width}\nmap\n" + "\n".join(rows) + "\n"


def save_map(path, grid, map_type="octile"):
    Path(path).write_text(format_map(grid, map_type))


def parse_scen_records(text, path=None):
    """Return a list of ``(lineno, fields)`` for each scenario record."""
    lines = text.split("\n")
    if not lines or not lines[0].startswith("version"):
        raise ParseError("missing 'version' header", 1, path)
    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        line = line.rstrip("\r")
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 9:
            raise ParseError(f"expected 9 tab-separated fields, got {len(parts)}", lineno, path)
        try:
            vals = [int(parts[0])] + [parts[1]] + [int(v) for v in parts[2:8]] + [float(parts[8])]
        except ValueError:
            raise ParseError("non-numeric field in scenario record", lineno, path) from None
        records.append((lineno, vals))
    return records


def load_scen(path, grid, n):
    """First ``n`` scenario records as a validated MapfInstance."""
    text = Path(path).read_text()
    records = parse_scen_records(text, str(path))
    if n < 1:
        raise ContractError(f"need at least one agent, got n={n}")
    if n > len(records):
        raise ContractError(f"{path}: requested {n} agents but the scenario has {len(records)} records")
    starts, goals = [], []
    seen_s, seen_g = {}, {}
    for k, (lineno, rec) in enumerate(records[:n]):
        _, _, w, h, sx, sy, gx, gy, _ = rec
        if (w, h) != (grid.width, grid.height):
            raise ParseError(f"record {k}: map size {w}x{h} does not match {grid.width}x{grid.height}", lineno, str(path))
        s, g = (sy, sx), (gy, gx)
        if not grid.is_free(s):
            raise ParseError(f"record {k}: start (x={sx}, y={sy}) is not a free cell", lineno, str(path))
        if not grid.is_free(g):
            raise ParseError(f"record {k}: goal (x={gx}, y={gy}) is not a free cell", lineno, str(path))
        if s in seen_s:
            raise ParseError(f"record {k}: duplicate start, also used by record {seen_s[s]}", lineno, str(path))
        if g in seen_g:
            raise ParseError(f"record {k}: duplicate goal, also used by record {seen_g[g]}", lineno, str(path))
        if not np.isfinite(distance_field(grid, g)[s]):
            raise ParseError(f"record {k}: goal unreachable from start", lineno, str(path))
        seen_s[s], seen_g[g] = k, k
        starts.append(s)
        goals.append(g)
    return MapfInstance(grid, starts, goals)


def format_scen(instance, map_name="map", bucket=0):
    lines = ["version 1"]
    grid = instance.map
    for s, g in zip(instance.starts, instance.goals):
        opt = distance_field(grid, g)[s]
        lines.append("\t".join(str(v) for v in (
            bucket, map_name, grid.width, grid.height, s[1], s[0], g[1], g[0], f"{opt:.8f}",
        )))
    return "\n".join(lines) + "\n"


def save_scen(path, instance, map_name="map"):
    Path(path).write_text(format_scen(instance, map_name))
