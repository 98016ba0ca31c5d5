"""Scan orders over patch grids.

Three orders matter here: the plain row-major order, a clockwise inward
spiral over a rectangle, and the mask-aware order that serializes the
shadow rectangle first. The mask-aware order is built from two pieces:

* the shadow rect is covered by the inward spiral traversed in reverse,
  so the sequence ends at the rect corner facing the rest of the scan;
* the remaining cells are covered by a greedy boundary-hugging walk that
  starts at the grid corner nearest the rect, repeatedly steps to the
  unvisited 4-neighbor touching the most visited cells, and jumps to the
  nearest unvisited cell when boxed in.

All tie-breaks are fixed: edges in top, bottom, left, right order; steps
in the direction order up, down, left, right; jumps and perimeter picks
in row-major order. With those rules every grid and rect has exactly one
mask-aware order.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import NoShadowRegion, ValidationError
from .maskgrid import PatchGrid, RegionRect, shadow_rect

DIRECTIONS = ((-1, 0), (1, 0), (0, -1), (0, 1))
_EDGE_ORDER = ("top", "bottom", "left", "right")

KIND_HORIZONTAL = "horizontal"
KIND_MAS = "mas"


@dataclass(frozen=True)
class ScanPath:
    """An ordering of every cell of a rows x cols grid."""

    rows: int
    cols: int
    patch: int
    kind: str
    coords: tuple[tuple[int, int], ...]
    start_a: tuple[int, int] | None = None
    start_b: tuple[int, int] | None = None

    def __len__(self) -> int:
        return len(self.coords)

    @property
    def flat(self) -> np.ndarray:
        """Cells as flat row-major indices, in visit order."""
        return np.fromiter((r * self.cols + c for r, c in self.coords), dtype=np.int64, count=len(self.coords))

    def is_permutation(self) -> bool:
        return np.array_equal(np.sort(self.flat), np.arange(self.rows * self.cols))


def horizontal_order(rows: int, cols: int, patch: int = 1) -> ScanPath:
    """Row-major left-to-right order. The right-to-left sweep of the
    horizontal stage is realized downstream by scanning the reversed
    sequence, not by a second path object."""
    if rows < 1 or cols < 1:
        raise ValidationError(f"grid must be non-empty, got {rows}x{cols}")
    coords = tuple((r, c) for r in range(rows) for c in range(cols))
    return ScanPath(rows, cols, patch, KIND_HORIZONTAL, coords)


def select_start_a(rect: RegionRect, rows: int, cols: int) -> tuple[int, int]:
    """Grid corner where the two nearest grid edges around the rect meet.

    The primary edge is the grid edge closest to the rect; the secondary is
    the nearer of the two orthogonal edges. Ties fall to the fixed edge
    order. The returned corner can lie inside the rect when the rect hugs
    it; the greedy traversal tolerates that.
    """
    dist = {
        "top": rect.top,
        "bottom": rows - 1 - rect.bottom,
        "left": rect.left,
        "right": cols - 1 - rect.right,
    }
    if min(dist.values()) < 0:
        raise ValidationError(f"rect {rect} exceeds grid {rows}x{cols}")
    edge1 = min(_EDGE_ORDER, key=lambda e: (dist[e], _EDGE_ORDER.index(e)))
    orthogonal = ("left", "right") if edge1 in ("top", "bottom") else ("top", "bottom")
    edge2 = min(orthogonal, key=lambda e: (dist[e], _EDGE_ORDER.index(e)))
    picked = {edge1, edge2}
    return (0 if "top" in picked else rows - 1, 0 if "left" in picked else cols - 1)


def _on_perimeter(rect: RegionRect, cell: tuple[int, int]) -> bool:
    r, c = cell
    if not rect.contains(cell):
        return False
    return r in (rect.top, rect.bottom) or c in (rect.left, rect.right)


def _ring_clockwise(t: int, b: int, l: int, r: int) -> list[tuple[int, int]]:
    cells = [(t, j) for j in range(l, r + 1)]
    cells += [(i, r) for i in range(t + 1, b + 1)]
    cells += [(b, j) for j in range(r - 1, l - 1, -1)]
    cells += [(i, l) for i in range(b - 1, t, -1)]
    return cells


def spiral_in(rect: RegionRect, start: tuple[int, int]) -> list[tuple[int, int]]:
    """Clockwise inward spiral over the rect, beginning at a perimeter cell.

    Each ring is walked as one clockwise circuit from the entry cell; the
    walk then drops to the nearest cell of the shrunk bounds and repeats.
    From any rect corner every step has Manhattan distance 1. From a
    mid-edge entry the single turn-around (or ring hand-off) may exceed
    that; callers that need strict unit steps enter at a corner.
    """
    if not _on_perimeter(rect, start):
        raise ValidationError(f"start {start} is not on the perimeter of {rect}")
    t, b, l, r = rect.top, rect.bottom, rect.left, rect.right
    out: list[tuple[int, int]] = []
    cur = start
    while t <= b and l <= r:
        if t == b:
            _, cc = cur
            out += [(t, j) for j in range(cc, r + 1)]
            out += [(t, j) for j in range(cc - 1, l - 1, -1)]
            break
        if l == r:
            cr, _ = cur
            out += [(i, l) for i in range(cr, b + 1)]
            out += [(i, l) for i in range(cr - 1, t - 1, -1)]
            break
        ring = _ring_clockwise(t, b, l, r)
        k = ring.index(cur)
        out += ring[k:] + ring[:k]
        t, b, l, r = t + 1, b - 1, l + 1, r - 1
        if t <= b and l <= r:
            er, ec = out[-1]
            cur = (min(max(er, t), b), min(max(ec, l), r))
    return out


def _touch(visited: np.ndarray, cell: tuple[int, int]) -> int:
    rows, cols = visited.shape
    n = 0
    for dr, dc in DIRECTIONS:
        rr, cc = cell[0] + dr, cell[1] + dc
        if 0 <= rr < rows and 0 <= cc < cols and visited[rr, cc]:
            n += 1
    return n


def _nearest_unvisited(visited: np.ndarray, cur: tuple[int, int]) -> tuple[int, int]:
    rs, cs = np.nonzero(~visited)
    d = np.abs(rs - cur[0]) + np.abs(cs - cur[1])
    k = int(np.argmin(d))  # nonzero() is row-major, so argmin keeps that tie order
    return (int(rs[k]), int(cs[k]))


def gbs_traverse(grid: PatchGrid, rect: RegionRect, start: tuple[int, int]) -> list[tuple[int, int]]:
    """Greedy boundary-hugging coverage of the non-rect cells.

    The rect counts as visited from the outset, which biases early steps
    toward cells that touch both the rect boundary and the grid edge. The
    returned list covers exactly the cells outside the rect, each once.
    """
    rows, cols = grid.rows, grid.cols
    if not (0 <= start[0] < rows and 0 <= start[1] < cols):
        raise ValidationError(f"start {start} outside grid {rows}x{cols}")
    if not (0 <= rect.top and rect.bottom < rows and 0 <= rect.left and rect.right < cols):
        raise ValidationError(f"rect {rect} exceeds grid {rows}x{cols}")
    visited = np.zeros((rows, cols), dtype=bool)
    visited[rect.top : rect.bottom + 1, rect.left : rect.right + 1] = True
    seen = int(visited.sum())
    path: list[tuple[int, int]] = []
    cur = start
    if not visited[cur]:
        visited[cur] = True
        seen += 1
        path.append(cur)
    total = rows * cols
    while seen < total:
        best = None
        best_touch = -1
        for dr, dc in DIRECTIONS:
            nxt = (cur[0] + dr, cur[1] + dc)
            if 0 <= nxt[0] < rows and 0 <= nxt[1] < cols and not visited[nxt]:
                touch = _touch(visited, nxt)
                if touch > best_touch:
                    best, best_touch = nxt, touch
        if best is None:
            best = _nearest_unvisited(visited, cur)
        cur = best
        visited[cur] = True
        seen += 1
        if not rect.contains(cur):
            path.append(cur)
    return path


def _nearest_perimeter_cell(rect: RegionRect, target: tuple[int, int]) -> tuple[int, int]:
    best = None
    best_d = None
    for r in range(rect.top, rect.bottom + 1):
        for c in range(rect.left, rect.right + 1):
            if not _on_perimeter(rect, (r, c)):
                continue
            d = abs(r - target[0]) + abs(c - target[1])
            if best_d is None or d < best_d:
                best, best_d = (r, c), d
    return best


def mas_order(grid: PatchGrid) -> ScanPath:
    """Mask-aware order: reversed shadow-rect spiral, then the greedy walk.

    The shadow cells occupy the path prefix. With no shadow patch the order
    degrades to plain row-major.
    """
    try:
        rect = shadow_rect(grid)
    except NoShadowRegion:
        return horizontal_order(grid.rows, grid.cols, grid.patch)
    start_a = select_start_a(rect, grid.rows, grid.cols)
    start_b = _nearest_perimeter_cell(rect, start_a)
    path_b = list(reversed(spiral_in(rect, start_b)))
    path_a = gbs_traverse(grid, rect, start_a)
    coords = tuple(path_b + path_a)
    return ScanPath(grid.rows, grid.cols, grid.patch, KIND_MAS, coords, start_a, start_b)


def invert_path(path: ScanPath) -> ScanPath:
    """The inverse permutation, carrying the original metadata along."""
    inv = np.empty(len(path.coords), dtype=np.int64)
    inv[path.flat] = np.arange(len(path.coords))
    coords = tuple((int(f) // path.cols, int(f) % path.cols) for f in inv)
    return replace(path, coords=coords)


def pixel_order(path: ScanPath) -> np.ndarray:
    """Lift a patch-level path to a flat pixel permutation.

    Patches are emitted in path order; pixels within a patch stay
    row-major, so a shadow-first patch path yields a shadow-first pixel
    sequence.
    """
    s = path.patch
    width = path.cols * s
    block = (np.arange(s)[:, None] * width + np.arange(s)[None, :]).ravel()
    idx = np.empty(len(path.coords) * s * s, dtype=np.int64)
    pos = 0
    for pr, pc in path.coords:
        idx[pos : pos + s * s] = pr * s * width + pc * s + block
        pos += s * s
    return idx


def mean_adjacent_gap(path: ScanPath, cells) -> float:
    """Mean |visit-index difference| over 4-adjacent pairs within ``cells``.

    This is the locality statistic: smaller means neighboring shadow
    patches sit closer together in the serialized sequence. Returns 0.0
    when the cell set has no adjacent pairs.
    """
    pos = {cell: i for i, cell in enumerate(path.coords)}
    cellset = set(cells)
    gaps = []
    for r, c in cellset:
        for v in ((r, c + 1), (r + 1, c)):
            if v in cellset:
                gaps.append(abs(pos[(r, c)] - pos[v]))
    return float(np.mean(gaps)) if gaps else 0.0


def dump_path(path: ScanPath) -> str:
    """Serialize: header ``rows cols patch kind``, then one ``row col`` line per cell."""
    lines = [f"{path.rows} {path.cols} {path.patch} {path.kind}"]
    lines.extend(f"{r} {c}" for r, c in path.coords)
    return "\n".join(lines) + "\n"


def parse_path(text: str) -> ScanPath:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValidationError("empty path dump")
    head = lines[0].split()
    if len(head) != 4:
        raise ValidationError(f"bad path header: {lines[0]!r}")
    rows, cols, patch = int(head[0]), int(head[1]), int(head[2])
    coords = []
    for ln in lines[1:]:
        parts = ln.split()
        if len(parts) != 2:
            raise ValidationError(f"bad path line: {ln!r}")
        coords.append((int(parts[0]), int(parts[1])))
    return ScanPath(rows, cols, patch, head[3], tuple(coords))
