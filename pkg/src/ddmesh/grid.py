"""Uniform computational grids and their overlapping slab/block decompositions.

The computational domain is a d-dimensional box discretized by a uniform
node-centered grid.  A decomposition splits the node index box into M
overlapping sub-boxes; adjacent boxes share exactly ``overlap`` grid lines
per interface.  For assembling a single global field out of per-subdomain
fields, every node is owned by exactly one subdomain: the overlap region is
split at its midline, ties going to the lower-indexed subdomain.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError

PHYSICAL = "physical"
INTERFACE = "interface"


@dataclass(frozen=True)
class CompGrid:
    """Uniform node-centered grid on a d-dimensional box.

    Node ``i`` along axis ``k`` sits at ``extents[k][0] + i * spacing[k]``;
    the coordinate arrays are generated with exactly that arithmetic so the
    stored node positions are reproducible bit for bit.
    """

    dim: int
    extents: tuple[tuple[float, float], ...]
    counts: tuple[int, ...]

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple((b - a) / (n - 1) for (a, b), n in zip(self.extents, self.counts))

    @property
    def measure(self) -> float:
        """Area (2D) or volume (3D) of the computational box."""
        out = 1.0
        for a, b in self.extents:
            out *= b - a
        return out

    def axes(self) -> tuple[np.ndarray, ...]:
        """Per-axis node coordinate arrays."""
        return tuple(a + np.arange(n) * h
                     for (a, _), n, h in zip(self.extents, self.counts, self.spacing))

    def shape(self) -> tuple[int, ...]:
        return self.counts


def build_grid(dim: int,
               extents: tuple[tuple[float, float], ...],
               counts: tuple[int, ...]) -> CompGrid:
    """Validate and build a :class:`CompGrid`."""
    if dim not in (2, 3):
        raise ConfigurationError(f"dim must be 2 or 3, got {dim}")
    extents = tuple((float(a), float(b)) for a, b in extents)
    counts = tuple(int(n) for n in counts)
    if len(extents) != dim or len(counts) != dim:
        raise ConfigurationError(
            f"need {dim} extents and counts, got {len(extents)} and {len(counts)}")
    for (a, b) in extents:
        if not np.isfinite([a, b]).all() or b <= a:
            raise ConfigurationError(f"degenerate extent [{a}, {b}]")
    for n in counts:
        if n < 3:
            raise ConfigurationError(f"need at least 3 nodes per axis, got {n}")
    return CompGrid(dim=dim, extents=extents, counts=counts)


@dataclass(frozen=True)
class Subdomain:
    """One overlapping index box of a decomposition.

    ``box`` is the per-axis inclusive global index range.  ``faces[k]``
    gives the (low, high) face kinds along axis ``k``; an interface face
    carries, in ``neighbors``, the id of the subdomain that donates its
    Dirichlet trace.  The trace is read at the face's own global grid line,
    which lies strictly inside the donor's box.  ``owned`` is the per-axis
    index range (a sub-box of ``box``) whose nodes this subdomain
    contributes to the assembled global field.
    """

    id: int
    pos: tuple[int, ...]
    box: tuple[tuple[int, int], ...]
    faces: tuple[tuple[str, str], ...]
    neighbors: dict[tuple[int, int], int]  # (axis, side) -> donor subdomain id
    owned: tuple[tuple[int, int], ...]

    def shape(self) -> tuple[int, ...]:
        return tuple(hi - lo + 1 for lo, hi in self.box)

    def slices(self) -> tuple[slice, ...]:
        """Global-array slices covering this box."""
        return tuple(slice(lo, hi + 1) for lo, hi in self.box)

    def owned_global_slices(self) -> tuple[slice, ...]:
        return tuple(slice(lo, hi + 1) for lo, hi in self.owned)

    def owned_local_slices(self) -> tuple[slice, ...]:
        return tuple(slice(olo - blo, ohi - blo + 1)
                     for (olo, ohi), (blo, _) in zip(self.owned, self.box))


@dataclass(frozen=True)
class Decomposition:
    grid: CompGrid
    layout: tuple[int, ...]
    overlap: int
    subdomains: tuple[Subdomain, ...]

    @property
    def nsub(self) -> int:
        return len(self.subdomains)


def _partition_axis(n: int, parts: int) -> list[tuple[int, int]]:
    """Near-equal disjoint partition of indices 0..n-1; remainder nodes go
    to the lowest-indexed boxes."""
    base, rem = divmod(n, parts)
    out = []
    start = 0
    for p in range(parts):
        size = base + (1 if p < rem else 0)
        out.append((start, start + size - 1))
        start += size
    return out


def _extend_axis(segments: list[tuple[int, int]], overlap: int,
                 n: int, axis: int) -> tuple[list[tuple[int, int]], list[int]]:
    """Extend disjoint segments into their neighbors and compute ownership cuts.

    Returns the overlapping boxes and, for each internal boundary, the last
    global index owned by the lower segment (overlap midline, ties down).
    """
    up = overlap // 2          # extension of the lower box into the upper
    down = overlap - up        # extension of the upper box into the lower
    boxes = []
    for p, (s, e) in enumerate(segments):
        lo = s - down if p > 0 else s
        hi = e + up if p < len(segments) - 1 else e
        boxes.append((lo, hi))
    cuts = []
    for p in range(len(segments) - 1):
        a = boxes[p + 1][0]         # first shared line
        b = boxes[p][1]             # last shared line
        cuts.append((a + b) // 2)   # midline; integer midline goes down
    # validity: strict interleaving and no contact between non-adjacent boxes
    for p in range(len(boxes) - 1):
        lo0, hi0 = boxes[p]
        lo1, hi1 = boxes[p + 1]
        if not (lo0 < lo1 < hi0 < hi1):
            raise ConfigurationError(
                f"overlap {overlap} too large for {n} nodes split {len(segments)} "
                f"ways along axis {axis}")
    for p in range(len(boxes) - 2):
        if boxes[p + 2][0] <= boxes[p][1]:
            raise ConfigurationError(
                f"overlap {overlap} makes non-adjacent boxes touch along axis {axis}")
    for lo, hi in boxes:
        if hi - lo + 1 < 3:
            raise ConfigurationError(
                f"axis {axis}: a subdomain box has fewer than 3 nodes")
    return boxes, cuts


def build_decomposition(grid: CompGrid, layout: tuple[int, ...],
                        overlap: int = 3) -> Decomposition:
    """Overlapping slab/block decomposition of ``grid``.

    ``layout`` holds per-axis subdomain counts (``(4, 1)`` = 4 slabs along
    the first axis, ``(2, 2)`` = 2x2 blocks).  ``overlap`` is the number of
    grid lines shared by adjacent boxes; it must be at least 2 so every
    interface trace line is strictly interior to its donor box.
    """
    layout = tuple(int(m) for m in layout)
    if len(layout) != grid.dim:
        raise ConfigurationError(f"layout {layout} does not match dim {grid.dim}")
    if any(m < 1 for m in layout):
        raise ConfigurationError(f"layout parts must be >= 1, got {layout}")
    if any(m > 1 for m in layout) and overlap < 2:
        raise ConfigurationError(f"overlap must be >= 2, got {overlap}")

    axis_boxes: list[list[tuple[int, int]]] = []
    axis_cuts: list[list[int]] = []
    for k, parts in enumerate(layout):
        n = grid.counts[k]
        if parts == 1:
            axis_boxes.append([(0, n - 1)])
            axis_cuts.append([])
        else:
            boxes, cuts = _extend_axis(_partition_axis(n, parts), overlap, n, k)
            axis_boxes.append(boxes)
            axis_cuts.append(cuts)

    # ownership ranges per axis from the midline cuts
    axis_owned: list[list[tuple[int, int]]] = []
    for k, parts in enumerate(layout):
        bounds = [-1] + axis_cuts[k] + [grid.counts[k] - 1]
        axis_owned.append([(bounds[p] + 1, bounds[p + 1]) for p in range(parts)])

    positions = list(itertools.product(*[range(m) for m in layout]))
    ids = {pos: i for i, pos in enumerate(positions)}

    subdomains = []
    for i, pos in enumerate(positions):
        box = tuple(axis_boxes[k][pos[k]] for k in range(grid.dim))
        owned = tuple(axis_owned[k][pos[k]] for k in range(grid.dim))
        faces = []
        neighbors: dict[tuple[int, int], int] = {}
        for k in range(grid.dim):
            lo_kind = PHYSICAL if pos[k] == 0 else INTERFACE
            hi_kind = PHYSICAL if pos[k] == layout[k] - 1 else INTERFACE
            faces.append((lo_kind, hi_kind))
            if lo_kind == INTERFACE:
                npos = pos[:k] + (pos[k] - 1,) + pos[k + 1:]
                neighbors[(k, 0)] = ids[npos]
            if hi_kind == INTERFACE:
                npos = pos[:k] + (pos[k] + 1,) + pos[k + 1:]
                neighbors[(k, 1)] = ids[npos]
        subdomains.append(Subdomain(id=i, pos=pos, box=box,
                                    faces=tuple(faces), neighbors=neighbors,
                                    owned=owned))

    dec = Decomposition(grid=grid, layout=layout, overlap=overlap,
                        subdomains=tuple(subdomains))
    _check_decomposition(dec)
    return dec


def _check_decomposition(dec: Decomposition) -> None:
    """Invariants: full coverage, exact overlap widths, interior trace lines."""
    cover = np.zeros(dec.grid.counts, dtype=int)
    owned_cover = np.zeros(dec.grid.counts, dtype=int)
    for sub in dec.subdomains:
        cover[sub.slices()] += 1
        owned_cover[sub.owned_global_slices()] += 1
    if (cover < 1).any():
        raise ConfigurationError("decomposition does not cover the grid")
    if (owned_cover != 1).any():
        raise ConfigurationError("node ownership is not a partition")
    for sub in dec.subdomains:
        for (axis, side), nid in sub.neighbors.items():
            line = sub.box[axis][side]
            nlo, nhi = dec.subdomains[nid].box[axis]
            if not (nlo < line < nhi):
                raise ConfigurationError(
                    f"trace line {line} of subdomain {sub.id} is not interior "
                    f"to donor {nid} (axis {axis})")


@dataclass(frozen=True)
class BoxGeometry:
    """Geometry a finite-difference operator needs about one index box:
    node coordinates, spacings, face kinds, and the measure of the *global*
    computational box (the equidistribution constraint is global, so
    subdomain operators keep the global measure)."""

    axes: tuple[np.ndarray, ...]
    spacing: tuple[float, ...]
    faces: tuple[tuple[str, str], ...]
    domain_measure: float

    @property
    def dim(self) -> int:
        return len(self.axes)

    def shape(self) -> tuple[int, ...]:
        return tuple(len(ax) for ax in self.axes)

    def dirichlet_mask(self) -> np.ndarray:
        """True at nodes held fixed during a window (interface-face nodes)."""
        mask = np.zeros(self.shape(), dtype=bool)
        for k, (lo_kind, hi_kind) in enumerate(self.faces):
            if lo_kind == INTERFACE:
                mask[_face_slice(self.dim, k, 0)] = True
            if hi_kind == INTERFACE:
                mask[_face_slice(self.dim, k, -1)] = True
        return mask


def _face_slice(dim: int, axis: int, index: int) -> tuple:
    sl: list = [slice(None)] * dim
    sl[axis] = index
    return tuple(sl)


def grid_geometry(grid: CompGrid) -> BoxGeometry:
    """Geometry of the whole grid (all faces physical)."""
    return BoxGeometry(axes=grid.axes(), spacing=grid.spacing,
                       faces=tuple((PHYSICAL, PHYSICAL) for _ in range(grid.dim)),
                       domain_measure=grid.measure)


def subdomain_geometry(grid: CompGrid, sub: Subdomain) -> BoxGeometry:
    axes = tuple(ax[lo:hi + 1] for ax, (lo, hi) in zip(grid.axes(), sub.box))
    return BoxGeometry(axes=axes, spacing=grid.spacing, faces=sub.faces,
                       domain_measure=grid.measure)
