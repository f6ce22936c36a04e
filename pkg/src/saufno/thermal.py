"""Steady-state heat conduction in layered 3D-IC stacks.

A cell-centred finite-volume discretisation of ``div(k grad T) + Q_g = 0`` on a
tensor-product grid. The die footprint is meshed uniformly at the requested
lateral resolution; wider layers (heat spreader, heat-sink base) extend the
grid with a few coarse margin cells. Cells outside a layer's lateral extent are
simply absent from the system. The top of the stack is cooled by a Robin
condition, all other exposed faces are adiabatic unless configured otherwise.

The linear system is solved for the rise above ambient with Jacobi-
preconditioned conjugate gradients.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import EmptyBlockList, GeometryError, ShapeError, SolverDidNotConverge, UnknownChip

MM = 1e-3


@dataclass(frozen=True)
class MaterialProps:
    k: float  # W/(m K)
    c_vol: float  # J/(m^3 K), unused at steady state

    def __post_init__(self):
        if self.k <= 0 or self.c_vol <= 0:
            raise GeometryError(f"material needs k > 0 and c_vol > 0, got {self}")


@dataclass(frozen=True)
class Block:
    """Axis-aligned rectangle, metres, relative to the die's lower-left corner."""

    name: str
    x: float
    y: float
    w: float
    h: float
    powered: bool = True


@dataclass(frozen=True)
class LayerSpec:
    name: str
    thickness: float  # m
    extent: tuple  # (x, y) lateral size in m, centred on the die
    material: MaterialProps
    blocks: tuple = ()
    device: bool = False
    nz: int = 1

    def __post_init__(self):
        if self.thickness <= 0:
            raise GeometryError(f"layer {self.name}: thickness must be > 0")
        if self.nz < 1:
            raise GeometryError(f"layer {self.name}: needs at least one vertical cell")
        ex, ey = self.extent
        tol = 1e-12
        for b in self.blocks:
            if b.w <= 0 or b.h <= 0 or b.x < -tol or b.y < -tol or b.x + b.w > ex + tol or b.y + b.h > ey + tol:
                raise GeometryError(f"block {b.name} lies outside layer {self.name}")


@dataclass(frozen=True)
class BoundarySpec:
    t_a: float = 298.15
    eta: float = 1.0e4  # top-surface heat-transfer coefficient, W/(m^2 K)
    other: str = "adiabatic"  # sides and bottom: "adiabatic" or "robin"
    eta_other: float = 0.0

    def __post_init__(self):
        if self.eta <= 0 or self.t_a <= 0:
            raise GeometryError("boundary needs eta > 0 and t_a > 0")
        if self.other not in ("adiabatic", "robin"):
            raise GeometryError(f"unknown side/bottom condition {self.other!r}")
        if self.other == "robin" and self.eta_other <= 0:
            raise GeometryError("robin sides need eta_other > 0")


@dataclass(frozen=True)
class ChipStack:
    """Layers ordered bottom -> top; the last layer's top face is Robin-cooled."""

    chip_id: str
    layers: tuple
    boundary: BoundarySpec
    resolution: tuple  # (H, W) lateral cells over the die footprint
    tsv_fractions: tuple = ()  # areal TSV fraction, one per device layer
    tsv_material: MaterialProps | None = None
    margin_cells: int = 3
    p_total_range: tuple = (10.0, 60.0)

    def __post_init__(self):
        if not any(l.device for l in self.layers):
            raise GeometryError("stack needs at least one device layer")
        H, W = self.resolution
        if H < 8 or W < 8:
            raise GeometryError(f"grid resolution must be >= 8x8, got {H}x{W}")
        if self.tsv_fractions and len(self.tsv_fractions) != len(self.device_layers):
            raise GeometryError("tsv_fractions needs one entry per device layer")
        die = self.die_extent
        for l in self.layers:
            if l.extent[0] < die[0] - 1e-12 or l.extent[1] < die[1] - 1e-12:
                raise GeometryError(f"layer {l.name} is narrower than the die")

    @property
    def device_layers(self):
        return [l for l in self.layers if l.device]

    @property
    def die_extent(self):
        return self.device_layers[0].extent

    @property
    def H(self):
        return self.resolution[0]

    @property
    def W(self):
        return self.resolution[1]

    def with_resolution(self, resolution) -> "ChipStack":
        if isinstance(resolution, int):
            resolution = (resolution, resolution)
        return replace(self, resolution=tuple(resolution))


@dataclass
class PowerMap:
    """Volumetric heat generation per device layer, [D, H, W] in W/m^3."""

    q: np.ndarray
    block_powers: dict = field(default_factory=dict)  # layer name -> {block: W}

    def scaled(self, alpha: float) -> "PowerMap":
        return PowerMap(self.q * alpha, {l: {b: p * alpha for b, p in d.items()} for l, d in self.block_powers.items()})


@dataclass
class TemperatureField:
    """Device-layer mid-plane temperatures [D, H, W] in K, plus stack extremes."""

    layers: np.ndarray
    t_max: float
    t_min: float
    volume: np.ndarray | None = None  # [NZ, NY, NX], NaN where no material
    iterations: int = 0
    residual: float = 0.0


# -- presets --------------------------------------------------------------

SILICON = MaterialProps(100.0, 1.75e6)
TIM_MAT = MaterialProps(4.0, 4.0e6)
COPPER = MaterialProps(400.0, 3.55e6)
TSV_FILL = MaterialProps(100.0, 1.75e6)
TSV_DIAMETER = 0.01 * MM
TSV_PITCH = 0.01 * MM


def _blocks(rects):
    return tuple(Block(n, x * MM, y * MM, w * MM, h * MM) for n, x, y, w, h in rects)


def _chip1_layers():
    die = (16 * MM, 16 * MM)
    l2 = _blocks([("L2_0", 0, 0, 16, 6), ("L2_1", 0, 6, 8, 10), ("L2_2", 8, 6, 8, 10)])
    core = _blocks([
        ("L1I", 0, 0, 4, 6), ("L1D", 12, 0, 4, 6),
        ("IntExec", 4, 0, 4, 3), ("FPU", 8, 0, 4, 3),
        ("IntReg", 4, 3, 2, 3), ("IntQ", 6, 3, 2, 3), ("LdStQ", 8, 3, 2, 3), ("Bpred", 10, 3, 2, 3),
        ("L2", 0, 6, 16, 10),
    ])
    return die, [("l2_layer", l2), ("core_layer", core)], 0.15 * MM, 0.02 * MM


def _chip2_layers():
    w, h = 12.4, 12.76
    die = (w * MM, h * MM)
    l2 = _blocks([("L2_a", 0, 0, w, h / 2), ("L2_b", 0, h / 2, w, h / 2)])
    cores = []
    for k, (cx, cy) in enumerate([(0, 0), (w / 2, 0), (0, h / 2), (w / 2, h / 2)]):
        cores.append((f"core{k}", cx, cy, w / 2, h / 2 - 2.0))
        cores.append((f"L1_{k}", cx, cy + h / 2 - 2.0, w / 2, 2.0))
    return die, [("l2_layer_0", l2), ("l2_layer_1", l2), ("core_layer", _blocks(cores))], 0.15 * MM, 0.02 * MM


def _chip3_layers():
    die = (10 * MM, 10 * MM)
    l2 = _blocks([("L2_0", 0, 0, 5, 5), ("L2_1", 5, 0, 5, 5), ("L2_2", 0, 5, 5, 5), ("L2_3", 5, 5, 5, 5)])
    cores = []
    for k in range(8):
        cx, cy = 2.5 * (k % 4), 5.0 * (k // 4)
        cores.append((f"core{k}", cx, cy, 2.5, 3.5))
        cores.append((f"L1_{k}", cx, cy + 3.5, 2.5, 1.5))
    return die, [("l2_layer", l2), ("core_layer", _blocks(cores))], 0.1 * MM, 0.052 * MM


_PRESETS = {
    "chip1": (_chip1_layers, (10.0, 60.0)),
    "chip2": (_chip2_layers, (10.0, 60.0)),
    "chip3": (_chip3_layers, (10.0, 60.0)),
}

DEFAULT_NZ = {"device": 5, "tim": 2, "spreader": 4, "sink": 6}
DEFAULT_MARGIN_CELLS = 6


def tsv_area_fraction(diameter=TSV_DIAMETER, pitch=TSV_PITCH) -> float:
    return float(np.pi * diameter ** 2 / 4.0 / pitch ** 2)


def build_stack(chip_id: str, resolution=32, boundary: BoundarySpec | None = None, nz: dict | None = None,
                margin_cells: int = DEFAULT_MARGIN_CELLS) -> ChipStack:
    """Preset stacks: device layers, TIM, heat spreader, heat-sink base (bottom -> top)."""
    if chip_id not in _PRESETS:
        raise UnknownChip(f"unknown chip id {chip_id!r}; expected one of {sorted(_PRESETS)}")
    if isinstance(resolution, int):
        resolution = (resolution, resolution)
    nzs = dict(DEFAULT_NZ, **(nz or {}))
    factory, p_range = _PRESETS[chip_id]
    die, device, t_dev, t_tim = factory()
    layers = [LayerSpec(name, t_dev, die, SILICON, blocks, device=True, nz=nzs["device"]) for name, blocks in device]
    layers.append(LayerSpec("tim", t_tim, die, TIM_MAT, nz=nzs["tim"]))
    layers.append(LayerSpec("heat_spreader", 1.0 * MM, (30 * MM, 30 * MM), COPPER, nz=nzs["spreader"]))
    layers.append(LayerSpec("heat_sink_base", 6.9 * MM, (60 * MM, 60 * MM), COPPER, nz=nzs["sink"]))
    f = tsv_area_fraction()
    return ChipStack(chip_id, tuple(layers), boundary or BoundarySpec(), tuple(resolution),
                     tsv_fractions=tuple(f for _ in device), tsv_material=TSV_FILL,
                     margin_cells=margin_cells, p_total_range=p_range)


def slab_stack(k: float, thickness: float, nz: int, eta: float, t_a: float, resolution=(8, 8),
               extent=(1 * MM, 1 * MM)) -> ChipStack:
    """Single uniformly heated layer, adiabatic except for a Robin-cooled top."""
    block = Block("slab", 0.0, 0.0, extent[0], extent[1])
    layer = LayerSpec("slab", thickness, tuple(extent), MaterialProps(k, 1.0e6), (block,), device=True, nz=nz)
    return ChipStack("slab", (layer,), BoundarySpec(t_a=t_a, eta=eta), tuple(resolution))


# -- JSON geometry ----------------------------------------------------------

def stack_to_dict(stack: ChipStack) -> dict:
    return asdict(stack)


def stack_from_dict(d: dict) -> ChipStack:
    layers = []
    for l in d["layers"]:
        blocks = tuple(Block(**b) for b in l.get("blocks", ()))
        layers.append(LayerSpec(l["name"], l["thickness"], tuple(l["extent"]), MaterialProps(**l["material"]),
                                blocks, bool(l.get("device", False)), int(l.get("nz", 1))))
    tsv = d.get("tsv_material")
    return ChipStack(d["chip_id"], tuple(layers), BoundarySpec(**d.get("boundary", {})), tuple(d["resolution"]),
                     tuple(d.get("tsv_fractions", ())), MaterialProps(**tsv) if tsv else None,
                     int(d.get("margin_cells", 3)), tuple(d.get("p_total_range", (10.0, 60.0))))


def save_stack_json(stack: ChipStack, path) -> None:
    Path(path).write_text(json.dumps(stack_to_dict(stack), indent=2))


def load_stack_json(path) -> ChipStack:
    return stack_from_dict(json.loads(Path(path).read_text()))


# -- power maps ---------------------------------------------------------------

def _overlap_1d(edges, a, b):
    return np.clip(np.minimum(edges[1:], b) - np.maximum(edges[:-1], a), 0.0, None)


def rasterize_blocks(layer: LayerSpec, powers: dict, resolution) -> np.ndarray:
    """Q_g per cell = sum over blocks of (block power / block volume) x covered fraction."""
    H, W = resolution
    ex, ey = layer.extent
    xe = np.linspace(0.0, ex, W + 1)
    ye = np.linspace(0.0, ey, H + 1)
    cell_area = (ex / W) * (ey / H)
    q = np.zeros((H, W))
    for b in layer.blocks:
        p = powers.get(b.name, 0.0)
        if p == 0.0:
            continue
        frac = np.outer(_overlap_1d(ye, b.y, b.y + b.h), _overlap_1d(xe, b.x, b.x + b.w)) / cell_area
        q += p / (b.w * b.h * layer.thickness) * frac
    return q


def sample_power_map(stack: ChipStack, seed, p_total_range=None) -> PowerMap:
    """Random per-block powers rescaled to a total drawn uniformly from the range."""
    lo, hi = stack.p_total_range if p_total_range is None else p_total_range
    if lo < 0 or hi < lo:
        raise ValueError(f"p_total_range must satisfy 0 <= lo <= hi, got {(lo, hi)}")
    eligible = [(l, b) for l in stack.device_layers for b in l.blocks if b.powered]
    if not eligible:
        raise EmptyBlockList("no power-eligible blocks in the stack")
    rng = np.random.default_rng(seed)
    raw = rng.uniform(0.0, 1.0, size=len(eligible))
    total = rng.uniform(lo, hi) if hi > lo else lo
    raw = raw * (total / raw.sum()) if raw.sum() > 0 else raw
    block_powers = {l.name: {} for l in stack.device_layers}
    for (l, b), p in zip(eligible, raw):
        block_powers[l.name][b.name] = float(p)
    q = np.stack([rasterize_blocks(l, block_powers[l.name], stack.resolution) for l in stack.device_layers])
    return PowerMap(q, block_powers)


def total_power(stack: ChipStack, pmap: PowerMap) -> float:
    H, W = stack.resolution
    ex, ey = stack.die_extent
    vols = np.array([l.thickness for l in stack.device_layers]) * (ex / W) * (ey / H)
    return float((pmap.q.sum(axis=(1, 2)) * vols).sum())


# -- discretisation ---------------------------------------------------------------

@dataclass
class Grid:
    x_edges: np.ndarray
    y_edges: np.ndarray
    z_edges: np.ndarray
    plane_layer: np.ndarray  # layer index of each z plane
    index: np.ndarray  # [NZ, NY, NX] -> unknown number, -1 where inactive
    die_slice: tuple  # (slice over y, slice over x)
    kx: np.ndarray  # lateral conductivity per plane
    kz: np.ndarray  # vertical conductivity per plane

    @property
    def n_cells(self):
        return int((self.index >= 0).sum())

    @property
    def dx(self):
        return np.diff(self.x_edges)

    @property
    def dy(self):
        return np.diff(self.y_edges)

    @property
    def dz(self):
        return np.diff(self.z_edges)

    @property
    def z_centers(self):
        return 0.5 * (self.z_edges[1:] + self.z_edges[:-1])


def _axis_edges(die: float, n: int, extents, margin: int):
    half = die / 2.0
    core = np.linspace(-half, half, n + 1)
    outer = sorted({e / 2.0 for e in extents if e / 2.0 > half * (1 + 1e-12)})
    right, prev = [], half
    for stop in outer:
        right.extend(np.linspace(prev, stop, margin + 1)[1:])
        prev = stop
    right = np.array(right)
    return np.concatenate([-right[::-1], core, right]), len(right)


def build_grid(stack: ChipStack) -> Grid:
    H, W = stack.resolution
    die_x, die_y = stack.die_extent
    xe, mx = _axis_edges(die_x, W, [l.extent[0] for l in stack.layers], stack.margin_cells)
    ye, my = _axis_edges(die_y, H, [l.extent[1] for l in stack.layers], stack.margin_cells)
    for e in (xe, ye):
        if np.any(np.diff(e) <= 0):
            raise GeometryError("degenerate lateral cell dimensions")

    z_edges, plane_layer = [0.0], []
    for li, l in enumerate(stack.layers):
        z_edges.extend(z_edges[-1] + l.thickness * np.arange(1, l.nz + 1) / l.nz)
        plane_layer.extend([li] * l.nz)
    z_edges = np.array(z_edges)
    plane_layer = np.array(plane_layer)

    xc = 0.5 * (xe[1:] + xe[:-1])
    yc = 0.5 * (ye[1:] + ye[:-1])
    active = np.zeros((len(plane_layer), len(yc), len(xc)), dtype=bool)
    kx = np.empty(len(plane_layer))
    kz = np.empty(len(plane_layer))
    dev_idx = {id(l): i for i, l in enumerate(stack.device_layers)}
    for z, li in enumerate(plane_layer):
        l = stack.layers[li]
        active[z] = (np.abs(yc)[:, None] < l.extent[1] / 2) & (np.abs(xc)[None, :] < l.extent[0] / 2)
        kx[z] = l.material.k
        kz[z] = l.material.k
        if l.device and stack.tsv_fractions and stack.tsv_material is not None:
            f = stack.tsv_fractions[dev_idx[id(l)]]
            kz[z] = (1.0 - f) * l.material.k + f * stack.tsv_material.k
    index = np.full(active.shape, -1, dtype=np.int64)
    index[active] = np.arange(active.sum())
    die_slice = (slice(my, my + H), slice(mx, mx + W))
    return Grid(xe, ye, z_edges, plane_layer, index, die_slice, kx, kz)


def _pair_conductance(d1, k1, d2, k2, area):
    return area / (0.5 * d1 / k1 + 0.5 * d2 / k2)


def assemble(stack: ChipStack, pmap: PowerMap | None, grid: Grid | None = None):
    """Return (A, source, boundary_g, grid).

    ``A`` holds conductances (W/K) including the Robin terms on its diagonal,
    ``source`` the cell heat input Q_g dV (W), ``boundary_g`` the Robin
    conductance to ambient of every cell (W/K), so ``b = source + boundary_g * t_a``.
    A Robin face conducts through the half cell in series with the film, so the
    unknowns stay cell-centred temperatures.
    """
    grid = grid or build_grid(stack)
    if pmap is not None and pmap.q.shape[1:] != tuple(stack.resolution):
        raise ShapeError(f"power map is {pmap.q.shape[1:]}, stack grid is {stack.resolution}")
    dx, dy, dz = grid.dx, grid.dy, grid.dz
    idx = grid.index
    NZ = idx.shape[0]
    n = grid.n_cells
    bc = stack.boundary
    rows, cols, vals = [], [], []
    diag = np.zeros(n)
    bnd = np.zeros(n)

    def couple(a, b, g):
        m = (a >= 0) & (b >= 0)
        a, b, g = a[m], b[m], g[m]
        rows.extend([a, b])
        cols.extend([b, a])
        vals.extend([-g, -g])
        np.add.at(diag, a, g)
        np.add.at(diag, b, g)

    def robin(cells, g):
        m = cells >= 0
        np.add.at(bnd, cells[m], g[m])

    for z in range(NZ):
        k, kv = grid.kx[z], grid.kz[z]
        plane = idx[z]
        # x faces
        area = (dy[:, None] * dz[z]) * np.ones((1, len(dx) - 1))
        g = _pair_conductance(dx[None, :-1], k, dx[None, 1:], k, area)
        couple(plane[:, :-1], plane[:, 1:], g)
        # y faces
        area = (dx[None, :] * dz[z]) * np.ones((len(dy) - 1, 1))
        g = _pair_conductance(dy[:-1, None], k, dy[1:, None], k, area)
        couple(plane[:-1, :], plane[1:, :], g)
        # z faces
        if z + 1 < NZ:
            area = np.outer(dy, dx)
            g = _pair_conductance(dz[z], kv, dz[z + 1], grid.kz[z + 1], area)
            couple(plane, idx[z + 1], np.broadcast_to(g, plane.shape))

    top = idx[NZ - 1]
    area = np.outer(dy, dx)
    robin(top, area / (1.0 / bc.eta + 0.5 * dz[NZ - 1] / grid.kz[NZ - 1]))

    if bc.other == "robin":
        _exposed_faces(grid, bc.eta_other, robin)

    source = np.zeros(n)
    if pmap is not None:
        ys, xs = grid.die_slice
        dev_layers = [i for i, l in enumerate(stack.layers) if l.device]
        cell_area = np.outer(dy[ys], dx[xs])
        for d, li in enumerate(dev_layers):
            for z in np.flatnonzero(grid.plane_layer == li):
                cells = idx[z, ys, xs]
                source[cells.ravel()] += (pmap.q[d] * cell_area * dz[z]).ravel()

    diag += bnd
    rows.append(np.arange(n))
    cols.append(np.arange(n))
    vals.append(diag)
    A = sp.coo_matrix((np.concatenate([np.ravel(v) for v in vals]),
                       (np.concatenate([np.ravel(r) for r in rows]), np.concatenate([np.ravel(c) for c in cols]))),
                      shape=(n, n)).tocsr()
    A.sum_duplicates()
    return A, source, bnd, grid


def _exposed_faces(grid: Grid, eta: float, robin) -> None:
    """Robin terms on every exposed face except the stack top (already handled)."""
    idx = grid.index
    NZ = idx.shape[0]
    dx, dy, dz = grid.dx, grid.dy, grid.dz
    pad = np.pad(idx, 1, constant_values=-1)
    for z in range(NZ):
        plane = idx[z]
        kx, kz = grid.kx[z], grid.kz[z]
        inner = pad[z + 1, 1:-1, 1:-1]
        for nb, area, half in (
            (pad[z + 1, 1:-1, :-2], dy[:, None] * dz[z] * np.ones_like(dx)[None, :], 0.5 * dx[None, :] / kx),
            (pad[z + 1, 1:-1, 2:], dy[:, None] * dz[z] * np.ones_like(dx)[None, :], 0.5 * dx[None, :] / kx),
            (pad[z + 1, :-2, 1:-1], dx[None, :] * dz[z] * np.ones_like(dy)[:, None], 0.5 * dy[:, None] / kx),
            (pad[z + 1, 2:, 1:-1], dx[None, :] * dz[z] * np.ones_like(dy)[:, None], 0.5 * dy[:, None] / kx),
            (pad[z, 1:-1, 1:-1], np.outer(dy, dx), np.full(plane.shape, 0.5 * dz[z] / kz)),
        ):
            exposed = (inner >= 0) & (nb < 0)
            g = np.where(exposed, area / (1.0 / eta + half), 0.0)
            robin(np.where(exposed, inner, -1), g)
        if z + 1 < NZ:
            exposed = (plane >= 0) & (idx[z + 1] < 0)
            g = np.where(exposed, np.outer(dy, dx) / (1.0 / eta + 0.5 * dz[z] / kz), 0.0)
            robin(np.where(exposed, plane, -1), g)


def assemble_system(stack: ChipStack, pmap: PowerMap):
    """Sparse SPD conductance matrix A and right-hand side b (W) with A T = b."""
    A, source, bnd, _ = assemble(stack, pmap)
    return A, source + bnd * stack.boundary.t_a


def default_max_iter(n_cells: int) -> int:
    return int(20 * np.sqrt(n_cells))


def pcg(A, b, tol=1e-8, max_iter=None, x0=None):
    """Jacobi-preconditioned conjugate gradients. Returns (x, iterations, rel_residual)."""
    n = b.shape[0]
    max_iter = default_max_iter(n) if max_iter is None else max_iter
    bnorm = np.linalg.norm(b)
    x = np.zeros(n) if x0 is None else x0.astype(float).copy()
    if bnorm == 0.0:
        return x, 0, 0.0
    dinv = 1.0 / A.diagonal()
    r = b - A @ x
    z = dinv * r
    p = z.copy()
    rz = r @ z
    res = np.linalg.norm(r) / bnorm
    it = 0
    while it < max_iter and res > tol:
        it += 1
        Ap = A @ p
        alpha = rz / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        res = np.linalg.norm(r) / bnorm
        if res <= tol:
            # guard against drift of the recursive residual
            r = b - A @ x
            res = np.linalg.norm(r) / bnorm
            if res <= tol:
                break
        z = dinv * r
        rz_new = r @ z
        p *= rz_new / rz
        p += z
        rz = rz_new
    if res > tol:
        raise SolverDidNotConverge(f"CG stopped after {it} iterations at relative residual {res:.3e}",
                                   residual=res, iterations=it)
    return x, it, res


def _mid_plane(volume, grid: Grid, layer_index: int):
    planes = np.flatnonzero(grid.plane_layer == layer_index)
    ys, xs = grid.die_slice
    n = len(planes)
    if n % 2:
        return volume[planes[n // 2], ys, xs]
    return 0.5 * (volume[planes[n // 2 - 1], ys, xs] + volume[planes[n // 2], ys, xs])


def solve_steady(stack: ChipStack, pmap: PowerMap, tol: float = 1e-8, max_iter: int | None = None,
                 keep_volume: bool = False) -> TemperatureField:
    A, source, _, grid = assemble(stack, pmap)
    theta, it, res = pcg(A, source, tol=tol, max_iter=max_iter)
    t_a = stack.boundary.t_a
    volume = np.full(grid.index.shape, np.nan)
    active = grid.index >= 0
    volume[active] = t_a + theta[grid.index[active]]
    layers = np.stack([_mid_plane(volume, grid, i) for i, l in enumerate(stack.layers) if l.device])
    return TemperatureField(layers, float(t_a + theta.max()), float(t_a + theta.min()),
                            volume if keep_volume else None, it, res)


def energy_balance(stack: ChipStack, pmap: PowerMap, field: TemperatureField):
    """(generated W, convected W) for a solved field (requires keep_volume=True)."""
    if field.volume is None:
        raise ValueError("energy_balance needs a field solved with keep_volume=True")
    _, source, bnd, grid = assemble(stack, pmap)
    active = grid.index >= 0
    theta = np.empty(grid.n_cells)
    theta[grid.index[active]] = field.volume[active] - stack.boundary.t_a
    return float(source.sum()), float(bnd @ theta)


def analytic_slab(k, L, q_vol, eta, t_a, z):
    """T(z) for a slab insulated at z=0, uniformly heated, Robin-cooled at z=L."""
    z = np.asarray(z, dtype=float)
    return t_a + q_vol * L / eta + q_vol * (L * L - z * z) / (2.0 * k)
