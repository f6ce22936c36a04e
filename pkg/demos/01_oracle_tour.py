"""A walk through the finite-volume oracle.

Builds the chip1 stack, draws one random floorplan power map, solves it and
prints where the heat goes. Then checks the solver against the closed-form
slab and writes heatmaps of both device layers.

    python demos/01_oracle_tour.py [outdir]
"""
import sys
import time
from pathlib import Path

import numpy as np

from saufno.heatmap import render_heatmap
from saufno.thermal import (PowerMap, analytic_slab, build_grid, build_stack, energy_balance, sample_power_map,
                            slab_stack, solve_steady, total_power)

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(exist_ok=True)

stack = build_stack("chip1", 32)
print("layers (bottom -> top):")
for layer in stack.layers:
    print(f"  {layer.name:15s} {layer.thickness * 1e3:6.3f} mm  k={layer.material.k:g}  nz={layer.nz}")

pmap = sample_power_map(stack, seed=42)
for name, blocks in pmap.block_powers.items():
    print(name, {b: round(p, 2) for b, p in blocks.items()})
print(f"total power {total_power(stack, pmap):.2f} W")

t0 = time.perf_counter()
field = solve_steady(stack, pmap, keep_volume=True)
print(f"solved in {time.perf_counter() - t0:.2f} s, {field.iterations} CG iterations, residual {field.residual:.1e}")
print(f"junction temperature {field.t_max:.2f} K (ambient {stack.boundary.t_a} K)")
gen, out_w = energy_balance(stack, pmap, field)
print(f"generated {gen:.6f} W, convected {out_w:.6f} W")

for i, layer in enumerate(field.layers):
    render_heatmap(layer, out / f"chip1_layer{i}.ppm", scale=8)
print("heatmaps in", out)

# the slab check: uniform heating, insulated bottom, Robin top
k, L, q, eta, t_a = 100.0, 1e-3, 1e8, 1e4, 300.0
for nz in (16, 32, 64):
    s = slab_stack(k, L, nz, eta, t_a)
    f = solve_steady(s, PowerMap(np.full((1, 8, 8), q)), tol=1e-10, keep_volume=True)
    z = build_grid(s).z_centers
    err = np.abs(f.volume[:, 4, 4] - analytic_slab(k, L, q, eta, t_a, z)).max()
    print(f"slab nz={nz:3d}: max error {err:.2e} K")
