#!/usr/bin/env python3
"""Render the four partition schemes over the default patch grid.

Writes one PGM label image per scheme into ./demo_output/partitions.
Column and row schemes slice the 19x24 grid into strips, the rectangle
baseline tiles it, and the learned scheme clusters patch descriptors
from a small synthetic training set.
"""

from pathlib import Path


from hfmatch.descriptors import describe_image
from hfmatch.imagegrid import build_grid, load_image
from hfmatch.partition import (
    column_partition,
    learned_partition,
    rectangle_partition,
    row_partition,
    save_scheme_image,
)
from hfmatch.synthdata import SynthSpec, generate

out = Path(__file__).parent / "demo_output" / "partitions"
out.mkdir(parents=True, exist_ok=True)

grid = build_grid(100, 125, patch_size=10, overlap_ratio=0.5)
print(f"grid: {grid.cols} cols x {grid.rows} rows = {grid.n_patches} patches")

schemes = {
    "column": column_partition(grid, 4),
    "row": row_partition(grid, 5),
    "rectangle": rectangle_partition(grid),
}

# The learned scheme needs real descriptors, so synthesize a handful of
# full-size faces and cluster their per-patch descriptor stacks.
manifest = generate(SynthSpec(subjects=6, seed=1), out / "data")
banks = []
for entry in manifest.select("representation"):
    image = load_image(entry.path)
    banks.append(describe_image(image, grid, kind="hog"))
schemes["learned"] = learned_partition(banks, k_l=9, seed=0)

for name, scheme in schemes.items():
    sizes = sorted(len(r) for r in scheme.regions)
    print(f"{name:10s} {scheme.n_regions} regions, sizes {sizes}")
    save_scheme_image(out / f"{name}.pgm", scheme, grid)

print(f"wrote label images into {out}")
