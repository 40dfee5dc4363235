"""How boundary erosion changes what overall accuracy measures.

A classifier that is wrong only along class borders looks mediocre under
plain OA. Excluding pixels near borders removes the ambiguous region and
the same predictions score near perfect.

Run: python demos/03_erosion.py
"""
import numpy as np

from terracer.evaluation import ConfusionMatrix, erode_reference

size = 96
yy, xx = np.mgrid[:size, :size]
reference = ((xx // 32) + 3 * (yy // 32)).astype(np.int64) % 4

# Shift the map one pixel down and right: errors appear only along class edges.
prediction = reference.copy()
prediction[1:, 1:] = reference[:-1, :-1]

for radius in (0, 20, 40, 100, 200):
    excluded = erode_reference(reference, radius_m=radius, resolution_m=20)
    keep = ~excluded
    cm = ConfusionMatrix.from_maps(reference[keep], prediction[keep], num_classes=4)
    print(f"radius {radius:3d} m: excluded {excluded.mean():6.1%}  OA {cm.oa():.4f}")

# At 300 m cells a 200 m radius reaches only the four edge-sharing neighbours.
coarse = np.zeros((5, 5), np.int64)
coarse[2, 2] = 1
print(erode_reference(coarse, radius_m=200, resolution_m=300).astype(int))
