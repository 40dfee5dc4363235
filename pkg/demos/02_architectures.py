"""Tabulate the six presets: parameters, scales, and what the 3D stem saves.

Run: python demos/02_architectures.py
"""
import numpy as np

from terracer.autodiff import Tensor, no_grad
from terracer.models import COUNTERPARTS, PRESETS, build_model, count_parameters, preset

print(f"{'preset':16s} {'bands':>5s} {'params':>12s} {'scales':>6s}  note")
for name in PRESETS:
    cfg = preset(name)
    n = count_parameters(build_model(cfg))
    note = ""
    if name in COUNTERPARTS:
        twin = count_parameters(build_model(preset(COUNTERPARTS[name], input_bands=cfg.input_bands)))
        note = f"{100 * (twin - n) / twin:.1f}% below {COUNTERPARTS[name]} at {cfg.input_bands} bands"
    print(f"{name:16s} {cfg.input_bands:5d} {n:12,d} {cfg.num_scales:6d}  {note}")

# The SegNet variant predicts at every decoder stage; each head is a full label map at its own stride.
segnet = build_model(preset("segnet-13", num_classes=5)).eval()
with no_grad():
    heads = segnet(Tensor(np.zeros((1, 13, 64, 64), np.float32)))
for stride, head in zip(segnet.head_strides, heads):
    print(f"segnet head at stride {stride:2d}: {head.shape}")
