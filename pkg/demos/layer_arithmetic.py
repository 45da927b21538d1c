"""Shapes and operation counts of the four smoothing layers."""

import numpy as np

from dpnmrf import block_min_pool, complexity_report, dilate_kernel, global_conv_3d
from dpnmrf.dpn import leading_digits

L, K = 21, 5
o13 = global_conv_3d(np.zeros((1, 4, 4, L)), np.zeros((K, L, 81, L)), (1, 9))
print(f"b13 maps: {o13.shape[-1]}, after block-min pooling: {block_min_pool(o13, K).shape[-1]}")

for side, rate in [(3, 2), (7, 4)]:
    print(f"{side}x{side} kernel at rate {rate} covers {dilate_kernel(np.ones((side, side)), rate).shape}")

counts = complexity_report((1, 512, 512), L, K, batch=10, m=50, n=9)
for layer, v in counts.items():
    print(f"{layer}: {v:>16,d}  ~{leading_digits(v)}")
