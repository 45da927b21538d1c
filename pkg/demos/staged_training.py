"""Training the smoothness parameters by backprop through one DPN pass.

Stages run in order: the triple penalty (w1, w2 and the linear map), then the
label contexts, then everything jointly.  The color weight w1 multiplies raw
8-bit squared differences, so it gets a far smaller step than the rest.
"""

import numpy as np

from dpnmrf import PairwiseConfig, context_bank, synth_scene
from dpnmrf.train import train_schedule

data = []
for s in range(3):
    sc = synth_scene(s, (1, 24, 24), 3, 0.45)
    data.append((sc.unary, sc.image, None, sc.labels))

cfg0 = PairwiseConfig(contexts=context_bank(2, 3, 1, 3, "smoothing", 0.05), w1=0.0, w2=0.01,
                      m=5, t_m=1, n=3, t_n=1)
cfg, hist = train_schedule(data, cfg0, learning_rate=0.2, iterations=15,
                           lr_scales={"w1": 1e-8, "w2": 1e-3})
for stage, losses in hist.items():
    print(f"{stage:>15}: loss {losses[0]:.4f} -> {losses[-1]:.4f}")
print(f"w2 {cfg0.w2} -> {cfg.w2:.4f}, lin_a {cfg.lin_a:.3f}, lin_b {cfg.lin_b:+.4f}")
print("learned same-label tap, component 0:", np.round(np.diag(cfg.contexts[0, :, 0, :]), 3))
