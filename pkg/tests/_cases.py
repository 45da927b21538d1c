"""Random problem instances shared by the tests."""

import numpy as np

from dpnmrf import PairwiseConfig, VolumeShape, build_temporal_links


def random_instance(rng, T=None, H=None, W=None, L=None, K=None, flow=True,
                    windows=None, w1_max=1e-3):
    T = int(rng.integers(1, 4)) if T is None else T
    H = int(rng.integers(3, 17)) if H is None else H
    W = int(rng.integers(3, 17)) if W is None else W
    L = int(rng.integers(2, 6)) if L is None else L
    K = int(rng.integers(1, 4)) if K is None else K
    if windows is None:
        m, n = (int(rng.choice([1, 3, 5])) for _ in range(2))
        t_m, t_n = (int(rng.choice([1, 3])) for _ in range(2))
    else:
        m, t_m, n, t_n = windows
    p = rng.dirichlet(np.ones(L), size=(T, H, W))
    img = rng.integers(0, 256, (T, H, W, 3)).astype(np.uint8)
    links = None
    if flow and T > 1:
        links = build_temporal_links(rng.normal(0, 2, (T - 1, H, W, 2)), VolumeShape(T, H, W))
    cfg = PairwiseConfig(
        contexts=rng.normal(0, 0.5, (K, L, t_n * n * n, L)),
        w1=float(rng.uniform(0, w1_max)), w2=float(rng.uniform(0, 0.1)),
        m=m, t_m=t_m, n=n, t_n=t_n,
        lin_a=float(rng.uniform(0.5, 1.5)), lin_b=float(rng.normal(0, 0.1)))
    return p, img, cfg, links
