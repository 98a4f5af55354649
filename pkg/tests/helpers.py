"""Shared small-model fixtures for gradient and model tests."""

import numpy as np

from wavephase import model as M, spectral
from wavephase.numkernel import grad_check

SMALL = dict(T=12, d=8, n_layers=2, n_heads=2, r=4, w=6, stride=3, eps=1e-4)


def small_setup(seed=1):
    """Random-ish parameters (nonzero alpha, perturbed norms) and a frozen band.

    The band is a fixed half-width-2 prefix: the perturbed embeddings have a
    nearly flat spectrum, so a selected band would be the full one and the
    spectral term would vanish to roundoff.
    """
    cfg = M.ModelConfig(**SMALL)
    rng = np.random.default_rng(seed)
    p = M.init_params(cfg, seed + 2)
    for k in p:
        if k.endswith("alpha"):
            p[k] = np.array(0.3)
        else:
            p[k] = p[k] + 0.1 * rng.standard_normal(p[k].shape)
    toks = rng.integers(0, 256, (2, cfg.T))
    tg = rng.integers(0, 256, (2, cfg.T))
    band = spectral.Band(spectral.prefix_band(cfg.T, 2), cfg.T, 2)
    frozen = M.with_overrides(cfg, band_mode="frozen")
    return frozen, p, toks, tg, band


def model_grad_errors(cfg, p, toks, tg, band, weights, include_task=True,
                      max_coords=48, abs_floor=1e-8, seed=0):
    """Worst finite-difference error per parameter, on a coordinate subsample."""
    rng = np.random.default_rng(seed)
    _, _, grads, _ = M.loss_and_grads(toks, tg, p, cfg, weights, band=band, include_task=include_task)
    used = np.unique(toks)
    out = {}
    for k, v in p.items():
        flat = v.reshape(-1)
        if k == "tok_emb":
            pool = (used[:, None] * v.shape[1] + np.arange(v.shape[1])).reshape(-1)
        else:
            pool = np.arange(flat.size)
        idx = pool if pool.size <= max_coords else rng.choice(pool, max_coords, replace=False)

        def f(sub, k=k, idx=idx):
            q = dict(p)
            arr = p[k].copy().reshape(-1)
            arr[idx] = sub
            q[k] = arr.reshape(p[k].shape)
            logits, st = M.forward(toks, q, cfg, band=band)
            return M.total_loss(logits, tg, st, weights, cfg.eps, include_task)[0]

        out[k] = grad_check(f, grads[k].reshape(-1)[idx], flat[idx].copy(), abs_floor=abs_floor).max_rel_err
    return out
