"""Tiny byte-level decoder-only transformer with spectral injection and section losses.

Everything is numpy with explicit backward passes. Hidden states are laid out
``(batch, position, channel)``; the spectral operators act on the position
axis, so ``d x T`` in the analysis modules corresponds to one batch element
transposed.

Per layer::

    h = x + Attn(LN1(x));  h = h + FFN(LN2(h))
    g = C h                      # band-limited global intent
    y = h + alpha * g            # next layer input
    s_i = mean_{t in U_i} y_t @ Ws,   P_i(g) = mean_{t in U_i} g_t @ Ws

``C`` is the causal band projector: row ``t`` reconstructs position ``t``
from the band-limited DFT of positions ``0..t`` zero-padded to the context
length, i.e. the lower triangle of the symmetric projector matrix. The
non-causal projector is available with ``injection="full"``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from . import cohomology, spectral
from .errors import InvalidArgument, TrainingDivergence
from .numkernel import dft_seq, idft_seq

VOCAB = 256


@dataclass(frozen=True)
class ModelConfig:
    vocab: int = VOCAB
    T: int = 128
    d: int = 64
    n_layers: int = 2
    n_heads: int = 4
    ffn_mult: int = 4
    r: int = 16
    w: int = 32
    stride: int = 16
    theta: float = 0.9
    kappa: float | None = None
    eps: float = 1e-6
    band_mode: str = "per_batch"  # per_batch | frozen
    injection: str = "causal"  # causal | full
    weighted_edges: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.vocab != VOCAB:
            raise InvalidArgument("byte-level model requires vocab = 256")
        if self.d % self.n_heads:
            raise InvalidArgument(f"d={self.d} not divisible by n_heads={self.n_heads}")
        if not 1 <= self.w <= self.T:
            raise InvalidArgument(f"window w={self.w} must lie in [1, T={self.T}]")
        if not 1 <= self.stride <= self.w:
            raise InvalidArgument(f"stride={self.stride} must lie in [1, w={self.w}]")
        if self.band_mode not in ("per_batch", "frozen"):
            raise InvalidArgument(f"unknown band_mode {self.band_mode!r}")
        if self.injection not in ("causal", "full"):
            raise InvalidArgument(f"unknown injection {self.injection!r}")
        if not 0 < self.theta <= 1:
            raise InvalidArgument("theta must lie in (0, 1]")
        if not 0 < self.eps < 1.0 / self.T:
            raise InvalidArgument("eps must lie in (0, 1/T)")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class LossWeights:
    lam: float = 0.1
    mu: float = 0.01
    eta: float = 0.05
    lam_layers: tuple | None = None
    eta_layers: tuple | None = None

    def __post_init__(self):
        vals = [self.lam, self.mu, self.eta, *(self.lam_layers or ()), *(self.eta_layers or ())]
        if any(v < 0 for v in vals):
            raise InvalidArgument("loss weights must be nonnegative")

    def layer_lam(self, l):
        return self.lam if self.lam_layers is None else self.lam_layers[l]

    def layer_eta(self, l):
        return self.eta if self.eta_layers is None else self.eta_layers[l]

    def all_zero(self):
        return self.lam == 0 and self.mu == 0 and self.eta == 0 and not any(
            self.lam_layers or ()) and not any(self.eta_layers or ())


# --------------------------------------------------------------------------
# parameters


def init_params(cfg, seed=None):
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    d, f = cfg.d, cfg.ffn_mult * cfg.d

    def normal(*shape, std=0.02):
        return rng.normal(0.0, std, size=shape)

    p = {
        "tok_emb": normal(cfg.vocab, d),
        "pos_emb": normal(cfg.T, d),
    }
    for l in range(cfg.n_layers):
        p[f"l{l}.ln1_g"] = np.ones(d)
        p[f"l{l}.ln1_b"] = np.zeros(d)
        p[f"l{l}.Wqkv"] = normal(d, 3 * d)
        p[f"l{l}.bqkv"] = np.zeros(3 * d)
        p[f"l{l}.Wo"] = normal(d, d, std=0.02 / math.sqrt(2 * cfg.n_layers))
        p[f"l{l}.bo"] = np.zeros(d)
        p[f"l{l}.ln2_g"] = np.ones(d)
        p[f"l{l}.ln2_b"] = np.zeros(d)
        p[f"l{l}.W1"] = normal(d, f)
        p[f"l{l}.b1"] = np.zeros(f)
        p[f"l{l}.W2"] = normal(f, d, std=0.02 / math.sqrt(2 * cfg.n_layers))
        p[f"l{l}.b2"] = np.zeros(d)
        p[f"l{l}.alpha"] = np.zeros(())
        p[f"l{l}.Ws"] = normal(d, cfg.r, std=1.0 / math.sqrt(d))
    p["lnf_g"] = np.ones(d)
    p["lnf_b"] = np.zeros(d)
    p["W_out"] = normal(d, cfg.vocab)
    p["b_out"] = np.zeros(cfg.vocab)
    return p


SPECTRAL_PARAMS = ("alpha", "Ws")


def is_spectral_param(name):
    return name.rsplit(".", 1)[-1] in SPECTRAL_PARAMS


# --------------------------------------------------------------------------
# band operators


@lru_cache(maxsize=64)
def _projector_cached(T, indices):
    band = spectral.Band(np.asarray(indices, dtype=np.int64), T, 0)
    return spectral.band_projector_matrix(band)


def projector_matrix(band):
    B = _projector_cached(band.T, tuple(int(i) for i in band.indices))
    return B


def injection_operator(band, n, causal=True):
    """``n x n`` operator ``C`` with ``g = C @ h`` along positions."""
    B = projector_matrix(band)
    if causal:
        return np.tril(B)[:n, :n].copy()
    if n != band.T:
        raise InvalidArgument("full injection needs the whole context")
    return B.copy()


def spectral_inject(x, band, alpha, causal=False):
    """``x + alpha * B(x)`` for a ``d x T`` tensor (band projection along columns).

    Returns the injected tensor. ``causal=True`` uses the prefix projector.
    """
    x = np.asarray(x, dtype=np.float64)
    C = injection_operator(band, x.shape[-1], causal=causal)
    return x + alpha * (x @ C.T)


def spectral_inject_backward(grad, band, alpha, x, causal=False):
    """Gradients of :func:`spectral_inject` with respect to ``x`` and ``alpha``."""
    C = injection_operator(band, x.shape[-1], causal=causal)
    return grad + alpha * (grad @ C), float(np.sum(grad * (x @ C.T)))


def extract_sections(h, cov, Ws):
    """Sections ``s_i = Ws^T mean_{t in U_i} h[:, t]`` for a ``d x T`` hidden state.

    ``Ws`` is stored ``d x r`` so the result is ``N x r``.
    """
    h = np.asarray(h, dtype=np.float64)
    if h.shape[1] != cov.T or h.shape[0] != Ws.shape[0]:
        raise InvalidArgument(f"hidden shape {h.shape} inconsistent with covering/projector")
    return cov.pool_matrix() @ h.T @ Ws


# --------------------------------------------------------------------------
# primitive layers


def layernorm(x, g, b, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    return xhat * g + b, (xhat, rstd, g)


def layernorm_backward(dy, cache):
    xhat, rstd, g = cache
    dg = np.sum(dy * xhat, axis=tuple(range(dy.ndim - 1)))
    db = np.sum(dy, axis=tuple(range(dy.ndim - 1)))
    dxhat = dy * g
    dx = rstd * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                 - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    return dx, dg, db


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(u):
    inner = _GELU_C * (u + 0.044715 * (u * u * u))
    th = np.tanh(inner)
    return 0.5 * u * (1.0 + th), th


def gelu_backward(du_out, u, th):
    dinner = _GELU_C * (1.0 + 3 * 0.044715 * u * u)
    return du_out * (0.5 * (1.0 + th) + 0.5 * u * (1.0 - th * th) * dinner)


def softmax(z, axis=-1):
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def cross_entropy(logits, targets):
    """Mean next-token cross-entropy (natural log) and its logits gradient."""
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets)
    if logits.shape[:-1] != targets.shape:
        raise InvalidArgument(f"logits {logits.shape} and targets {targets.shape} misaligned")
    if targets.size == 0:
        raise InvalidArgument("empty targets")
    lp = log_softmax(logits)
    picked = np.take_along_axis(lp, targets[..., None], axis=-1)[..., 0]
    n = targets.size
    loss = float(-picked.sum() / n)
    grad = np.exp(lp)
    np.put_along_axis(grad, targets[..., None],
                      np.take_along_axis(grad, targets[..., None], axis=-1) - 1.0, axis=-1)
    return loss, grad / n


def _attention(a, p, pre, n_heads):
    B, n, d = a.shape
    dh = d // n_heads
    qkv = a @ p[pre + "Wqkv"] + p[pre + "bqkv"]
    q, k, v = np.split(qkv, 3, axis=-1)

    def heads(z):
        return z.reshape(B, n, n_heads, dh).transpose(0, 2, 1, 3)

    q, k, v = heads(q), heads(k), heads(v)
    scale = 1.0 / math.sqrt(dh)
    att = (q @ k.transpose(0, 1, 3, 2)) * scale
    mask = np.triu(np.ones((n, n), dtype=bool), k=1)
    att = np.where(mask, -np.inf, att)
    P = softmax(att)
    o = (P @ v).transpose(0, 2, 1, 3).reshape(B, n, d)
    out = o @ p[pre + "Wo"] + p[pre + "bo"]
    return out, (a, q, k, v, P, o, scale)


def _attention_backward(dout, cache, p, pre, grads, n_heads):
    a, q, k, v, P, o, scale = cache
    B, n, d = a.shape
    dh = d // n_heads
    grads[pre + "Wo"] += o.reshape(-1, d).T @ dout.reshape(-1, d)
    grads[pre + "bo"] += dout.reshape(-1, d).sum(axis=0)
    do = (dout @ p[pre + "Wo"].T).reshape(B, n, n_heads, dh).transpose(0, 2, 1, 3)
    dP = do @ v.transpose(0, 1, 3, 2)
    dv = P.transpose(0, 1, 3, 2) @ do
    dS = P * (dP - np.sum(dP * P, axis=-1, keepdims=True)) * scale
    dq = dS @ k
    dk = dS.transpose(0, 1, 3, 2) @ q

    def merge(z):
        return z.transpose(0, 2, 1, 3).reshape(B, n, d)

    dqkv = np.concatenate([merge(dq), merge(dk), merge(dv)], axis=-1)
    grads[pre + "Wqkv"] += a.reshape(-1, d).T @ dqkv.reshape(-1, 3 * d)
    grads[pre + "bqkv"] += dqkv.reshape(-1, 3 * d).sum(axis=0)
    return dqkv @ p[pre + "Wqkv"].T


# --------------------------------------------------------------------------
# forward / backward


class LayerState(NamedTuple):
    hidden: np.ndarray  # y, (B, n, d), post-injection
    global_intent: np.ndarray | None  # g, (B, n, d)
    sections: np.ndarray | None  # (B, N, r)
    targets: np.ndarray | None  # P_i(g), (B, N, r)
    alpha: float


@dataclass
class ForwardState:
    layers: list
    embeddings: np.ndarray
    band: spectral.Band | None
    covering: cohomology.WindowCovering | None
    graph: cohomology.OverlapGraph | None
    embed_spectrum: spectral.PowerSpectrum | None = None
    embed_dft: np.ndarray | None = None
    caches: list = field(default_factory=list)
    plain: bool = False


def covering_for(cfg, n):
    w = min(cfg.w, n)
    return cohomology.make_covering(n, w, min(cfg.stride, w))


@lru_cache(maxsize=32)
def _graph_cached(T, w, stride, weighted):
    cov = cohomology.make_covering(T, w, stride)
    return cov, cohomology.overlap_graph(cov, weighted=weighted), cov.pool_matrix()


def covering_and_graph(cfg, n):
    cov = covering_for(cfg, n)
    return _graph_cached(cov.T, cov.w, cov.stride, cfg.weighted_edges)


def choose_band(cfg, P):
    if cfg.kappa is not None:
        return spectral.select_band_kl(P, cfg.kappa, cfg.eps)
    return spectral.select_band(P, cfg.theta)


def embed(tokens, p, cfg):
    tokens = np.asarray(tokens)
    if tokens.ndim == 1:
        tokens = tokens[None, :]
    if tokens.size == 0:
        raise InvalidArgument("empty token sequence")
    if tokens.min() < 0 or tokens.max() >= cfg.vocab:
        raise InvalidArgument(f"token id out of range [0, {cfg.vocab})")
    n = tokens.shape[1]
    if n > cfg.T:
        raise InvalidArgument(f"sequence length {n} exceeds context {cfg.T}")
    return tokens, p["tok_emb"][tokens] + p["pos_emb"][:n]


def forward(tokens, p, cfg, band=None, plain=False, section_hook=None):
    """Logits ``(B, n, vocab)`` and the per-layer :class:`ForwardState`.

    ``band`` is required when ``cfg.band_mode == "frozen"`` or during
    decoding of a short prefix; otherwise it is chosen from the embedding
    spectrum of this batch. ``plain=True`` runs the bare transformer.
    ``section_hook(l, y, g, state)`` may return a replacement for ``y``.
    """
    tokens, x = embed(tokens, p, cfg)
    Bsz, n, d = x.shape
    state = ForwardState([], x, None, None, None, plain=plain)
    if not plain:
        V = x.transpose(0, 2, 1)
        state.embed_dft = dft_seq(V)
        state.embed_spectrum = spectral.power_spectrum(state.embed_dft)
        if band is None:
            if cfg.band_mode == "frozen":
                raise InvalidArgument("frozen band mode needs an explicit band")
            if n != cfg.T:
                raise InvalidArgument("per-batch band selection needs a full context")
            band = choose_band(cfg, state.embed_spectrum)
        state.band = band
        C = injection_operator(band, n, causal=cfg.injection == "causal")
        state.covering, state.graph, M = covering_and_graph(cfg, n)
    for l in range(cfg.n_layers):
        pre = f"l{l}."
        a, ln1 = layernorm(x, p[pre + "ln1_g"], p[pre + "ln1_b"])
        att, acache = _attention(a, p, pre, cfg.n_heads)
        x1 = x + att
        a2, ln2 = layernorm(x1, p[pre + "ln2_g"], p[pre + "ln2_b"])
        u = a2 @ p[pre + "W1"] + p[pre + "b1"]
        z, th = gelu(u)
        h = x1 + (z @ p[pre + "W2"] + p[pre + "b2"])
        cache = dict(ln1=ln1, att=acache, ln2=ln2, a2=a2, u=u, z=z, th=th, h=h)
        if plain:
            y = h
            state.layers.append(LayerState(y, None, None, None, 0.0))
        else:
            alpha = float(p[pre + "alpha"])
            g = C @ h
            y = h + alpha * g
            if section_hook is not None:
                y = section_hook(l, y, g, state)
            Ws = p[pre + "Ws"]
            pooled_y = M @ y
            pooled_g = M @ g
            cache.update(C=C, M=M, pooled_y=pooled_y, pooled_g=pooled_g)
            state.layers.append(LayerState(y, g, pooled_y @ Ws, pooled_g @ Ws, alpha))
        state.caches.append(cache)
        x = y
    xf, lnf = layernorm(x, p["lnf_g"], p["lnf_b"])
    logits = xf @ p["W_out"] + p["b_out"]
    state.caches.append(dict(lnf=lnf, xf=xf, tokens=tokens))
    return logits, state


def total_loss(logits, targets, state, weights, eps=1e-6, include_task=True):
    """Total objective and its breakdown ``{task, coh, coupling, spec}``.

    ``coh`` and ``coupling`` sum over layers and average over the batch;
    ``spec`` is ``mu * KL`` of the embedding-layer spectrum against the band.
    ``include_task=False`` drops the cross-entropy term (gradient checks of
    the regularisers in isolation).
    """
    task = cross_entropy(logits, targets)[0] if include_task else 0.0
    comps = {"task": task, "coh": 0.0, "coupling": 0.0, "spec": 0.0}
    if not state.plain:
        Bsz = logits.shape[0]
        for l, ls in enumerate(state.layers):
            lam, eta = weights.layer_lam(l), weights.layer_eta(l)
            for b in range(Bsz):
                if lam:
                    comps["coh"] += cohomology.coh_loss(state.graph, ls.sections[b], lam)[0] / Bsz
                if eta:
                    comps["coupling"] += cohomology.coupling_loss(
                        ls.sections[b], ls.targets[b], eta)[0] / Bsz
        if weights.mu:
            comps["spec"] = weights.mu * spectral.spectral_kl(state.embed_spectrum, state.band, eps)
    total = comps["task"] + comps["coh"] + comps["coupling"] + comps["spec"]
    return total, comps


def backward(targets, logits, state, p, cfg, weights, include_task=True):
    """Gradients of :func:`total_loss` for every parameter.

    The band is treated as a constant (it is a discrete selection).
    """
    grads = {k: np.zeros_like(v) for k, v in p.items()}
    if include_task:
        dlogits = cross_entropy(logits, targets)[1]
    else:
        dlogits = np.zeros_like(logits)
    fin = state.caches[-1]
    d = cfg.d
    grads["W_out"] += fin["xf"].reshape(-1, d).T @ dlogits.reshape(-1, cfg.vocab)
    grads["b_out"] += dlogits.reshape(-1, cfg.vocab).sum(axis=0)
    dx, dg_, db_ = layernorm_backward(dlogits @ p["W_out"].T, fin["lnf"])
    grads["lnf_g"] += dg_
    grads["lnf_b"] += db_
    Bsz = logits.shape[0]
    for l in reversed(range(cfg.n_layers)):
        pre = f"l{l}."
        c = state.caches[l]
        ls = state.layers[l]
        dy = dx
        if state.plain:
            dh = dy
        else:
            lam, eta = weights.layer_lam(l), weights.layer_eta(l)
            Ws = p[pre + "Ws"]
            ds = np.zeros_like(ls.sections)
            dt = np.zeros_like(ls.targets)
            if lam:
                L = state.graph.laplacian
                for b in range(Bsz):
                    ds[b] += 2.0 * lam * L.matvec(ls.sections[b]) / Bsz
            if eta:
                diff = ls.sections - ls.targets
                ds += 2.0 * eta * diff / Bsz
                dt -= 2.0 * eta * diff / Bsz
            dg = np.zeros_like(ls.global_intent)
            if lam or eta:
                r = Ws.shape[1]
                grads[pre + "Ws"] += c["pooled_y"].reshape(-1, d).T @ ds.reshape(-1, r)
                grads[pre + "Ws"] += c["pooled_g"].reshape(-1, d).T @ dt.reshape(-1, r)
                dy = dy + c["M"].T @ (ds @ Ws.T)
                dg = c["M"].T @ (dt @ Ws.T)
            grads[pre + "alpha"] += np.sum(dy * ls.global_intent)
            dg = dg + ls.alpha * dy
            dh = dy + c["C"].T @ dg
        # FFN
        grads[pre + "W2"] += c["z"].reshape(-1, c["z"].shape[-1]).T @ dh.reshape(-1, d)
        grads[pre + "b2"] += dh.reshape(-1, d).sum(axis=0)
        dz = dh @ p[pre + "W2"].T
        du = gelu_backward(dz, c["u"], c["th"])
        grads[pre + "W1"] += c["a2"].reshape(-1, d).T @ du.reshape(-1, du.shape[-1])
        grads[pre + "b1"] += du.reshape(-1, du.shape[-1]).sum(axis=0)
        da2 = du @ p[pre + "W1"].T
        dx1, dg2, db2 = layernorm_backward(da2, c["ln2"])
        grads[pre + "ln2_g"] += dg2
        grads[pre + "ln2_b"] += db2
        dx1 = dx1 + dh
        da = _attention_backward(dx1, c["att"], p, pre, grads, cfg.n_heads)
        dxa, dg1, db1 = layernorm_backward(da, c["ln1"])
        grads[pre + "ln1_g"] += dg1
        grads[pre + "ln1_b"] += db1
        dx = dxa + dx1
    dx0 = dx
    if not state.plain and weights.mu:
        dx0 = dx0 + spectral_loss_input_grad(state, weights.mu, cfg.eps)
    tokens = fin["tokens"]
    n = tokens.shape[1]
    np.add.at(grads["tok_emb"], tokens.reshape(-1), dx0.reshape(-1, d))
    grads["pos_emb"][:n] += dx0.sum(axis=0)
    return grads


def spectral_loss_input_grad(state, mu, eps):
    """Gradient of ``mu * KL(p || q)`` with respect to the embeddings ``(B, n, d)``."""
    P = state.embed_spectrum
    _, dp = spectral.spectral_kl_grad(P.probabilities, state.band, eps)
    p = P.probabilities
    dE = mu * (dp - np.dot(dp, p)) / P.total
    n = P.T
    # d|X_k|^2 / dV = 2 Re(conj-weighted inverse transform) = 2n * Re(idft(dE * X))
    dV = 2.0 * n * idft_seq(state.embed_dft * dE)
    return dV.transpose(0, 2, 1)


def loss_and_grads(tokens, targets, p, cfg, weights, band=None, plain=False, include_task=True):
    logits, state = forward(tokens, p, cfg, band=band, plain=plain)
    targets = np.asarray(targets).reshape(logits.shape[:-1])
    total, comps = total_loss(logits, targets, state, weights, cfg.eps, include_task)
    grads = backward(targets, logits, state, p, cfg, weights, include_task)
    return total, comps, grads, state


# --------------------------------------------------------------------------
# optimiser and training


@dataclass
class AdamW:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def update(self, params, grads):
        self.step += 1
        b1c = 1.0 - self.beta1 ** self.step
        b2c = 1.0 - self.beta2 ** self.step
        out = {}
        for k in params:  # insertion order: fixed reduction order
            g = grads[k]
            m = self.m.get(k)
            if m is None:
                m = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            m = self.beta1 * m + (1 - self.beta1) * g
            v = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            self.m[k], self.v[k] = m, v
            w = params[k]
            if self.weight_decay and w.ndim == 2:
                w = w * (1.0 - self.lr * self.weight_decay)
            out[k] = w - self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)
        return out


def train_step(batch, params, opt, weights, cfg, step=0, band=None, plain=False):
    """One optimisation step on a ``(inputs, targets)`` batch.

    Order of work: forward with section extraction, sequence DFT of the
    embeddings, energies and probabilities, band choice, global intent,
    section losses, spectral KL, total, backward, AdamW update.
    Returns ``(new_params, components, band)``.
    """
    inputs, targets = batch
    if cfg.band_mode == "frozen" and band is None and not plain:
        raise InvalidArgument("frozen band mode needs an explicit band")
    total, comps, grads, state = loss_and_grads(
        inputs, targets, params, cfg, weights,
        band=band if cfg.band_mode == "frozen" else None, plain=plain)
    if not np.isfinite(total):
        raise TrainingDivergence(step, None)
    comps = dict(comps, total=total)
    return opt.update(params, grads), comps, state.band


# --------------------------------------------------------------------------
# decoding


def greedy_next(tokens, params, cfg, band, hook=None):
    ctx = np.asarray(tokens[-cfg.T:])[None, :]
    logits, state = forward(ctx, params, cfg, band=band, section_hook=hook)
    return int(np.argmax(logits[0, -1])), state


def generate(prompt, params, cfg, band, max_new):
    """Plain greedy decoding (no harmonisation)."""
    toks = list(prompt)
    for _ in range(max_new):
        nxt, _ = greedy_next(toks, params, cfg, band)
        toks.append(nxt)
    return toks


def infer_harmonized(prompt, params, weights, cfg, band, max_new, tol=1e-12):
    """Greedy decoding with per-layer harmonisation of the section stack.

    At every layer the sections are replaced by
    ``harmonize(s0, L, lam, eta, P(g))`` and the change is written back as
    ``Ws^T (s*_i - s0_i)`` averaged over the windows covering each position.
    Returns ``(tokens, diagnostics)``.
    """
    if len(prompt) == 0:
        raise InvalidArgument("prompt must be nonempty")
    toks = list(int(t) for t in prompt)
    steps = []
    last_sections = {}

    def hook(l, y, g, state):
        lam, eta = weights.layer_lam(l), weights.layer_eta(l)
        graph = state.graph
        M = state.covering.pool_matrix()
        Ws = params[f"l{l}.Ws"]
        s0 = (M @ y[0]) @ Ws
        tg = (M @ g[0]) @ Ws
        pre_e = cohomology.coboundary_energy(graph, s0)
        if lam == 0 and eta == 0:
            s_star = s0
        else:
            s_star = cohomology.harmonize(s0, graph, lam, eta, tg, tol=tol)
        post_e = cohomology.coboundary_energy(graph, s_star)
        steps[-1].append({"layer": l, "pre": pre_e, "post": post_e})
        last_sections[l] = (s_star, graph)
        if s_star is s0:
            return y
        member = (M > 0).astype(np.float64)
        corr = member.T @ ((s_star - s0) @ Ws.T) / state.covering.multiplicity()[:, None]
        return y + corr[None]

    for _ in range(max_new):
        steps.append([])
        nxt, _ = greedy_next(toks, params, cfg, band, hook=hook)
        toks.append(nxt)
    return toks, {"steps": steps, "final_sections": last_sections}


def param_count(p):
    return int(sum(v.size for v in p.values()))


def with_overrides(cfg, **kw):
    return replace(cfg, **kw)
