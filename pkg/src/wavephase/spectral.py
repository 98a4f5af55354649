"""Spectral analysis of embedding sequences.

An embedding sequence is a ``d x T`` real array (rows are embedding
coordinates, columns are positions). Energy is aggregated over all rows, and
over any leading batch axes, into one length-``T`` spectrum.

Bands are always symmetric low-pass prefixes ``{0} u {1..k} u {T-k..T-1}``,
indexed by their half-width ``k``, so the band-limited reconstruction of a
real signal stays real.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import InvalidArgument
from .numkernel import as_tensor, dft_seq, idft_seq


@dataclass(frozen=True)
class PowerSpectrum:
    energies: np.ndarray
    probabilities: np.ndarray | None = field(default=None)

    @property
    def T(self):
        return int(self.energies.size)

    @property
    def defined(self):
        return self.probabilities is not None

    @property
    def total(self):
        return float(self.energies.sum())

    def require_probabilities(self):
        if self.probabilities is None:
            raise InvalidArgument("degenerate spectrum: total energy is zero")
        return self.probabilities

    @classmethod
    def from_energies(cls, energies):
        E = np.asarray(energies, dtype=np.float64).reshape(-1)
        if E.size == 0 or np.any(E < 0) or not np.all(np.isfinite(E)):
            raise InvalidArgument("energies must be finite, nonnegative and nonempty")
        total = E.sum()
        return cls(E, E / total if total > 0 else None)


@dataclass(frozen=True)
class Band:
    indices: np.ndarray
    T: int
    half_width: int
    retained_energy: float = float("nan")
    saturated: bool = False

    @property
    def size(self):
        return int(self.indices.size)

    def mask(self):
        m = np.zeros(self.T, dtype=bool)
        m[self.indices] = True
        return m

    def is_full(self):
        return self.size == self.T

    def to_dict(self):
        return {
            "indices": self.indices.tolist(),
            "T": self.T,
            "half_width": self.half_width,
            "retained_energy": self.retained_energy,
            "saturated": self.saturated,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["indices"], dtype=np.int64), int(d["T"]), int(d["half_width"]),
                   float(d["retained_energy"]), bool(d.get("saturated", False)))


class ZipfFit(NamedTuple):
    beta_hat: float
    r_squared: float


# --------------------------------------------------------------------------


def power_spectrum(S, per_row=False):
    """Energies ``E_k = sum_n |S[n, k]|^2`` over every row (and batch) of ``S``.

    With ``per_row=True`` returns the ``d x T`` array of per-row energies
    instead; that is a diagnostic, not a :class:`PowerSpectrum`.
    """
    S = np.asarray(S)
    if not np.all(np.isfinite(S)):
        raise InvalidArgument("spectrum contains NaN or Inf")
    mag2 = S.real ** 2 + S.imag ** 2
    if per_row:
        return mag2
    return PowerSpectrum.from_energies(mag2.reshape(-1, S.shape[-1]).sum(axis=0))


def embedding_spectrum(V):
    """Shorthand for ``power_spectrum(dft_seq(V))``."""
    return power_spectrum(dft_seq(V))


def symmetric_order(T):
    """Frequency indices in low-pass rank: 0, 1, T-1, 2, T-2, ..."""
    order = [0]
    for k in range(1, T // 2 + 1):
        order.append(k)
        if T - k != k:
            order.append(T - k)
    return np.asarray(order, dtype=np.int64)


def cumulative_energy(P, order=None):
    """``S(k) = sum_{n<=k} p[order[n]]``; default order is :func:`symmetric_order`."""
    p = P.require_probabilities()
    if order is None:
        order = symmetric_order(P.T)
    order = np.asarray(order, dtype=np.int64)
    if sorted(order.tolist()) != list(range(P.T)):
        raise InvalidArgument("order must be a permutation of the frequency indices")
    return np.cumsum(p[order])


def prefix_band(T, k):
    """Hermitian-closed low-pass band of half-width ``k``."""
    if T < 1 or k < 0 or k > T // 2:
        raise InvalidArgument(f"half-width {k} invalid for T={T}")
    lo = np.arange(0, k + 1, dtype=np.int64)
    hi = np.arange(max(T - k, k + 1), T, dtype=np.int64)
    return np.concatenate([lo, hi])


def _prefix_retained(p):
    """Retained probability of each half-width prefix, k = 0..T//2."""
    T = p.size
    out = np.empty(T // 2 + 1)
    acc = p[0]
    out[0] = acc
    for k in range(1, T // 2 + 1):
        acc += p[k]
        if T - k != k:
            acc += p[T - k]
        out[k] = acc
    return out


def make_band(P, k, saturated=False):
    idx = prefix_band(P.T, k)
    p = P.probabilities
    retained = float(p[idx].sum()) if p is not None else float("nan")
    return Band(idx, P.T, k, retained, saturated)


def full_band(T):
    return Band(np.arange(T, dtype=np.int64), T, T // 2, 1.0)


def select_band(P, theta):
    """Smallest symmetric low-pass prefix retaining at least ``theta`` of the energy."""
    if not 0 < theta <= 1:
        raise InvalidArgument(f"theta must lie in (0, 1], got {theta}")
    p = P.require_probabilities()
    retained = _prefix_retained(p)
    # 1e-12 slack: the full band must always qualify for theta = 1
    hits = np.nonzero(retained >= theta - 1e-12)[0]
    k = int(hits[0]) if hits.size else P.T // 2
    return make_band(P, k)


def spectral_kl(P, band, eps=1e-6):
    """``KL(p || q)`` with ``q = (1 - eps*T) * renormalised(p restricted to band) + eps``."""
    return float(_kl_and_grad(P.require_probabilities(), band, eps, want_grad=False)[0])


def spectral_kl_grad(p, band, eps=1e-6):
    """Value and gradient of :func:`spectral_kl` with respect to the probabilities."""
    return _kl_and_grad(np.asarray(p, dtype=np.float64), band, eps, want_grad=True)


def _kl_and_grad(p, band, eps, want_grad):
    T = p.size
    if band.T != T:
        raise InvalidArgument(f"band built for T={band.T}, spectrum has T={T}")
    if not 0 < eps < 1.0 / T:
        raise InvalidArgument(f"eps must lie in (0, 1/T) = (0, {1.0 / T:.3g}), got {eps}")
    mask = band.mask()
    c = 1.0 - eps * T
    mass = p[mask].sum()
    if mass <= 0:
        r = np.where(mask, 1.0 / mask.sum(), 0.0)
    else:
        r = np.where(mask, p / mass, 0.0)
    q = c * r + eps
    pos = p > 0
    logp = np.log(np.where(pos, p, 1.0))
    logq = np.log(q)
    value = float(np.sum(np.where(pos, p * (logp - logq), 0.0)))
    if not want_grad:
        return value, None
    grad = np.where(pos, logp + 1.0, 1.0) - logq
    if mass > 0:
        w = p / q
        inner = np.sum(np.where(mask, p * w, 0.0)) / (mass * mass)
        grad = grad - np.where(mask, c * (w / mass - inner), 0.0)
    return value, grad


def select_band_kl(P, kappa, eps=1e-6):
    """Smallest symmetric prefix whose :func:`spectral_kl` is at most ``kappa``.

    When no prefix qualifies the full band is returned with ``saturated=True``.
    """
    if kappa <= 0:
        raise InvalidArgument("kappa must be positive")
    P.require_probabilities()
    for k in range(P.T // 2 + 1):
        band = make_band(P, k)
        if spectral_kl(P, band, eps) <= kappa:
            return band
    return make_band(P, P.T // 2, saturated=True)


def band_projector(V, band):
    """Band-limited reconstruction ``idft(mask * dft(V))`` along the last axis."""
    V = as_tensor(V, name="V")
    T = V.shape[-1]
    if band.T != T:
        raise InvalidArgument(f"band built for T={band.T}, input has T={T}")
    if band.indices.size and (band.indices.min() < 0 or band.indices.max() >= T):
        raise InvalidArgument("band indices out of range")
    mask = band.mask()
    closed = all(mask[(T - k) % T] for k in band.indices)
    if not closed:
        raise InvalidArgument("band is not Hermitian-closed")
    S = dft_seq(V) * mask
    g, residue = idft_seq(S, return_residue=True)
    if residue > 1e-9 * max(1.0, float(np.abs(V).max())):
        raise InvalidArgument(f"band projection left imaginary residue {residue:.3e}")
    return g


def band_projector_matrix(band):
    """The ``T x T`` real matrix ``B`` with ``band_projector(V) == V @ B``.

    ``B`` is symmetric, idempotent and circulant.
    """
    return band_projector(np.eye(band.T), band)


def magnitude_phase(S):
    """Polar form of a spectrum; phases in (-pi, pi], zero where magnitude is zero."""
    S = np.asarray(S, dtype=np.complex128)
    mag = np.abs(S)
    phase = np.angle(S)
    phase = np.where(phase <= -np.pi, phase + 2 * np.pi, phase)
    phase = np.where(mag == 0, 0.0, phase)
    return mag, phase


def harmonic_fractions(T, beta=1.0):
    """Cumulative fractions ``sum_{n<=k} (n+1)^-beta / sum_{n<T} (n+1)^-beta``."""
    if T < 1 or beta <= 0:
        raise InvalidArgument("need T >= 1 and beta > 0")
    terms = np.arange(1, T + 1, dtype=np.float64) ** (-float(beta))
    return np.cumsum(terms) / math.fsum(terms)


def dimension_bound(T, beta=1.0, theta=0.95):
    """Minimal ``k`` with cumulative power-law energy fraction at least ``theta``.

    Exact summation of ``(n+1)^-beta``; no logarithmic approximation.
    """
    if not 0 < theta <= 1:
        raise InvalidArgument(f"theta must lie in (0, 1], got {theta}")
    frac = harmonic_fractions(T, beta)
    hits = np.nonzero(frac >= theta - 1e-15)[0]
    return int(hits[0]) if hits.size else T - 1


def retained_fraction(T, k, beta=1.0):
    """Energy fraction of the first ``k + 1`` power-law components."""
    if not 0 <= k < T:
        raise InvalidArgument(f"k must lie in [0, {T})")
    return float(harmonic_fractions(T, beta)[k])


def zipf_fit(P, one_sided=False):
    """Fit ``p_k ~ (k+1)^-beta`` by least squares in log-log over positive bins.

    ``one_sided`` restricts the fit to ``k <= T // 2``, which is where the
    information lives for the spectrum of a real signal.
    """
    p = P.require_probabilities() if isinstance(P, PowerSpectrum) else np.asarray(P, float)
    if one_sided:
        p = p[: p.size // 2 + 1]
    k = np.nonzero(p > 0)[0]
    if k.size < 3:
        raise InvalidArgument(f"zipf fit needs at least 3 positive bins, got {k.size}")
    x = np.log(k + 1.0)
    y = np.log(p[k])
    xm, ym = x.mean(), y.mean()
    sxx = np.sum((x - xm) ** 2)
    slope = np.sum((x - xm) * (y - ym)) / sxx
    resid = y - (ym + slope * (x - xm))
    ss_tot = np.sum((y - ym) ** 2)
    ss_res = np.sum(resid ** 2)
    if ss_tot <= 1e-300:
        r2 = 1.0
    else:
        r2 = float(min(1.0, max(0.0, 1.0 - ss_res / ss_tot)))
    return ZipfFit(float(-slope), r2)
