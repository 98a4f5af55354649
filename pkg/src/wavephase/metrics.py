"""Evaluation metrics and the ablation report."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import spectral
from .errors import InvalidArgument
from .model import cross_entropy

REQUIRED_LABELS = ("full", "lambda0", "mu0", "eta0")
REPORT_FIELDS = ("perplexity", "consistency", "zipf_deviation", "energy_retention")


def perplexity(logits, targets):
    """``exp`` of the mean natural-log cross-entropy."""
    return math.exp(cross_entropy(logits, targets)[0])


def _cosine_agree(a, b, tau):
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return na == 0 and nb == 0
    return float(a @ b) / (na * nb) >= tau


def consistency_score(s, pairs, tau=0.9):
    """Fraction of pairs ``(i, j)`` whose sections have cosine similarity >= ``tau``."""
    if not 0 < tau <= 1:
        raise InvalidArgument(f"tau must lie in (0, 1], got {tau}")
    pairs = [tuple(int(v) for v in pr) for pr in pairs]
    if not pairs:
        raise InvalidArgument("consistency needs at least one pair")
    s = np.asarray(s, dtype=np.float64)
    hits = sum(_cosine_agree(s[i], s[j], tau) for i, j in pairs)
    return hits / len(pairs)


def zipf_deviation(before, after, band, one_sided=False):
    """``|beta_after - beta_before|`` and the share of ``after`` energy inside ``band``."""
    b0 = spectral.zipf_fit(before, one_sided=one_sided).beta_hat
    b1 = spectral.zipf_fit(after, one_sided=one_sided).beta_hat
    p = after.require_probabilities()
    if band.T != p.size:
        raise InvalidArgument(f"band built for T={band.T}, spectrum has T={p.size}")
    return abs(b1 - b0), float(p[band.indices].sum())


@dataclass
class EvalReport:
    perplexity: float
    consistency: float
    zipf_deviation: float
    energy_retention: float
    coboundary_energy_per_layer: list
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        vals = [self.perplexity, self.consistency, self.zipf_deviation, self.energy_retention,
                *self.coboundary_energy_per_layer]
        if not all(math.isfinite(v) for v in vals):
            raise InvalidArgument("report fields must be finite")
        if self.perplexity < 1 - 1e-12:
            raise InvalidArgument("perplexity below 1")
        if not (0 <= self.consistency <= 1 and 0 <= self.energy_retention <= 1 + 1e-12):
            raise InvalidArgument("consistency/energy_retention out of [0, 1]")
        if self.zipf_deviation < 0:
            raise InvalidArgument("zipf_deviation must be nonnegative")

    def to_dict(self):
        d = asdict(self)
        extras = d.pop("extras")
        d.update(extras)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        core = {k: d.pop(k) for k in (*REPORT_FIELDS, "coboundary_energy_per_layer")}
        return cls(**core, extras=d)


def _flat_fields(report):
    out = {k: getattr(report, k) for k in REPORT_FIELDS}
    for l, v in enumerate(report.coboundary_energy_per_layer):
        out[f"coboundary_energy_layer{l}"] = v
    return out


def ablation_report(runs, spread=None):
    """Side-by-side table of :class:`EvalReport` fields with deltas against ``full``.

    ``runs`` maps label to report; ``spread`` optionally maps label to a
    dict of per-field standard deviations, copied into the output.
    """
    for label in REQUIRED_LABELS:
        if label not in runs:
            raise InvalidArgument(f"ablation report is missing required label {label!r}")
    labels = list(runs)
    table = {lab: _flat_fields(runs[lab]) for lab in labels}
    base = table["full"]
    deltas = {lab: {k: table[lab][k] - base[k] for k in base} for lab in labels}
    out = {"labels": labels, "table": table, "deltas": deltas}
    if spread is not None:
        out["stddev"] = {lab: dict(spread[lab]) for lab in labels if lab in spread}
    out["text"] = format_ablation(out)
    return out


def format_ablation(report):
    labels = report["labels"]
    cols = list(report["table"][labels[0]])
    head = ["config"] + cols
    rows = [head]
    for lab in labels:
        rows.append([lab] + [f"{report['table'][lab][c]:.6g}" for c in cols])
    for lab in labels:
        if lab == "full":
            continue
        rows.append([f"d({lab})"] + [f"{report['deltas'][lab][c]:+.3g}" for c in cols])
    widths = [max(len(r[i]) for r in rows) for i in range(len(head))]
    return "\n".join("  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in rows) + "\n"
