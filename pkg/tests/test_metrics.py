import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from wavephase import metrics, spectral
from wavephase.errors import InvalidArgument


def test_uniform_logits_perplexity_is_vocab():
    assert metrics.perplexity(np.zeros((2, 5, 256)), np.zeros((2, 5), dtype=int)) == pytest.approx(256, abs=1e-6)


def test_confident_logits_perplexity_is_one():
    logits = np.full((4, 7), -800.0)
    tg = np.array([1, 6, 0, 3])
    logits[np.arange(4), tg] = 800.0
    assert metrics.perplexity(logits, tg) == pytest.approx(1.0, abs=1e-12)


def test_perplexity_matches_direct_sum(rng):
    logits = rng.standard_normal((3, 6, 11)) * 3
    tg = rng.integers(0, 11, (3, 6))
    total = 0.0
    for b in range(3):
        for t in range(6):
            row = logits[b, t]
            total += -(row[tg[b, t]] - math.log(math.fsum(math.exp(v) for v in row)))
    assert math.log(metrics.perplexity(logits, tg)) == pytest.approx(total / 18, rel=1e-10)


def test_consistency_identical_sections():
    s = np.tile([1.0, 2.0, -1.0], (4, 1))
    assert metrics.consistency_score(s, [(0, 1), (1, 2), (2, 3)]) == 1.0


def test_consistency_orthogonal_sections():
    assert metrics.consistency_score(np.eye(3), [(0, 1), (1, 2), (0, 2)], 0.9) == 0.0


def test_consistency_mixed_pair():
    a = np.array([1.0, 0.0])
    b = np.array([0.95, math.sqrt(1 - 0.95 ** 2)])
    c = np.array([0.95 * 0.5 - math.sqrt(1 - 0.95 ** 2) * math.sqrt(0.75),
                  math.sqrt(1 - 0.95 ** 2) * 0.5 + 0.95 * math.sqrt(0.75)])
    s = np.stack([a, b, c])
    assert s[1] @ s[2] == pytest.approx(0.5)
    assert metrics.consistency_score(s, [(0, 1), (1, 2)], 0.9) == 0.5


def test_consistency_zero_vectors():
    s = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 0.0]])
    assert metrics.consistency_score(s, [(0, 1), (1, 2)]) == 0.5


@pytest.mark.parametrize("tau", [0, 1.2])
def test_consistency_rejects_bad_tau(tau):
    with pytest.raises(InvalidArgument):
        metrics.consistency_score(np.eye(2), [(0, 1)], tau)


def power_law(beta, T=64):
    return spectral.PowerSpectrum.from_energies((np.arange(T) + 1.0) ** -beta)


def test_zipf_deviation_identical():
    P = power_law(1.0)
    dev, ret = metrics.zipf_deviation(P, P, spectral.full_band(64))
    assert dev == pytest.approx(0, abs=1e-12) and ret == pytest.approx(1.0)


def test_zipf_deviation_exponents():
    dev, _ = metrics.zipf_deviation(power_law(1.0), power_law(1.2), spectral.full_band(64))
    assert dev == pytest.approx(0.2, abs=1e-9)


def test_zipf_deviation_retention_in_band():
    P = spectral.PowerSpectrum.from_energies([4, 1, 0, 0, 0, 1])
    _, ret = metrics.zipf_deviation(P, P, spectral.make_band(P, 1))
    assert ret == pytest.approx(1.0)


def report(**kw):
    base = dict(perplexity=10.0, consistency=0.5, zipf_deviation=0.1, energy_retention=0.9,
                coboundary_energy_per_layer=[1.0, 2.0])
    base.update(kw)
    return metrics.EvalReport(**base)


def test_identical_reports_have_zero_deltas():
    out = metrics.ablation_report({lab: report() for lab in metrics.REQUIRED_LABELS})
    assert all(v == 0 for d in out["deltas"].values() for v in d.values())
    assert "lambda0" in out["text"]


def test_missing_label_named():
    runs = {lab: report() for lab in ("full", "lambda0", "eta0")}
    with pytest.raises(InvalidArgument, match="mu0"):
        metrics.ablation_report(runs)


def test_table_copies_reports_verbatim():
    runs = {lab: report(perplexity=5.0 + i, consistency=0.1 * i)
            for i, lab in enumerate(metrics.REQUIRED_LABELS)}
    out = metrics.ablation_report(runs)
    for lab, rep in runs.items():
        assert out["table"][lab]["perplexity"] == rep.perplexity
        assert out["table"][lab]["consistency"] == rep.consistency
        assert out["deltas"][lab]["perplexity"] == rep.perplexity - 5.0


def test_report_validation():
    with pytest.raises(InvalidArgument):
        report(perplexity=0.5)
    with pytest.raises(InvalidArgument):
        report(consistency=1.5)
    with pytest.raises(InvalidArgument):
        report(coboundary_energy_per_layer=[float("nan")])


def test_report_dict_roundtrip():
    r = report(extras={"task_loss": 2.0})
    assert metrics.EvalReport.from_dict(r.to_dict()) == r


@given(st.floats(0.3, 3.0))
def test_zipf_fit_recovers_any_exponent(beta):
    assert spectral.zipf_fit(power_law(beta, 128)).beta_hat == pytest.approx(beta, abs=1e-9)
