"""Training, evaluation and ablation runs shared by the CLI and the tests."""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import cohomology, corpus, metrics, model, spectral, wpt
from .config import RunConfig
from .errors import ConfigError, TrainingDivergence

HISTORY_COLUMNS = ("step", "task", "coh", "coupling", "spec", "total", "band_half_width", "band_size")
ABLATION_LABELS = ("full", "lambda0", "mu0", "eta0", "fullband")


def load_tokens(rc: RunConfig):
    """Train and eval token arrays (byte ids). Synthetic text if no corpus is set."""
    if rc.corpus is None:
        data = corpus.encode(corpus.synthetic_corpus(rc.corpus_bytes, seed=rc.corpus_seed))
    else:
        data = corpus.ingest_corpus(rc.corpus, rc.T)
    cut = int(len(data) * (1.0 - rc.eval_fraction))
    train, held = data[:cut], data[cut:]
    if len(train) < rc.T + 2 or len(held) < rc.T + 2:
        raise ConfigError(
            f"corpus of {len(data)} bytes too small for T={rc.T} with eval_fraction={rc.eval_fraction}")
    return train, held


def batch_stream(train, batch_size, T, seed):
    rng = np.random.default_rng([seed, 1])
    hi = len(train) - T - 1
    while True:
        starts = rng.integers(0, hi + 1, size=batch_size)
        x = np.stack([train[s:s + T] for s in starts])
        y = np.stack([train[s + 1:s + T + 1] for s in starts])
        yield x, y


def eval_windows(held, T, n):
    starts = np.linspace(0, len(held) - T - 1, n).astype(np.int64)
    x = np.stack([held[s:s + T] for s in starts])
    y = np.stack([held[s + 1:s + T + 1] for s in starts])
    return x, y


@dataclass
class TrainResult:
    params: dict
    init_params: dict
    history: list
    band: spectral.Band
    config: model.ModelConfig
    weights: model.LossWeights
    seed: int


def train(rc: RunConfig, weights=None, seed=None, data=None, plain=False):
    seed = rc.seed if seed is None else seed
    weights = rc.loss_weights() if weights is None else weights
    mcfg = rc.model_config(seed)
    train_tok, held = load_tokens(rc) if data is None else data
    params = model.init_params(mcfg, seed)
    init = {k: v.copy() for k, v in params.items()}
    opt = model.AdamW(lr=rc.lr, weight_decay=rc.weight_decay)
    stream = batch_stream(train_tok, rc.batch_size, rc.T, seed)
    history = []
    band = None
    last = None
    if mcfg.band_mode == "frozen" and not plain:
        band = initial_band(mcfg, params, eval_windows(held, rc.T, rc.eval_windows)[0])
    for step in range(rc.steps):
        batch = next(stream)
        try:
            params, comps, band_step = model.train_step(batch, params, opt, weights, mcfg,
                                                        step=step, band=band, plain=plain)
        except TrainingDivergence:
            raise TrainingDivergence(step, last) from None
        if not all(math.isfinite(v) for v in comps.values()):
            raise TrainingDivergence(step, last)
        if mcfg.band_mode != "frozen" or band is None:
            band = band_step
        last = comps["total"]
        history.append({
            "step": step, **{k: comps[k] for k in ("task", "coh", "coupling", "spec", "total")},
            "band_half_width": band.half_width if band is not None else -1,
            "band_size": band.size if band is not None else -1,
        })
    if band is None:
        band = initial_band(mcfg, params, eval_windows(held, rc.T, rc.eval_windows)[0])
    return TrainResult(params, init, history, band, mcfg, weights, seed)


def initial_band(mcfg, params, tokens):
    """Band chosen by the configured policy from the embedding spectrum of ``tokens``."""
    _, x0 = model.embed(tokens, params, mcfg)
    return model.choose_band(mcfg, spectral.power_spectrum(spectral.dft_seq(x0.transpose(0, 2, 1))))


def smoothed_task(history, window):
    task = [h["task"] for h in history]
    if len(task) < window:
        raise ValueError(f"history of {len(task)} steps shorter than window {window}")
    return float(np.mean(task[:window])), float(np.mean(task[-window:]))


def _hidden_spectrum(h):
    return spectral.power_spectrum(spectral.dft_seq(h.transpose(0, 2, 1)))


def evaluate(result: TrainResult, rc: RunConfig, data=None):
    """:class:`metrics.EvalReport` of a trained model on the held-out windows."""
    mcfg, weights = result.config, result.weights
    _, held = load_tokens(rc) if data is None else data
    ex, ey = eval_windows(held, rc.T, rc.eval_windows)
    band = result.band if mcfg.band_mode == "frozen" else None
    logits, state = model.forward(ex, result.params, mcfg, band=band)
    _, init_state = model.forward(ex, result.init_params, mcfg, band=band)
    ppl = metrics.perplexity(logits, ey)
    edges = state.graph.edges
    cons_layers, cob_layers = [], []
    for ls in state.layers:
        vals, energies = [], []
        for b in range(ls.sections.shape[0]):
            if len(edges):
                vals.append(metrics.consistency_score(ls.sections[b], edges, rc.tau))
            energies.append(cohomology.coboundary_energy(state.graph, ls.sections[b]))
        cons_layers.append(float(np.mean(vals)) if vals else 1.0)
        cob_layers.append(float(np.mean(energies)))
    before = init_state.embed_spectrum
    after = state.embed_spectrum
    eval_band = spectral.select_band(before, rc.theta)
    dev, retention = metrics.zipf_deviation(before, after, eval_band, one_sided=True)
    h_before = _hidden_spectrum(init_state.layers[-1].hidden)
    h_after = _hidden_spectrum(state.layers[-1].hidden)
    dev_h, retention_h = metrics.zipf_deviation(h_before, h_after, eval_band, one_sided=True)
    extras = {
        "task_loss": float(math.log(ppl)),
        "consistency_per_layer": cons_layers,
        "zipf_beta_before": spectral.zipf_fit(before, one_sided=True).beta_hat,
        "zipf_beta_after": spectral.zipf_fit(after, one_sided=True).beta_hat,
        "zipf_deviation_final_hidden": dev_h,
        "energy_retention_final_hidden": retention_h,
        "eval_band_half_width": eval_band.half_width,
        "model_band_half_width": state.band.half_width,
        "alpha_per_layer": [float(result.params[f"l{l}.alpha"]) for l in range(mcfg.n_layers)],
    }
    return metrics.EvalReport(ppl, float(np.mean(cons_layers)), dev, min(retention, 1.0),
                              cob_layers, extras)


# --------------------------------------------------------------------------
# persistence


def history_csv(history):
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=HISTORY_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in history:
        writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()


def dump_json(obj):
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def save_checkpoint(path, result: TrainResult, steps):
    flat, layout = wpt.pack_params(result.params)
    meta = {
        "format": "wavephase-checkpoint",
        "config": result.config.to_dict(),
        "weights": {"lambda": result.weights.lam, "mu": result.weights.mu, "eta": result.weights.eta},
        "step": steps,
        "seed": result.seed,
        "layout": layout,
        "band": result.band.to_dict(),
    }
    wpt.write(path, flat, meta)


def load_checkpoint(path):
    """``(params, ModelConfig, Band, metadata)`` from a checkpoint file."""
    flat, meta = wpt.read(path)
    if not meta or meta.get("format") != "wavephase-checkpoint":
        raise ConfigError(f"{path} is not a wavephase checkpoint (missing metadata)")
    try:
        mcfg = model.ModelConfig(**meta["config"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"checkpoint config invalid: {exc}") from None
    expected = model.init_params(mcfg, 0)
    layout = meta["layout"]
    names = [item["name"] for item in layout]
    if names != list(expected):
        raise ConfigError(f"checkpoint parameters {names[:4]}... do not match the model config")
    for item in layout:
        if tuple(item["shape"]) != expected[item["name"]].shape:
            raise ConfigError(
                f"parameter {item['name']} has shape {item['shape']}, config implies "
                f"{list(expected[item['name']].shape)}")
    if flat.ndim != 1 or flat.size != sum(v.size for v in expected.values()):
        raise ConfigError("checkpoint payload size does not match the parameter layout")
    params = wpt.unpack_params(flat, layout)
    return params, mcfg, spectral.Band.from_dict(meta["band"]), meta


def write_run(out_dir, result, report, rc, label=None):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "checkpoint.wpt", result, rc.steps)
    (out / "history.csv").write_text(history_csv(result.history))
    payload = {
        "label": label,
        "seed": result.seed,
        "steps": rc.steps,
        "weights": {"lambda": result.weights.lam, "mu": result.weights.mu, "eta": result.weights.eta},
        "report": report.to_dict(),
    }
    (out / "report.json").write_text(dump_json(payload))


# --------------------------------------------------------------------------
# ablation


def ablation_configs(rc: RunConfig):
    """Label -> (RunConfig, LossWeights) for the five compared configurations."""
    w = rc.loss_weights()
    return {
        "full": (rc, w),
        "lambda0": (rc, replace(w, lam=0.0)),
        "mu0": (rc, replace(w, mu=0.0)),
        "eta0": (rc, replace(w, eta=0.0)),
        "fullband": (replace(rc, theta=1.0, kappa=None), w),
    }


def _run_one(args):
    label, rc_run, weights, seed, eval_rc, out_dir = args
    data = load_tokens(rc_run)
    res = train(rc_run, weights=weights, seed=seed, data=data)
    rep = evaluate(res, eval_rc if eval_rc is not None else rc_run, data=data)
    if out_dir is not None:
        write_run(Path(out_dir) / label / f"seed{seed}", res, rep, rc_run, label)
    return label, seed, rep, res.history


def worker_count():
    try:
        return max(1, int(os.environ.get("WAVEPHASE_THREADS", "1")))
    except ValueError:
        raise ConfigError("WAVEPHASE_THREADS must be an integer") from None


def ablate(rc: RunConfig, out_dir=None, labels=ABLATION_LABELS):
    """Train every configuration over ``rc.seeds`` and build the ablation report."""
    cfgs = ablation_configs(rc)
    # energy retention is measured against a band chosen with the base theta for every label
    jobs = [(lab, cfgs[lab][0], cfgs[lab][1], seed, rc, out_dir) for lab in labels for seed in rc.seeds]
    n = worker_count()
    if n > 1:
        with ProcessPoolExecutor(max_workers=n) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    per_seed = {lab: {} for lab in labels}
    histories = {lab: {} for lab in labels}
    for lab, seed, rep, hist in results:
        per_seed[lab][seed] = rep
        histories[lab][seed] = hist
    means, spread = {}, {}
    for lab in labels:
        reps = [per_seed[lab][s] for s in rc.seeds]
        flat = [metrics._flat_fields(r) for r in reps]
        keys = list(flat[0])
        mean = {k: float(np.mean([f[k] for f in flat])) for k in keys}
        spread[lab] = {k: float(np.std([f[k] for f in flat])) for k in keys}
        n_layers = len(reps[0].coboundary_energy_per_layer)
        means[lab] = metrics.EvalReport(
            mean["perplexity"], mean["consistency"], mean["zipf_deviation"],
            mean["energy_retention"],
            [mean[f"coboundary_energy_layer{l}"] for l in range(n_layers)])
    report = metrics.ablation_report(means, spread)
    report["seeds"] = list(rc.seeds)
    report["per_seed"] = {lab: {str(s): per_seed[lab][s].to_dict() for s in rc.seeds}
                          for lab in labels}
    gaps = [per_seed["full"][s].consistency - per_seed["lambda0"][s].consistency
            for s in rc.seeds]
    report["consistency_gap_full_minus_lambda0"] = {
        "mean": float(np.mean(gaps)), "stddev": float(np.std(gaps)), "per_seed": gaps}
    return report, histories
