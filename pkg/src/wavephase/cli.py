"""Command line: ``wavephase {analyze,train,harmonize,ablate}``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import corpus, metrics, model, runner, spectral, wpt
from .errors import ConfigError, FormatError, WavePhaseError

# published dimension bound for a 1/(n+1) spectrum; exact summation disagrees
PUBLISHED_BOUND = {"T": 24576, "beta": 1.0, "theta": 0.95, "k": 3000}
THETA_TABLE = (0.80, 0.90, 0.95, 0.99)


# --------------------------------------------------------------------------
# analyze


def analyze_embeddings(V, theta, kappa, eps):
    """Spectrum report for a ``d x T`` embedding matrix."""
    V = np.asarray(V, dtype=np.float64)
    if V.ndim != 2:
        raise FormatError(f"expected a rank-2 d x T tensor, got rank {V.ndim}", 4)
    T = V.shape[1]
    P = spectral.power_spectrum(spectral.dft_seq(V))
    if not P.defined:
        raise WavePhaseError("degenerate spectrum: total energy is zero")
    cum = spectral.cumulative_energy(P)
    band = spectral.select_band(P, theta)
    band_kl = spectral.select_band_kl(P, kappa, eps) if eps < 1.0 / T else None
    try:
        fit = spectral.zipf_fit(P)._asdict()
    except WavePhaseError as exc:
        fit = {"error": str(exc)}
    table = {f"{t:.2f}": spectral.dimension_bound(T, 1.0, t) for t in THETA_TABLE}
    k_exact = spectral.dimension_bound(PUBLISHED_BOUND["T"], PUBLISHED_BOUND["beta"], PUBLISHED_BOUND["theta"])
    report = {
        "T": T,
        "d": V.shape[0],
        "energies": P.energies.tolist(),
        "probabilities": P.probabilities.tolist(),
        "cumulative_order": spectral.symmetric_order(T).tolist(),
        "cumulative_energy": cum.tolist(),
        "band_threshold": {"theta": theta, **band.to_dict()},
        "band_kl": None if band_kl is None else {
            "kappa": kappa, "eps": eps, "kl": spectral.spectral_kl(P, band_kl, eps), **band_kl.to_dict()},
        "zipf_fit": fit,
        "dimension_bound": {"T": T, "beta": 1.0, "table": table},
        "bound_comparison": {
            "published_k": PUBLISHED_BOUND["k"],
            "T": PUBLISHED_BOUND["T"],
            "theta": PUBLISHED_BOUND["theta"],
            "beta": PUBLISHED_BOUND["beta"],
            "computed_k": k_exact,
            "retained_at_published_k": spectral.retained_fraction(PUBLISHED_BOUND["T"], PUBLISHED_BOUND["k"]),
            "agrees": k_exact == PUBLISHED_BOUND["k"],
        },
    }
    if T == PUBLISHED_BOUND["T"]:
        report["paper_claim"] = PUBLISHED_BOUND["k"]
    return report


def cumulative_csv(cum):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["k", "S"])
    for k, v in enumerate(cum):
        w.writerow([k, repr(float(v))])
    return buf.getvalue()


def cmd_analyze(rc, out):
    if rc.input is None:
        raise ConfigError("analyze needs --input PATH to a d x T WPT file")
    try:
        V, _ = wpt.read(rc.input)
    except OSError as exc:
        raise ConfigError(f"cannot read {rc.input}: {exc}") from None
    kappa = rc.kappa if rc.kappa is not None else rc.analyze_kappa
    rep = analyze_embeddings(V, rc.theta, kappa, rc.eps)
    out.mkdir(parents=True, exist_ok=True)
    (out / "analyze.json").write_text(runner.dump_json(rep))
    (out / "cumulative.csv").write_text(cumulative_csv(rep["cumulative_energy"]))
    pc = rep["bound_comparison"]
    print(f"T={rep['T']} band(theta={rc.theta}) half-width={rep['band_threshold']['half_width']} "
          f"retained={rep['band_threshold']['retained_energy']:.6f}")
    print(f"dimension bound T={pc['T']} theta={pc['theta']}: computed k={pc['computed_k']} "
          f"(published {pc['published_k']}; S({pc['published_k']})={pc['retained_at_published_k']:.4f})")
    return rep


# --------------------------------------------------------------------------
# train / harmonize / ablate


def cmd_train(rc, out):
    data = runner.load_tokens(rc)
    res = runner.train(rc, data=data)
    rep = runner.evaluate(res, rc, data=data)
    runner.write_run(out, res, rep, rc)
    last = res.history[-1]["task"] if res.history else float("nan")
    print(f"trained {rc.steps} steps, final task loss {last:.4f}, perplexity {rep.perplexity:.3f}")
    return rep


def cmd_harmonize(rc, out):
    if rc.checkpoint is None:
        raise ConfigError("harmonize needs --checkpoint PATH")
    if not rc.prompt:
        raise ConfigError("prompt must be nonempty")
    params, mcfg, band, meta = runner.load_checkpoint(rc.checkpoint)
    weights = rc.loss_weights()
    prompt = corpus.encode(rc.prompt.encode("utf-8")).tolist()
    toks, diag = model.infer_harmonized(prompt, params, weights, mcfg, band, rc.max_new)
    plain = model.generate(prompt, params, mcfg, band, rc.max_new)
    layers = []
    for l in range(mcfg.n_layers):
        rows = [st[l] for st in diag["steps"] if len(st) > l]
        pre = [r["pre"] for r in rows]
        post = [r["post"] for r in rows]
        cons = None
        if l in diag["final_sections"]:
            s_star, graph = diag["final_sections"][l]
            if graph.n_edges:
                cons = metrics.consistency_score(s_star, graph.edges, rc.tau)
        layers.append({"layer": l, "pre": pre, "post": post,
                       "pre_total": float(sum(pre)), "post_total": float(sum(post)),
                       "consistency": cons})
    text = corpus.decode(toks).decode("utf-8", errors="replace")
    plain_text = corpus.decode(plain).decode("utf-8", errors="replace")
    result = {
        "prompt": rc.prompt,
        "tokens": toks,
        "text": text,
        "plain_text": plain_text,
        "matches_plain": toks == plain,
        "weights": {"lambda": weights.lam, "eta": weights.eta},
        "checkpoint_step": meta.get("step"),
        "layers": layers,
    }
    out.mkdir(parents=True, exist_ok=True)
    (out / "harmonize.json").write_text(runner.dump_json(result))
    print(text)
    return result


def cmd_ablate(rc, out):
    report, histories = runner.ablate(rc, out_dir=out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "ablation.json").write_text(runner.dump_json(report))
    (out / "ablation.txt").write_text(report["text"])
    print(report["text"], end="")
    return report


COMMANDS = {"analyze": cmd_analyze, "train": cmd_train, "harmonize": cmd_harmonize,
            "ablate": cmd_ablate}


def build_parser():
    # SUPPRESS keeps subparser defaults from clobbering flags given before the subcommand
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", metavar="PATH", help="JSON config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", metavar="DIR")
    common.add_argument("--theta", type=float)
    common.add_argument("--kappa", type=float)
    common.add_argument("--eps", type=float)
    common.add_argument("--lambda", dest="lambda_", type=float)
    common.add_argument("--mu", type=float)
    common.add_argument("--eta", type=float)
    common.add_argument("--tau", type=float)
    common.add_argument("--steps", type=int)
    common.add_argument("--print-default-config", action="store_true",
                        help="print the default JSON config and exit")

    parser = argparse.ArgumentParser(prog="wavephase", parents=[common],
                                     description="Spectral band analysis and harmonic section gluing.")
    sub = parser.add_subparsers(dest="command")
    kw = dict(parents=[common], argument_default=argparse.SUPPRESS)
    p = sub.add_parser("analyze", help="spectrum report for a d x T WPT tensor", **kw)
    p.add_argument("--input", metavar="PATH")
    p = sub.add_parser("train", help="train the byte-level model", **kw)
    p.add_argument("--corpus", metavar="PATH")
    sub.add_parser("ablate", help="train the ablation configurations over seeds", **kw)
    p = sub.add_parser("harmonize", help="harmonised greedy decoding", **kw)
    p.add_argument("--checkpoint", metavar="PATH")
    p.add_argument("--prompt")
    p.add_argument("--max-new", dest="max_new", type=int)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "print_default_config", False):
        sys.stdout.write(config_mod.default_json())
        return 0
    if args.command is None:
        parser.print_help()
        return 2
    flag_keys = {"lambda_": "lambda"}
    overrides = {flag_keys.get(k, k): v for k, v in vars(args).items()
                 if k not in ("command", "config", "print_default_config")}
    try:
        rc = config_mod.load(getattr(args, "config", None), overrides)
        COMMANDS[args.command](rc, Path(rc.out))
    except WavePhaseError as exc:
        print(f"wavephase {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
