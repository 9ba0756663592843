"""Command-line entry point: ``fxfusion <command> [--config FILE] [--out DIR] [--seed N]``.

Settings are layered: built-in defaults, then the JSON config file, then
command-line flags. Output goes to ``--out``, else ``$FXFUSION_OUT``, else
``./fxfusion-out``. File names carry the seed and a hash of the effective
configuration (file locations excluded), so reruns overwrite identical files.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, evaluation, featsel, ingest, net, tuner
from .pipeline import Pipeline, PipelineError, RunConfig, tuning_objective
from .synth import SynthSpec, write_workspace

log = logging.getLogger("fxfusion")

DEFAULT_OUT = "fxfusion-out"


class CliError(RuntimeError):
    pass


def _int_list(text: str) -> list[int]:
    """``"1,2,5-8"`` -> [1, 2, 5, 6, 7, 8]."""
    out = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part:
            a, b = part.split("-", 1)
            out.extend(range(int(a), int(b) + 1))
        elif part:
            out.append(int(part))
    return out


def load_config(args) -> RunConfig:
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise CliError(f"config file {path} not found")
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise CliError(f"config file {path} is not valid JSON: {exc}") from exc
        cfg = RunConfig.from_dict(doc, base=path.parent)
    else:
        cfg = RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    for key, section, field_name in OVERRIDES:
        value = getattr(args, key, None)
        if value is not None:
            if section is None:
                setattr(cfg, field_name, value)
            else:
                getattr(cfg, section)[field_name] = value
    return cfg


# (argparse dest, config section or None, field)
OVERRIDES = [
    ("p_max", "lags", "p_max"),
    ("sample_size", "lags", "sample_size"),
    ("keep", "rfe", "keep"),
    ("window", "model", "window"),
    ("epochs", "model", "epochs"),
    ("trials", "tune", "n_trials"),
    ("families", None, "families"),
    ("edge_policy", None, "edge_policy"),
]


def out_dir(args) -> Path:
    out = Path(args.out or os.environ.get("FXFUSION_OUT") or DEFAULT_OUT)
    out.mkdir(parents=True, exist_ok=True)
    return out


def stem(name: str, cfg: RunConfig, exclude=()) -> str:
    return f"{name}_s{cfg.seed}_{cfg.digest(exclude)}"


# the tuned configuration is looked up by `train`, whose model and tuning
# settings may differ from the ones `tune` ran with
TUNED_EXCLUDE = ("model", "tune")


def _pipeline(cfg: RunConfig) -> Pipeline:
    try:
        return Pipeline(cfg)
    except PipelineError as exc:
        raise CliError(str(exc)) from exc


def cmd_simgen(args, cfg: RunConfig, out: Path) -> Path:
    synth = {**cfg.synth}
    if args.rho is not None:
        synth["rho"] = args.rho
    if args.days is not None:
        synth["n_days"] = args.days
    synth["seed"] = cfg.seed
    spec = SynthSpec.from_dict(synth)
    ws = write_workspace(spec, out)
    base = out.resolve()
    doc = {
        "series": {k: str(Path(v).resolve().relative_to(base)) for k, v in ws["series"].items()},
        "texts": str(Path(ws["texts"]).resolve().relative_to(base)),
        "target": ws["target"],
        "seed": cfg.seed,
        "synth": spec.to_dict(),
    }
    ingest.write_json(ws["truth"], out / "truth.json")
    return ingest.write_json(doc, out / "config.json")


def cmd_ingest(args, cfg, out) -> Path:
    pipe = _pipeline(cfg)
    ingest.write_json(ingest.frame_to_dict(pipe.frame), out / f"{stem('frame', cfg)}.json")
    return ingest.frame_to_csv(pipe.frame, out / f"{stem('frame', cfg)}.csv")


def cmd_features(args, cfg, out) -> Path:
    pipe = _pipeline(cfg)
    if pipe.textual is None:
        raise CliError("config names no text corpus")
    K, curve = pipe.topic_scan
    model = pipe.topic_model
    doc = {
        "k_star": K,
        "coherence": {str(k): v for k, v in curve.items()},
        "top_words": {str(k): model.top_words(k, cfg.lda["top_n"]) for k in range(1, K + 1)},
        "assignment_counts": {str(k): int(np.sum(model.assignment == k)) for k in range(1, K + 1)},
    }
    ingest.write_json(doc, out / f"{stem('topics', cfg)}.json")
    evaluation.write_table(out / f"{stem('coherence', cfg)}.csv", ["k", "coherence"],
                           [[k, repr(v)] for k, v in curve.items()])
    ingest.frame_to_csv(pipe.combined, out / f"{stem('combined', cfg)}.csv")
    return ingest.frame_to_csv(pipe.textual, out / f"{stem('textual', cfg)}.csv")


def cmd_lags(args, cfg, out) -> Path:
    pipe = _pipeline(cfg)
    table = pipe.lag_table
    rows = [[f, p, repr(v)] for f, curve in table.curves.items() for p, v in curve.items()]
    evaluation.write_table(out / f"{stem('aic_curves', cfg)}.csv", ["feature", "p", "aic"], rows)
    return ingest.write_json(table.to_dict(), out / f"{stem('lags', cfg)}.json")


def cmd_rfe(args, cfg, out) -> Path:
    pipe = _pipeline(cfg)
    ranking = pipe.ranking
    evaluation.write_table(out / f"{stem('ranking', cfg)}.csv", ["feature", "importance", "round"],
                           [[e.feature, repr(e.importance), e.round] for e in ranking.entries])
    return ingest.write_json(ranking.to_dict(), out / f"{stem('ranking', cfg)}.json")


def _tuned_overrides(out: Path, cfg: RunConfig) -> dict:
    path = out / f"{stem('best_config', cfg, TUNED_EXCLUDE)}.json"
    if not path.exists():
        raise CliError(f"no tuned configuration at {path}; run `tune` first")
    return json.loads(path.read_text(encoding="utf-8"))["config"]


def cmd_train(args, cfg, out) -> Path:
    pipe = _pipeline(cfg)
    overrides = _tuned_overrides(out, cfg) if args.tuned else {}
    model = cfg.model_config(**overrides)
    fitted = pipe.fit(pipe.inputs(), model)
    evaluation.write_table(out / f"{stem('history', cfg)}.csv", ["epoch", "train_loss", "val_loss"],
                           [[h["epoch"], repr(h["train_loss"]), "" if h["val_loss"] is None else repr(h["val_loss"])]
                            for h in fitted.result.history])
    doc = net.checkpoint(fitted.result.params, model, fitted.inputs, cfg.target, fitted.bounds)
    return ingest.write_json(doc, out / f"{stem('model', cfg)}.json")


def cmd_tune(args, cfg, out) -> Path:
    pipe = _pipeline(cfg)
    t = cfg.tune
    journal = out / f"{stem('journal', cfg)}.jsonl"
    journal.unlink(missing_ok=True)
    pruner = tuner.PrunerSettings(int(t["n_startup"]), int(t["n_warmup"]))
    study = tuner.optimize(tuning_objective(pipe, t.get("epochs")), int(t["n_trials"]), cfg.seed,
                           pruner=pruner, journal=journal)
    ingest.write_json(study.to_dict(), out / f"{stem('study', cfg)}.json")
    evaluation.write_table(out / f"{stem('trials', cfg)}.csv", tuner.TRIAL_TABLE_HEADER, study.table())
    best = study.best_trial
    if best is None:
        raise CliError("no trial completed; nothing to report as best")
    return ingest.write_json({"trial": best.number, "value": best.value, "config": best.config},
                             out / f"{stem('best_config', cfg, TUNED_EXCLUDE)}.json")


def cmd_evaluate(args, cfg, out) -> Path:
    pipe = _pipeline(cfg)
    path = Path(args.checkpoint) if args.checkpoint else out / f"{stem('model', cfg)}.json"
    if not path.exists():
        raise CliError(f"no model checkpoint at {path}; run `train` first")
    params, model, inputs, _, _ = net.load_checkpoint(json.loads(path.read_text(encoding="utf-8")))
    report = pipe.evaluate_params(params, model, inputs, "bilstm")
    persistence = pipe.persistence(model.window)
    forest = pipe.forest_baseline(inputs, model.window, int(cfg.rfe["n_trees"]))
    reports = {"bilstm": report, "persistence": persistence, "random_forest": forest}
    report.compare(persistence)
    forest.compare(persistence)
    for label, rep in reports.items():
        rep.write(out, stem(f"report_{label}", cfg))
    dm = evaluation.dm_matrix({k: r.errors for k, r in reports.items()})
    evaluation.write_table(out / f"{stem('dm', cfg)}.csv", ["a", "b", "statistic", "p_value", "loss", "h",
                                                              "degenerate"],
                           [[r["a"], r["b"], "" if r["statistic"] is None else repr(r["statistic"]),
                             "" if r["p_value"] is None else repr(r["p_value"]), r["loss"], r["h"], r["degenerate"]]
                            for r in dm])
    summary = {k: r.summary() for k, r in reports.items()}
    summary["dm"] = dm
    summary["order_by_mae"] = sorted(reports, key=lambda k: reports[k].mae)
    summary["order_by_rmse"] = sorted(reports, key=lambda k: reports[k].rmse)
    return evaluation.write_json(summary, out / f"{stem('evaluation', cfg)}.json")


def cmd_ablate(args, cfg, out) -> Path:
    pipe = _pipeline(cfg)
    model = cfg.model_config()

    def run(families):
        rep = pipe.fit(pipe.inputs(families), model, "ablation").report
        return rep.mae, rep.rmse

    cells = evaluation.ablation_run(run)
    return evaluation.write_table(out / f"{stem('ablation', cfg)}.csv", evaluation.ABLATION_HEADER,
                                  evaluation.ablation_rows(cells))


def cmd_sweep_window(args, cfg, out) -> Path:
    pipe = _pipeline(cfg)
    sizes = _int_list(args.sizes) if args.sizes else list(evaluation.WINDOW_SIZES)
    inputs = pipe.inputs()

    def run(w):
        rep = pipe.fit(inputs, cfg.model_config(window=w), "window").report
        return rep.mae, rep.rmse

    rows = evaluation.window_sweep(sizes, run)
    return evaluation.write_table(out / f"{stem('window_sweep', cfg)}.csv", ["window", "mae", "rmse"],
                                  [[r["value"], repr(r["mae"]), repr(r["rmse"])] for r in rows])


def cmd_sweep_rfe(args, cfg, out) -> Path:
    pipe = _pipeline(cfg)
    n = len(pipe.quantitative)
    counts = _int_list(args.counts) if args.counts else list(range(1, n + 1))
    model = cfg.model_config()

    def run(k):
        rep = pipe.fit(pipe.full_ranking.top(k) + pipe.text_inputs(), model, "rfe").report
        return rep.mae, rep.rmse

    rows = evaluation.rfe_sweep(counts, n, run)
    return evaluation.write_table(out / f"{stem('rfe_sweep', cfg)}.csv", ["features", "mae", "rmse"],
                                  [[r["value"], repr(r["mae"]), repr(r["rmse"])] for r in rows])


COMMANDS = {
    "ingest": cmd_ingest,
    "features": cmd_features,
    "lags": cmd_lags,
    "rfe": cmd_rfe,
    "train": cmd_train,
    "tune": cmd_tune,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "sweep-window": cmd_sweep_window,
    "sweep-rfe": cmd_sweep_rfe,
    "simgen": cmd_simgen,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--out", help="output directory (default: $FXFUSION_OUT or ./fxfusion-out)")
    common.add_argument("--seed", type=int, help="seed for every random component")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="fxfusion", description="Exchange-rate forecasting with text fusion")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("ingest", parents=[common], help="align series onto the target calendar").add_argument(
        "--edge-policy", choices=ingest.EDGE_POLICIES, dest="edge_policy")
    sub.add_parser("features", parents=[common], help="topic scan and daily textual features")
    p = sub.add_parser("lags", parents=[common], help="per-feature VAR lag selection")
    p.add_argument("--p-max", type=int, dest="p_max")
    p.add_argument("--sample-size", choices=("raw", "effective"), dest="sample_size")
    sub.add_parser("rfe", parents=[common], help="recursive feature elimination").add_argument("--keep", type=int)
    p = sub.add_parser("train", parents=[common], help="train the Bi-LSTM and write a checkpoint")
    p.add_argument("--window", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--tuned", action="store_true", help="use the best configuration written by `tune`")
    p.add_argument("--families", type=lambda s: [f for f in s.split(",") if f], help="e.g. A,B,C,D")
    sub.add_parser("tune", parents=[common], help="hyperparameter search").add_argument("--trials", type=int)
    sub.add_parser("evaluate", parents=[common], help="test-set reports and DM tests").add_argument(
        "--checkpoint", help="model checkpoint (default: the one `train` wrote)")
    sub.add_parser("ablate", parents=[common], help="16-cell textual-family ablation")
    sub.add_parser("sweep-window", parents=[common], help="MAE/RMSE per window size").add_argument(
        "--sizes", help="e.g. 1-24,30,40")
    sub.add_parser("sweep-rfe", parents=[common], help="MAE/RMSE per kept feature count").add_argument(
        "--counts", help="e.g. 1-20")
    p = sub.add_parser("simgen", parents=[common], help="write a synthetic workspace and its config")
    p.add_argument("--rho", type=float)
    p.add_argument("--days", type=int)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
        out = out_dir(args)
        path = COMMANDS[args.command](args, cfg, out)
    except (CliError, PipelineError, ingest.IngestError, featsel.FeatureSelectionError, net.NetError,
            tuner.TunerError, evaluation.EvaluationError, ValueError, OSError) as exc:
        print(f"fxfusion {args.command}: error: {exc}", file=sys.stderr)
        return 1
    print(f"{args.command}: wrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
