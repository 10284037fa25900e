"""Command line entry point: ``bncq <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import budget as bud
from .data import Standardizer, apply_discretizer, mdl_discretize
from .dnn import DnnModel, cnn_arch, fc_arch
from .experiment import (
    DatasetSpec,
    ExperimentConfig,
    emit_report,
    pareto_indices,
    points_from_rows,
    read_results,
    rows_to_csv,
    run_experiment,
    summary_rows,
    tomllib,
)
from .losses import HybridConfig
from .model import BncModel, TanStructure, error_rate, param_count
from .optim import OptimizerConfig
from .quant import BnQuantConfig, DnnQuantConfig
from .structure import SizePenaltyConfig, save_structure, train_structure
from .train import train_bnc, train_dnn


def _ints(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t.strip()]


def _add_data_args(p):
    g = p.add_argument_group("dataset (ignored when --config provides [dataset])")
    g.add_argument("--data", help="dataset file (CSV or IDX images)")
    g.add_argument("--name", default=None)
    g.add_argument("--format", default="csv", choices=["csv", "idx-images"])
    g.add_argument("--label-column", default="-1", help="index or header name")
    g.add_argument("--header", action="store_true")
    g.add_argument("--delimiter", default=",", help="use ' ' for whitespace-separated files")
    g.add_argument("--labels", help="IDX label file")
    g.add_argument("--downscale", type=int, default=1)
    g.add_argument("--image-shape", help="HxW of flattened CSV images, e.g. 16x16")
    g.add_argument("--split", default="holdout", choices=["holdout", "kfold"])
    g.add_argument("--folds", type=int, default=5)
    g.add_argument("--fold", type=int, default=0, help="fold to train/evaluate")


def _add_common(p):
    p.add_argument("--config", help="TOML experiment config")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--paper-scale", action="store_true", help="500 epochs and 100 hybrid draws")


def _dataset_spec(args) -> DatasetSpec:
    if args.config:
        obj = tomllib.loads(Path(args.config).read_text())
        if "dataset" not in obj:
            raise SystemExit("config has no [dataset] table")
        return DatasetSpec(**obj["dataset"])
    if not args.data:
        raise SystemExit("either --data or --config is required")
    lc = args.label_column
    label_column = int(lc) if lc.lstrip("-").isdigit() else lc
    shape = [int(v) for v in args.image_shape.split("x")] if args.image_shape else None
    return DatasetSpec(
        name=args.name or Path(args.data).stem, path=args.data, format=args.format, label_column=label_column,
        header=args.header, delimiter=args.delimiter, labels=args.labels, downscale=args.downscale,
        image_shape=shape, split=args.split, folds=args.folds, split_seed=args.seed or 0,
    )


def _fold(args):
    spec = _dataset_spec(args)
    raw, folds = spec.prepare()
    if not 0 <= args.fold < len(folds):
        raise SystemExit(f"fold {args.fold} out of range (have {len(folds)})")
    return spec, raw, folds[args.fold]


def _epochs(args):
    return 500 if args.paper_scale else args.epochs


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------


def cmd_discretize(args):
    spec = _dataset_spec(args)
    raw = spec.load()
    if args.fit_on == "all":
        disc = mdl_discretize(raw)
    else:
        _, folds = spec.prepare()
        disc = folds[args.fold].discretizer
    out = _outdir(args)
    disc.save(out / "discretizer.json")
    card = disc.cardinalities
    print(json.dumps({"dataset": spec.name, "n": raw.n, "d": raw.d, "classes": raw.num_classes,
                      "mean_cardinality": float(np.mean(card)), "fit_on": args.fit_on}))
    if args.write_data:
        dd = apply_discretizer(disc, raw)
        np.savetxt(out / "discretized.csv", np.column_stack([dd.samples, dd.labels]), fmt="%d", delimiter=",")
    return 0


def cmd_train_bnc(args):
    spec, raw, fold = _fold(args)
    seed = args.seed or 0
    structure = None
    if args.structure:
        obj = json.loads(Path(args.structure).read_text())
        s = obj.get("structure", obj)
        structure = TanStructure(s["parents"], s.get("ordering"))
    quant = None
    if args.bits:
        quant = BnQuantConfig(args.integer_bits, args.bits - args.integer_bits)
    hyb = HybridConfig(args.lambda_hyb, args.gamma_hyb, args.eta_hyb)
    opt = OptimizerConfig(lr0=args.lr0, epochs=_epochs(args), batch_size=args.batch_size)
    model, hist = train_bnc(fold.train, structure, quant, hyb, opt, seed, fold.test, args.eval_every)
    out = _outdir(args)
    model.save(out / "bnc_model.json")
    (out / "history.csv").write_text(hist.to_csv())
    rep = bud.bnc_report(model, quant)
    print(json.dumps({"train_err": hist.train_err[-1], "test_err": hist.test_err[-1], "params": param_count(model),
                      "bits": rep.bits, "ops": rep.ops}))
    return 0


def cmd_learn_structure(args):
    spec, raw, fold = _fold(args)
    hyb = HybridConfig(args.lambda_hyb, args.gamma_hyb, args.eta_hyb)
    opt = OptimizerConfig(lr0=args.lr0, epochs=_epochs(args), batch_size=args.batch_size)
    res = train_structure(fold.train, hyb=hyb, opt=opt, penalty=SizePenaltyConfig(args.lambda_ms, args.tau),
                          seed=args.seed or 0, test=fold.test, max_parents=args.max_parents,
                          eval_every=args.eval_every)
    out = _outdir(args)
    save_structure(res, out / "structure.json")
    res.model.save(out / "bnc_model.json")
    (out / "history.csv").write_text(res.history.to_csv())
    print(json.dumps({"params": param_count(res.model), "naive_bayes": res.structure.is_naive_bayes,
                      "test_err": error_rate(res.model, fold.test.samples, fold.test.labels)}))
    return 0


def cmd_train_dnn(args):
    spec, raw, fold = _fold(args)
    std = Standardizer.fit(fold.train.samples.astype(np.float64))
    xtr, xte = std.transform(fold.train.samples), std.transform(fold.test.samples)
    c = fold.train.num_classes
    if args.conv:
        if raw.image_shape is None:
            raise SystemExit("--conv needs an image dataset (--image-shape or IDX input)")
        xtr = xtr.reshape(len(xtr), 1, *raw.image_shape)
        xte = xte.reshape(len(xte), 1, *raw.image_shape)
        arch = cnn_arch((1, *raw.image_shape), c, _ints(args.conv), activation=args.activation,
                        batchnorm=args.batchnorm)
    else:
        arch = fc_arch(xtr.shape[1], c, _ints(args.hidden or ""), args.activation, args.batchnorm)
    quant = DnnQuantConfig(args.bits) if args.bits else None
    opt = OptimizerConfig(lr0=args.lr0, epochs=_epochs(args), batch_size=args.batch_size)
    model, hist = train_dnn(xtr, fold.train.labels, arch, quant, opt, args.seed or 0, xte, fold.test.labels,
                            args.eval_every)
    out = _outdir(args)
    model.save(out / "dnn_model")
    (out / "history.csv").write_text(hist.to_csv())
    print(json.dumps({"train_err": hist.train_err[-1], "test_err": hist.test_err[-1],
                      "bits": bud.dnn_bits(arch, args.bits or None), "ops": bud.dnn_ops(arch)}))
    return 0


def cmd_budget(args):
    if args.model:
        path = Path(args.model)
        obj = json.loads(path.read_text())
        if "cpts" in obj:
            model = BncModel.from_dict(obj)
            rep = bud.bnc_report(model, model.quant)
        else:
            m = DnnModel.load(path)
            rep = bud.dnn_report(m.arch, None if m.quant is None else m.quant.b)
    elif args.fc:
        dims = _ints(args.fc.replace("-", ","))
        rep = bud.dnn_report(fc_arch(dims[0], dims[-1], dims[1:-1], batchnorm=args.batchnorm), args.bits or None)
    elif args.cnn:
        h, w = (int(v) for v in args.input.split("x"))
        arch = cnn_arch((1, h, w), args.classes, _ints(args.cnn), batchnorm=args.batchnorm)
        rep = bud.dnn_report(arch, args.bits or None)
    elif args.bnc_dims:
        d, c = _ints(args.bnc_dims)
        print(json.dumps({"ops": bud.bnc_ops_for(d, c)}))
        return 0
    else:
        raise SystemExit("give --model, --fc, --cnn or --bnc-dims")
    print(json.dumps({"bits": rep.bits, "ops": rep.ops,
                      "breakdown": [[i.component, i.bits, i.ops] for i in rep.breakdown]}))
    return 0


def cmd_sweep(args):
    if not args.config:
        raise SystemExit("sweep needs --config")
    cfg = ExperimentConfig.from_toml(args.config, seed=args.seed, workers=args.workers)
    if args.paper_scale:
        cfg = cfg.paper_scale()
    out = _outdir(args)
    csv_path = out / f"{cfg.dataset.name}_{cfg.family}.csv"
    rows = run_experiment(cfg, csv_path)
    print(f"{len(rows)} rows -> {csv_path}")
    return 0


def cmd_pareto(args):
    rows = summary_rows(read_results(args.results))
    dims = args.dims.split(",")
    keep = pareto_indices(points_from_rows(rows), dims)
    front = [rows[n] for n in keep]
    out = _outdir(args)
    path = out / "pareto.csv"
    path.write_text(rows_to_csv(front))
    print(f"{len(front)} of {len(rows)} points are Pareto optimal -> {path}")
    return 0


def cmd_report(args):
    rows = []
    for r in args.results:
        rows.extend(read_results(r))
    out = _outdir(args)
    suffix = "svg" if args.kind == "svg-scatter" else "csv"
    path = out / f"report.{suffix}"
    emitted = emit_report(rows, args.kind, path, args.pareto_only, args.x, args.log_x)
    print(f"{len(emitted)} rows -> {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bncq", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("discretize", help="MDL-discretize a dataset and report cardinalities")
    _add_common(p)
    _add_data_args(p)
    p.add_argument("--fit-on", default="train", choices=["train", "all"])
    p.add_argument("--write-data", action="store_true")
    p.set_defaults(func=cmd_discretize)

    def train_args(p):
        _add_common(p)
        _add_data_args(p)
        p.add_argument("--lr0", type=float, default=3e-3)
        p.add_argument("--epochs", type=int, default=100)
        p.add_argument("--batch-size", type=int, default=100)
        p.add_argument("--eval-every", type=int, default=1)

    def hybrid_args(p):
        p.add_argument("--lambda-hyb", type=float, default=0.0)
        p.add_argument("--gamma-hyb", type=float, default=1.0)
        p.add_argument("--eta-hyb", type=float, default=10.0)

    p = sub.add_parser("train-bnc", help="train a (quantized) NB or fixed-structure TAN classifier")
    train_args(p)
    hybrid_args(p)
    p.add_argument("--bits", type=int, default=0, help="B_I + B_F; 0 for float32")
    p.add_argument("--integer-bits", type=int, default=2)
    p.add_argument("--structure", help="structure JSON (default: naive Bayes)")
    p.set_defaults(func=cmd_train_bnc)

    p = sub.add_parser("learn-structure", help="size-aware TAN structure learning")
    train_args(p)
    hybrid_args(p)
    p.add_argument("--lambda-ms", type=float, default=0.0)
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--max-parents", type=int, default=8)
    p.set_defaults(func=cmd_learn_structure)

    p = sub.add_parser("train-dnn", help="train a (quantized) FC network or CNN")
    train_args(p)
    p.add_argument("--hidden", help="comma-separated hidden widths")
    p.add_argument("--conv", help="comma-separated conv channel counts")
    p.add_argument("--activation", default="relu", choices=["relu", "sign", "stochastic-sign", "tanh"])
    p.add_argument("--batchnorm", action="store_true")
    p.add_argument("--bits", type=int, default=0, help="weight bits; 0 for float32")
    p.set_defaults(func=cmd_train_dnn)

    p = sub.add_parser("budget", help="bits and operations of a model or architecture")
    _add_common(p)
    p.add_argument("--model", help="saved bnc_model.json or dnn_model.json")
    p.add_argument("--fc", help="layer widths, e.g. 16-10-26")
    p.add_argument("--cnn", help="conv channels, e.g. 8,16 (with --input and --classes)")
    p.add_argument("--input", default="16x16")
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--bnc-dims", help="D,C")
    p.add_argument("--bits", type=int, default=0)
    p.add_argument("--batchnorm", action="store_true")
    p.set_defaults(func=cmd_budget)

    p = sub.add_parser("sweep", help="run a configured experiment grid")
    _add_common(p)
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("pareto", help="extract Pareto optimal rows from a results CSV")
    _add_common(p)
    p.add_argument("--results", required=True)
    p.add_argument("--dims", default="bits,ops,error")
    p.set_defaults(func=cmd_pareto)

    p = sub.add_parser("report", help="CSV or SVG scatter report from results CSVs")
    _add_common(p)
    p.add_argument("--results", nargs="+", required=True)
    p.add_argument("--kind", default="svg-scatter", choices=["csv", "svg-scatter"])
    p.add_argument("--x", default="bits", choices=["bits", "ops"])
    p.add_argument("--log-x", action="store_true")
    p.add_argument("--pareto-only", action="store_true")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
