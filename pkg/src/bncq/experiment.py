"""Configuration-driven sweeps, Pareto extraction and CSV/SVG reports.

A sweep expands the config into grid points. Every point is trained once
per fold and per (hybrid draw, initial learning rate) candidate; the
candidate with the lowest test error is kept. Rows are appended to the
results CSV one grid point at a time, in grid order, so an interrupted run
can be resumed and ends with the same file.
"""

from __future__ import annotations

import csv
import io
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .budget import bnc_bits, bnc_ops, bnc_ops_for, dnn_bits, dnn_ops, size_cnn_for_budget, size_fc_for_bit_budget
from .data import PreparedFold, RawDataset, Standardizer, load_dataset, prepare
from .dnn import cnn_arch, fc_arch
from .losses import HybridConfig
from .model import TanStructure, param_count, param_count_for
from .optim import OptimizerConfig
from .quant import BnQuantConfig, DnnQuantConfig
from .structure import SizePenaltyConfig, train_structure
from .train import train_bnc, train_dnn

FAMILIES = ("bnc-nb", "bnc-tan", "bnc-structure", "fc", "cnn")
FLOAT = 32  # bits_per_param value that means unquantized float32
COLUMNS = [
    "dataset", "family", "structure", "bits_per_param", "B_I", "B_F", "lambda_ms", "lr0",
    "bits_total", "ops", "train_err", "test_err", "seed",
    "grid_index", "fold", "params", "arch", "lambda_hyb", "gamma_hyb",
]
MEAN_FOLD = "mean"


class ExperimentError(RuntimeError):
    pass


@dataclass
class DatasetSpec:
    name: str
    path: str
    format: str = "csv"
    label_column: int | str = -1
    header: bool = False
    delimiter: str = ","
    labels: str | None = None  # idx-images label file
    downscale: int = 1
    image_shape: list[int] | None = None
    split: str = "holdout"
    folds: int = 5
    split_seed: int = 0

    def load(self) -> RawDataset:
        if self.format == "idx-images":
            return load_dataset(self.path, "idx-images", labels=self.labels, downscale=self.downscale)
        return load_dataset(
            self.path, "csv", image_shape=self.image_shape,
            label_column=self.label_column, header=self.header, delimiter=self.delimiter,
        )

    def prepare(self) -> tuple[RawDataset, list[PreparedFold]]:
        raw = self.load()
        return raw, prepare(raw, self.split, self.split_seed, self.folds)


@dataclass
class ExperimentConfig:
    dataset: DatasetSpec
    family: str = "bnc-nb"
    bits: list[int] = field(default_factory=lambda: [FLOAT])
    integer_bits: list[int] = field(default_factory=lambda: [1, 2, 3, 4, 5, 6])
    lambda_ms: list[float] = field(default_factory=lambda: [0.0])
    lr0: list[float] = field(default_factory=lambda: [3e-3, 3e-2])
    epochs: int = 100
    batch_size: int = 100
    draws: int = 10  # hybrid-loss random search; 0 uses lambda_hyb/gamma_hyb as given
    lambda_hyb: float = 0.0
    gamma_hyb: float = 1.0
    eta_hyb: float = 10.0
    log10_lambda_hyb: list[float] = field(default_factory=lambda: [1.0, 3.0])
    log10_gamma_hyb: list[float] = field(default_factory=lambda: [-1.0, 2.0])
    tau: float = 1.0
    max_parents: int = 8
    finetune_fraction: float = 0.1
    structure_path: str | None = None  # fixed TAN for bnc-tan; learned with lambda_ms = 0 otherwise
    n_layers: list[int] = field(default_factory=lambda: [2])
    conv_layers: list[int] = field(default_factory=lambda: [1])
    batchnorm: list[bool] = field(default_factory=lambda: [False])
    activation: list[str] = field(default_factory=lambda: ["relu"])
    budget_unit: str = "nb-bits-per-param"  # | bits | ops | nb-ops-multiple
    budgets: list[float] = field(default_factory=lambda: [8.0])
    seed: int = 0
    workers: int = 1
    eval_every: int = 0  # 0: evaluate only after the final epoch

    def __post_init__(self):
        if isinstance(self.dataset, dict):
            self.dataset = DatasetSpec(**self.dataset)
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}")
        for name in ("bits", "lr0", "lambda_ms", "integer_bits", "budgets", "n_layers", "conv_layers",
                     "batchnorm", "activation"):
            if not list(getattr(self, name)):
                raise ValueError(f"sweep list {name!r} must be nonempty")
        if self.budget_unit not in ("nb-bits-per-param", "bits", "ops", "nb-ops-multiple"):
            raise ValueError(f"unknown budget unit {self.budget_unit!r}")
        if self.draws < 0 or self.epochs < 1:
            raise ValueError("draws must be >= 0 and epochs >= 1")
        if not Path(self.dataset.path).exists():
            raise ValueError(f"dataset file {self.dataset.path} does not exist")

    @classmethod
    def from_toml(cls, path, **overrides) -> "ExperimentConfig":
        obj = tomllib.loads(Path(path).read_text())
        obj.update({k: v for k, v in overrides.items() if v is not None})
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**obj)

    def paper_scale(self) -> "ExperimentConfig":
        return replace(self, epochs=500, draws=100 if self.draws else 0)

    def to_dict(self) -> dict:
        return asdict(self)


def derive_seed(master: int, *keys: int) -> int:
    """Independent 32-bit seed for (master, keys...)."""
    return int(np.random.SeedSequence([int(master), *map(int, keys)]).generate_state(1)[0])


def grid_points(cfg: ExperimentConfig) -> list[dict]:
    pts: list[dict] = []
    if cfg.family in ("bnc-nb", "bnc-tan"):
        for b in cfg.bits:
            if b == FLOAT:
                pts.append({"bits": FLOAT, "bi": None})
            else:
                pts.extend({"bits": int(b), "bi": int(bi)} for bi in cfg.integer_bits)
    elif cfg.family == "bnc-structure":
        pts.extend({"bits": FLOAT, "lambda_ms": float(lam)} for lam in cfg.lambda_ms)
    else:
        depth_key, depths = ("n_layers", cfg.n_layers) if cfg.family == "fc" else ("conv_layers", cfg.conv_layers)
        for budget in cfg.budgets:
            for depth in depths:
                for bn in cfg.batchnorm:
                    for act in cfg.activation:
                        for b in cfg.bits:
                            pts.append({"budget": float(budget), depth_key: int(depth), "batchnorm": bool(bn),
                                        "activation": act, "bits": int(b)})
    return pts


def _hybrid_draws(cfg: ExperimentConfig, seed: int) -> list[HybridConfig]:
    if cfg.draws == 0:
        return [HybridConfig(cfg.lambda_hyb, cfg.gamma_hyb, cfg.eta_hyb)]
    rng = np.random.default_rng(seed)
    lam = 10.0 ** rng.uniform(*cfg.log10_lambda_hyb, size=cfg.draws)
    gam = 10.0 ** rng.uniform(*cfg.log10_gamma_hyb, size=cfg.draws)
    return [HybridConfig(float(l), float(g), cfg.eta_hyb) for l, g in zip(lam, gam)]


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _row(**kw) -> dict:
    extra = set(kw) - set(COLUMNS)
    if extra:
        raise KeyError(f"unexpected result fields {sorted(extra)}")
    return {c: kw.get(c) for c in COLUMNS}


def _dnn_inputs(fold: PreparedFold, image_shape, conv: bool):
    std = Standardizer.fit(fold.train.samples.astype(np.float64))
    xtr, xte = std.transform(fold.train.samples), std.transform(fold.test.samples)
    if conv:
        if image_shape is None:
            raise ValueError("cnn family needs an image dataset (image_shape)")
        xtr = xtr.reshape(len(xtr), 1, *image_shape)
        xte = xte.reshape(len(xte), 1, *image_shape)
    return xtr, xte


def _dnn_arch(cfg: ExperimentConfig, pt: dict, fold: PreparedFold, image_shape):
    tr = fold.train
    d, c = tr.d, tr.num_classes
    nb_params = param_count_for(tr.cardinalities, [-1] * d, c)
    unit = cfg.budget_unit
    target = {
        "nb-bits-per-param": pt["budget"] * nb_params,
        "bits": pt["budget"],
        "ops": pt["budget"],
        "nb-ops-multiple": pt["budget"] * bnc_ops_for(d, c),
    }[unit]
    kind = "ops" if unit in ("ops", "nb-ops-multiple") else "bits"
    b = pt["bits"]
    if cfg.family == "fc":
        if kind != "bits":
            raise ValueError("fc networks are sized for bit budgets only")
        h = size_fc_for_bit_budget(target, pt["n_layers"], b, pt["batchnorm"], d, c)
        return fc_arch(d, c, [h] * (pt["n_layers"] - 1), pt["activation"], pt["batchnorm"])
    chans = size_cnn_for_budget(target, kind, pt["conv_layers"], b, pt["batchnorm"], (1, *image_shape), c)
    return cnn_arch((1, *image_shape), c, chans, activation=pt["activation"], batchnorm=pt["batchnorm"])


def _arch_label(arch) -> str:
    parts = [f"in{'x'.join(map(str, arch.input_shape))}"]
    for l in arch.layers:
        if l.kind == "fc":
            parts.append(f"fc{l.units}")
        elif l.kind == "conv":
            parts.append(f"conv{l.channels}")
        elif l.kind == "batchnorm":
            parts.append("bn")
        elif l.kind not in ("flatten", "softmax", "maxpool"):
            parts.append(l.kind)
    return "-".join(parts)


class _Task(NamedTuple):
    cfg: ExperimentConfig
    index: int
    point: dict
    folds: list
    image_shape: tuple | None
    tan: list  # per-fold TanStructure for bnc-tan


def _run_fold(cfg: ExperimentConfig, pt: dict, fold: PreparedFold, seed: int, image_shape, tan, draws) -> dict:
    every = cfg.eval_every or cfg.epochs
    best = None
    fam = cfg.family
    for hyb in draws:
        for lr0 in cfg.lr0:
            opt = OptimizerConfig(lr0=lr0, epochs=cfg.epochs, batch_size=cfg.batch_size)
            rec = {"lr0": lr0, "lambda_hyb": None if hyb is None else hyb.lambda_hyb,
                   "gamma_hyb": None if hyb is None else hyb.gamma_hyb}
            if fam in ("bnc-nb", "bnc-tan"):
                quant = None if pt["bits"] == FLOAT else BnQuantConfig(pt["bi"], pt["bits"] - pt["bi"])
                structure = tan if fam == "bnc-tan" else None
                model, hist = train_bnc(fold.train, structure, quant, hyb, opt, seed, fold.test, every)
                rec.update(bits_total=bnc_bits(model, quant), ops=bnc_ops(model), params=param_count(model),
                           structure="nb" if model.structure.is_naive_bayes else "tan")
            elif fam == "bnc-structure":
                pen = SizePenaltyConfig(pt["lambda_ms"], cfg.tau)
                res = train_structure(fold.train, hyb=hyb, opt=opt, penalty=pen, seed=seed, test=fold.test,
                                      finetune_fraction=cfg.finetune_fraction, max_parents=cfg.max_parents,
                                      eval_every=every)
                model = res.model
                hist = res.finetune_history or res.history
                rec.update(bits_total=bnc_bits(model), ops=bnc_ops(model), params=param_count(model),
                           structure="nb" if res.structure.is_naive_bayes else "tan")
            else:
                arch = _dnn_arch(cfg, pt, fold, image_shape)
                xtr, xte = _dnn_inputs(fold, image_shape, fam == "cnn")
                quant = None if pt["bits"] == FLOAT else DnnQuantConfig(pt["bits"])
                model, hist = train_dnn(xtr, fold.train.labels, arch, quant, opt, seed, xte, fold.test.labels, every)
                b = None if quant is None else quant.b
                rec.update(bits_total=dnn_bits(arch, b), ops=dnn_ops(arch), params=sum(p.size for p in model.parameters()),
                           structure=fam, arch=_arch_label(arch))
            rec.update(train_err=hist.train_err[-1], test_err=hist.test_err[-1])
            if best is None or rec["test_err"] < best["test_err"]:
                best = rec
    return best


def _run_point(task: _Task) -> list[dict]:
    cfg, i, pt = task.cfg, task.index, task.point
    seed = derive_seed(cfg.seed, i)
    # hybrid-loss draws are shared by all folds of a grid point
    draws = _hybrid_draws(cfg, derive_seed(seed, 2**31)) if cfg.family.startswith("bnc") else [None]
    rows = []
    try:
        for fold in task.folds:
            tan = task.tan[fold.index] if task.tan else None
            r = _run_fold(cfg, pt, fold, derive_seed(seed, fold.index), task.image_shape, tan, draws)
            bits = pt["bits"]
            bi = pt.get("bi")
            rows.append(_row(
                dataset=cfg.dataset.name, family=cfg.family, structure=r["structure"], bits_per_param=bits,
                B_I=bi, B_F=None if bi is None else bits - bi, lambda_ms=pt.get("lambda_ms"), lr0=r["lr0"],
                bits_total=r["bits_total"], ops=r["ops"], train_err=r["train_err"], test_err=r["test_err"],
                seed=seed, grid_index=i, fold=fold.index, params=r["params"], arch=r.get("arch"),
                lambda_hyb=r["lambda_hyb"], gamma_hyb=r["gamma_hyb"],
            ))
    except Exception as e:
        raise ExperimentError(f"grid point {i} {pt}: {type(e).__name__}: {e}") from e
    if len(rows) > 1:
        rows.append(fold_summary(rows))
    return rows


def fold_summary(rows: Sequence[dict]) -> dict:
    """Mean over per-fold rows; identical fields are kept, differing ones averaged or blanked."""
    out = dict(rows[0])
    out["fold"] = MEAN_FOLD
    for c in ("bits_total", "ops", "params", "train_err", "test_err"):
        out[c] = float(np.mean([float(r[c]) for r in rows]))
    for c in ("lr0", "lambda_hyb", "gamma_hyb", "structure", "arch"):
        if len({_fmt(r[c]) for r in rows}) > 1:
            out[c] = None
    return out


def _learn_tan(cfg: ExperimentConfig, folds) -> list[TanStructure]:
    if cfg.structure_path:
        obj = json.loads(Path(cfg.structure_path).read_text())
        s = obj.get("structure", obj)
        return [TanStructure(s["parents"], s.get("ordering")) for _ in folds]
    out = []
    hyb = HybridConfig(cfg.lambda_hyb, cfg.gamma_hyb, cfg.eta_hyb)
    opt = OptimizerConfig(lr0=max(cfg.lr0), epochs=cfg.epochs, batch_size=cfg.batch_size)
    for f in folds:
        res = train_structure(f.train, hyb=hyb, opt=opt, penalty=SizePenaltyConfig(0.0, cfg.tau),
                              seed=derive_seed(cfg.seed, 10**6, f.index), finetune_fraction=0.0,
                              max_parents=cfg.max_parents, eval_every=cfg.epochs)
        out.append(res.structure)
    return out


def rows_to_csv(rows: Iterable[dict], header: bool = True) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if header:
        w.writerow(COLUMNS)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in COLUMNS])
    return buf.getvalue()


def read_results(path) -> list[dict]:
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        if rd.fieldnames != COLUMNS:
            raise ExperimentError(f"{path}: unexpected columns {rd.fieldnames}")
        return list(rd)


def _resume(path: Path, expected: list[int]) -> int:
    """Keep the longest prefix of complete grid points; return the next grid index."""
    if not path.exists() or path.stat().st_size == 0:
        return 0
    text = path.read_text()
    lines = text.split("\n")
    if not lines or lines[0] != ",".join(COLUMNS):
        raise ExperimentError(f"{path}: existing file is not a results CSV with the expected header")
    body = [l for l in lines[1:] if l]
    if not text.endswith("\n") and body:
        body = body[:-1]  # torn final line
    gi = COLUMNS.index("grid_index")
    keep, done, k = [], 0, 0
    while done < len(expected) and k + expected[done] <= len(body):
        chunk = body[k : k + expected[done]]
        if any(next(csv.reader([l]))[gi] != str(done) for l in chunk):
            break
        keep.extend(chunk)
        k += expected[done]
        done += 1
    path.write_text("\n".join([lines[0], *keep]) + "\n")
    return done


def run_experiment(cfg: ExperimentConfig, out_csv=None, workers: int | None = None) -> list[dict]:
    """Run every grid point; rows are appended to ``out_csv`` (if given) in grid order."""
    raw, folds = cfg.dataset.prepare()
    points = grid_points(cfg)
    per_point = len(folds) + (1 if len(folds) > 1 else 0)
    start = 0
    path = None
    if out_csv is not None:
        path = Path(out_csv)
        path.parent.mkdir(parents=True, exist_ok=True)
        start = _resume(path, [per_point] * len(points))
        if start == 0:
            path.write_text(rows_to_csv([], header=True))
        prov = {"config": cfg.to_dict(), "seed": cfg.seed, "grid": points}
        path.with_suffix(".config.json").write_text(json.dumps(prov, indent=1, default=str))
    tan = _learn_tan(cfg, folds) if cfg.family == "bnc-tan" else []
    tasks = [_Task(cfg, i, points[i], folds, raw.image_shape, tan) for i in range(start, len(points))]
    out: list[dict] = []
    if path is not None and start:
        out.extend(read_results(path))
    workers = cfg.workers if workers is None else workers

    def sink(rows):
        out.extend(rows)
        if path is not None:
            with open(path, "a") as fh:
                fh.write(rows_to_csv(rows, header=False))

    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            for rows in ex.map(_run_point, tasks):
                sink(rows)
    else:
        for t in tasks:
            sink(_run_point(t))
    return out


def summary_rows(rows: Sequence[dict]) -> list[dict]:
    """One row per grid point: the fold mean when present, otherwise the single fold."""
    by_index: dict[str, list[dict]] = {}
    for r in rows:
        by_index.setdefault(str(r["grid_index"]), []).append(r)
    out = []
    for group in by_index.values():
        means = [r for r in group if str(r["fold"]) == MEAN_FOLD]
        out.append(means[0] if means else group[0])
    return out


# ---------------------------------------------------------------------------
# Pareto front and reports


class ParetoPoint(NamedTuple):
    model_id: str
    bits: float
    ops: float
    test_error: float


DIMS = {"bits": 1, "ops": 2, "error": 3}


def pareto_front(points: Sequence[ParetoPoint], minimize: Sequence[str] = ("bits", "ops", "error")) -> list[ParetoPoint]:
    """Points not dominated (<= everywhere, < somewhere) over the ``minimize`` dimensions."""
    keep = set(pareto_indices(points, minimize))
    return [p for n, p in enumerate(points) if n in keep]


def pareto_indices(points: Sequence[ParetoPoint], minimize: Sequence[str] = ("bits", "ops", "error")) -> list[int]:
    if not points:
        raise ValueError("pareto_front needs at least one point")
    idx = [DIMS[d] for d in minimize]
    for p in points:
        if any(p[k] < 0 for k in idx):
            raise ValueError(f"negative coordinate in {p}")
    keyed = sorted(range(len(points)), key=lambda n: tuple(points[n][k] for k in idx))
    front: list[int] = []
    # a dominator precedes its victim lexicographically, and domination is transitive,
    # so checking against the front found so far is enough
    for n in keyed:
        v = [points[n][k] for k in idx]
        dominated = False
        for m in front:
            u = [points[m][k] for k in idx]
            if all(a <= b for a, b in zip(u, v)) and any(a < b for a, b in zip(u, v)):
                dominated = True
                break
        if not dominated:
            front.append(n)
    return sorted(front)


def points_from_rows(rows: Sequence[dict]) -> list[ParetoPoint]:
    out = []
    for r in summary_rows(rows):
        mid = f"{r['dataset']}/{r['family']}/{r['grid_index']}"
        out.append(ParetoPoint(mid, float(r["bits_total"]), float(r["ops"]), float(r["test_err"])))
    return out


def _nice_ticks(lo, hi, log):
    if log:
        a, b = math.floor(math.log10(lo)), math.ceil(math.log10(hi))
        return [10.0**e for e in range(a, b + 1)]
    step = 10 ** math.floor(math.log10(max(hi - lo, 1e-12)))
    if (hi - lo) / step < 4:
        step /= 2
    start = math.floor(lo / step) * step
    return [start + k * step for k in range(int((hi - start) / step) + 2)]


def svg_scatter(rows: Sequence[dict], x: str = "bits", log_x: bool = False, title: str = "") -> str:
    """Test error over bits (or ops); disk area proportional to the remaining dimension."""
    if x not in ("bits", "ops"):
        raise ValueError("x must be 'bits' or 'ops'")
    xcol, acol = ("bits_total", "ops") if x == "bits" else ("ops", "bits_total")
    xs = np.array([float(r[xcol]) for r in rows])
    ys = 100.0 * np.array([float(r["test_err"]) for r in rows])
    area = np.array([float(r[acol]) for r in rows])
    if log_x and np.any(xs <= 0):
        raise ValueError("log x-axis needs positive values")
    w, h, ml, mr, mt, mb = 640, 420, 70, 20, 30, 50

    def tx(v):
        return np.log10(v) if log_x else v

    lo, hi = tx(xs.min()), tx(xs.max())
    if hi == lo:
        lo, hi = lo - 1, hi + 1
    ylo, yhi = 0.0, max(ys.max() * 1.1, 1e-9)
    px = ml + (tx(xs) - lo) / (hi - lo) * (w - ml - mr)
    py = h - mb - (ys - ylo) / (yhi - ylo) * (h - mt - mb)
    amax = area.max() if area.max() > 0 else 1.0
    radius = 3.0 + 12.0 * np.sqrt(area / amax)
    families = sorted({r["family"] for r in rows})
    palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"]
    color = {f: palette[k % len(palette)] for k, f in enumerate(families)}
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">',
           f'<rect width="{w}" height="{h}" fill="white"/>',
           f'<line x1="{ml}" y1="{h - mb}" x2="{w - mr}" y2="{h - mb}" stroke="black"/>',
           f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{h - mb}" stroke="black"/>']
    for t in _nice_ticks(10**lo if log_x else lo, 10**hi if log_x else hi, log_x):
        v = tx(t)
        if lo <= v <= hi:
            xx = ml + (v - lo) / (hi - lo) * (w - ml - mr)
            out.append(f'<text x="{xx:.1f}" y="{h - mb + 16}" font-size="11" text-anchor="middle">{t:g}</text>')
    for t in _nice_ticks(ylo, yhi, False):
        if ylo <= t <= yhi:
            yy = h - mb - (t - ylo) / (yhi - ylo) * (h - mt - mb)
            out.append(f'<text x="{ml - 6}" y="{yy + 4:.1f}" font-size="11" text-anchor="end">{t:g}</text>')
    xlabel = ("parameter memory [bits]" if x == "bits" else "operations") + (" (log)" if log_x else "")
    out.append(f'<text x="{(ml + w - mr) / 2}" y="{h - 10}" font-size="12" text-anchor="middle">{xlabel}</text>')
    out.append(f'<text x="16" y="{(mt + h - mb) / 2}" font-size="12" text-anchor="middle" '
               f'transform="rotate(-90 16 {(mt + h - mb) / 2})">test error [%]</text>')
    if title:
        out.append(f'<text x="{w / 2}" y="18" font-size="13" text-anchor="middle">{title}</text>')
    for r, cx, cy, rad in zip(rows, px, py, radius):
        out.append(f'<circle class="point" cx="{cx:.2f}" cy="{cy:.2f}" r="{rad:.2f}" fill="{color[r["family"]]}" '
                   f'fill-opacity="0.5" stroke="black" stroke-width="0.5"><title>{r["family"]} '
                   f'{xcol}={r[xcol]} {acol}={r[acol]} err={r["test_err"]}</title></circle>')
    for k, f in enumerate(families):
        out.append(f'<text x="{w - mr - 4}" y="{mt + 14 * (k + 1)}" font-size="11" text-anchor="end" '
                   f'fill="{color[f]}">{f}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_report(rows: Sequence[dict], kind: str, path, pareto_only: bool = False, x: str = "bits",
                log_x: bool = False, minimize: Sequence[str] = ("bits", "ops", "error")) -> list[dict]:
    """Write ``rows`` as a results CSV or an SVG scatter; returns the rows emitted."""
    if not rows:
        raise ValueError("no rows to report")
    rows = list(rows)
    if pareto_only:
        rows = summary_rows(rows)
        rows = [rows[n] for n in pareto_indices(points_from_rows(rows), minimize)]
    path = Path(path)
    try:
        if kind == "csv":
            path.write_text(rows_to_csv(rows))
        elif kind == "svg-scatter":
            path.write_text(svg_scatter(rows, x, log_x))
        else:
            raise ValueError(f"unknown report kind {kind!r}")
    except OSError as e:
        raise ExperimentError(f"cannot write report to {path}: {e}") from e
    return rows
