"""Experiment orchestration: training, perturbation sweeps and artifacts.

A sweep reproduces the shape of the paper-style result tables: for each
perturbation level, every test scene's LiDAR image is attacked per model,
reconstructed, and scored; rows pair both models with percent deltas.

Output CSV schema (fixed):
    kind, level, cnn_mse, tri_mse, mse_pct_delta, cnn_psnr, tri_psnr, psnr_pct_delta
Leading '#' lines carry run metadata (test scene count, clean baselines).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import attacks, data_io, metrics, models, rng, sensitivity
from .errors import ConfigError, InputError

MODEL_IDS = ("cnn_ae", "trifusion")

DEFAULT_LEVELS = {
    "gaussian": [1.0, 2.0, 5.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0],
    "fgsm": [0.1, 0.5, 1.0, 5.0, 10.0, 20.0, 40.0, 55.0, 60.0, 70.0],
    "pgd": [0.1, 0.5, 1.0, 5.0, 10.0, 20.0, 40.0, 55.0, 60.0, 70.0],
}


@dataclass
class ExperimentRecord:
    model: str
    kind: str
    level: float
    mse: float
    psnr: float


@dataclass
class ExperimentConfig:
    dims: models.ModelConfig = field(default_factory=models.ModelConfig)
    # training
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 4
    epochs: int = 50
    train_enabled: bool = True
    # data
    n_scenes: int = 20
    train_frac: float = 0.8
    data_seed: int = 32
    split_seed: int = 32
    # model / attack seeds
    model_seed: int = 7
    attack_seed: int = 2024
    # sweep
    kind: str = "gaussian"
    levels: list = field(default_factory=lambda: list(DEFAULT_LEVELS["gaussian"]))
    pgd_step: float = 0.01
    pgd_iters: int = 40
    pgd_step_rule: str = "absolute"  # or "scaled": step = 2.5 * eps / iters
    clamp_to_range: bool = False
    # metrics
    metric_cfg: metrics.MetricConfig = field(default_factory=metrics.MetricConfig)
    out_dir: str = "out"

    def validate(self):
        self.dims.validate()
        self.metric_cfg.validate()
        if self.kind not in DEFAULT_LEVELS:
            raise ConfigError(f"unknown sweep kind {self.kind!r}")
        if not self.levels:
            raise InputError("sweep level list is empty")
        if any(b <= a for a, b in zip(self.levels, self.levels[1:])):
            raise ConfigError(f"sweep levels must be strictly increasing: {self.levels}")
        if self.pgd_step_rule not in ("absolute", "scaled"):
            raise ConfigError(f"unknown pgd_step_rule {self.pgd_step_rule!r}")
        if self.n_scenes < 2:
            raise ConfigError("need at least 2 scenes to form a train/test split")
        return self

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        doc = dict(doc)
        cfg = cls()
        if "dims" in doc:
            cfg.dims = models.ModelConfig(**doc.pop("dims"))
        if "metrics" in doc:
            m = doc.pop("metrics")
            cfg.metric_cfg = metrics.MetricConfig(
                psnr_max_mode=m.get("psnr_max_mode", "constant"),
                max_value=m.get("psnr_max_value", m.get("max_value", 255.0)),
            )
        train = doc.pop("train", {})
        for key in ("lr", "beta1", "beta2", "adam_eps", "batch_size", "epochs"):
            if key in train:
                setattr(cfg, key, train[key])
        if "enabled" in train:
            cfg.train_enabled = train["enabled"]
        data = doc.pop("data", {})
        for src, dst in (("n_scenes", "n_scenes"), ("train_frac", "train_frac"),
                         ("seed", "data_seed"), ("split_seed", "split_seed")):
            if src in data:
                setattr(cfg, dst, data[src])
        seeds = doc.pop("seeds", {})
        if "model" in seeds:
            cfg.model_seed = seeds["model"]
        if "attack" in seeds:
            cfg.attack_seed = seeds["attack"]
        sweep = doc.pop("sweep", {})
        if "kind" in sweep:
            cfg.kind = sweep["kind"]
            cfg.levels = list(DEFAULT_LEVELS.get(cfg.kind, []))
        for key in ("pgd_step", "pgd_iters", "pgd_step_rule", "clamp_to_range"):
            if key in sweep:
                setattr(cfg, key, sweep[key])
        if "levels" in sweep:
            cfg.levels = [float(v) for v in sweep["levels"]]
        if "output_dir" in doc:
            cfg.out_dir = doc.pop("output_dir")
        unknown = set(doc)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cfg.validate()


def set_override(doc: dict, dotted: str, raw: str) -> dict:
    """Apply one --set key.path=value override onto a config dict."""
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = doc
    parts = dotted.split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"--set {dotted}: {p!r} is not a section")
    node[parts[-1]] = value
    return doc


def _fmt(v: float) -> str:
    return f"{v:.6f}"


# ---------------------------------------------------------------------------
# training and checkpoints


def checkpoint_path(cfg: ExperimentConfig, model: str) -> str:
    return os.path.join(cfg.out_dir, f"{model}.tnsr")


def make_dataset(cfg: ExperimentConfig):
    scenes = data_io.synth_scenes(cfg.n_scenes, cfg.data_seed, cfg.dims)
    return data_io.split_dataset(scenes, cfg.train_frac, cfg.split_seed)


def train_model(cfg: ExperimentConfig, model: str, train_set=None):
    """Train one model per the config and write its checkpoint."""
    if train_set is None:
        train_set, _ = make_dataset(cfg)
    params, losses = models.train(
        model, train_set, epochs=cfg.epochs, lr=cfg.lr, seed=cfg.model_seed,
        cfg=cfg.dims, batch_size=cfg.batch_size, beta1=cfg.beta1,
        beta2=cfg.beta2, adam_eps=cfg.adam_eps,
    )
    os.makedirs(cfg.out_dir, exist_ok=True)
    data_io.write_tensors(checkpoint_path(cfg, model), dict(models.named_arrays(params)))
    with open(os.path.join(cfg.out_dir, f"{model}_loss.csv"), "w", encoding="utf-8") as fh:
        fh.write("epoch,loss\n")
        for i, v in enumerate(losses):
            fh.write(f"{i},{_fmt(v)}\n")
    return params, losses


def load_model(cfg: ExperimentConfig, model: str):
    if model == "cnn_ae":
        params = models.init_cnn_ae(cfg.dims, cfg.model_seed)
    else:
        params = models.init_trifusion(cfg.dims, cfg.model_seed)
    mapping = data_io.read_tensors(checkpoint_path(cfg, model))
    return models.load_arrays(params, mapping)


def _ensure_params(cfg: ExperimentConfig, train_set):
    out = {}
    for model in MODEL_IDS:
        path = checkpoint_path(cfg, model)
        if os.path.exists(path):
            out[model] = load_model(cfg, model)
        elif cfg.train_enabled:
            out[model], _ = train_model(cfg, model, train_set)
        else:
            raise ConfigError(f"checkpoint {path} missing and training is disabled")
    return out


def _model_fn(model: str, cfg: ExperimentConfig, sample):
    if model == "cnn_ae":
        return lambda p, xt: models.cnn_ae_forward(p, xt)[1]
    return lambda p, xt: models.trifusion_forward(p, sample, cfg.dims, lidar=xt)


def _reconstruct(model: str, cfg: ExperimentConfig, params, sample, x: np.ndarray) -> np.ndarray:
    from .tensor import Tensor

    xt = Tensor(x)
    return _model_fn(model, cfg, sample)(params, xt).data


# ---------------------------------------------------------------------------
# the sweep itself


def _attack_spec(cfg: ExperimentConfig, level: float, level_idx: int, sample_idx: int):
    step = cfg.pgd_step
    if cfg.pgd_step_rule == "scaled" and cfg.pgd_iters > 0:
        step = max(2.5 * level / cfg.pgd_iters, 1e-12)
    seed = rng.derive_seed(cfg.attack_seed, f"sweep:{cfg.kind}", level_idx * 100003 + sample_idx)
    return attacks.PerturbationSpec(
        kind=cfg.kind, level=level, pgd_step=step, pgd_iters=cfg.pgd_iters,
        seed=seed, clamp_to_range=cfg.clamp_to_range,
    )


def _mean_scores(cfg: ExperimentConfig, model: str, params, test_set, level, level_idx):
    mses, psnrs = [], []
    for s_idx, sample in enumerate(test_set):
        clean = sample.lidar
        if level_idx is None:  # clean baseline
            x_in = clean
        else:
            spec = _attack_spec(cfg, level, level_idx, s_idx)
            x_in = attacks.perturb(spec, _model_fn(model, cfg, sample), params, clean, clean)
        recon = _reconstruct(model, cfg, params, sample, x_in)
        m = metrics.mse(recon, clean)
        mses.append(m)
        psnrs.append(metrics.psnr(m, cfg.metric_cfg, batch=clean))
    return float(np.mean(mses)), float(np.mean(psnrs))


def run_sweep(cfg: ExperimentConfig, csv_path: str | None = None):
    """Run the configured sweep; returns (records, clean baselines, csv path)."""
    cfg.validate()
    train_set, test_set = make_dataset(cfg)
    if not test_set:
        raise InputError("test split is empty; increase n_scenes or lower train_frac")
    params = _ensure_params(cfg, train_set)

    clean = {}
    for model in MODEL_IDS:
        clean[model] = _mean_scores(cfg, model, params[model], test_set, 0.0, None)

    records = []
    for level_idx, level in enumerate(cfg.levels):
        for model in MODEL_IDS:
            m, p = _mean_scores(cfg, model, params[model], test_set, level, level_idx)
            records.append(ExperimentRecord(model=model, kind=cfg.kind, level=level, mse=m, psnr=p))

    os.makedirs(cfg.out_dir, exist_ok=True)
    if csv_path is None:
        csv_path = os.path.join(cfg.out_dir, f"sweep_{cfg.kind}.csv")
    write_sweep_csv(csv_path, records, test_scenes=len(test_set), clean=clean)
    write_trend_report(os.path.join(cfg.out_dir, f"trend_{cfg.kind}.csv"), records, clean)
    return records, clean, csv_path


def write_sweep_csv(path, records, test_scenes: int, clean: dict | None = None) -> None:
    by_level: dict = {}
    kind = records[0].kind if records else ""
    for r in records:
        by_level.setdefault(r.level, {})[r.model] = r
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# test_scenes={test_scenes}\n")
        if clean:
            for model in MODEL_IDS:
                if model in clean:
                    fh.write(f"# clean_mse_{model}={_fmt(clean[model][0])}\n")
        fh.write("kind,level,cnn_mse,tri_mse,mse_pct_delta,cnn_psnr,tri_psnr,psnr_pct_delta\n")
        for level in sorted(by_level):
            pair = by_level[level]
            if set(pair) != set(MODEL_IDS):
                raise InputError(f"level {level}: records missing for one model")
            c, t = pair["cnn_ae"], pair["trifusion"]
            fh.write(
                ",".join(
                    [
                        kind,
                        _fmt(level),
                        _fmt(c.mse),
                        _fmt(t.mse),
                        _fmt(metrics.percent_delta(t.mse, c.mse)),
                        _fmt(c.psnr),
                        _fmt(t.psnr),
                        _fmt(metrics.percent_delta(t.psnr, c.psnr)),
                    ]
                )
                + "\n"
            )


def read_sweep_csv(path):
    """Rows of a sweep (or transcribed table) CSV as dicts with floats."""
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        header = None
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if header is None:
                header = line.split(",")
                continue
            parts = line.split(",")
            row = dict(zip(header, parts))
            for key in row:
                if key != "kind" and key != "model":
                    row[key] = float(row[key])
            rows.append(row)
    return rows


def write_trend_report(path, records, clean: dict) -> None:
    """MSE(level)/MSE(clean) per model at the three largest levels.

    The comparison is informational: it documents whether the fusion
    model's degradation ratio stays below the baseline's.
    """
    levels = sorted({r.level for r in records})[-3:]
    by = {(r.model, r.level): r for r in records}
    rows = []
    for level in levels:
        c = by[("cnn_ae", level)].mse / clean["cnn_ae"][0]
        t = by[("trifusion", level)].mse / clean["trifusion"][0]
        rows.append((level, c, t, t < c))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# reconstruction MSE ratio vs clean baseline, three largest levels\n")
        fh.write(f"# clean_mse_cnn_ae={_fmt(clean['cnn_ae'][0])}\n")
        fh.write(f"# clean_mse_trifusion={_fmt(clean['trifusion'][0])}\n")
        fh.write("kind,level,cnn_ratio,tri_ratio,trifusion_ratio_smaller\n")
        kind = records[0].kind
        for level, c, t, smaller in rows:
            fh.write(f"{kind},{_fmt(level)},{_fmt(c)},{_fmt(t)},{str(smaller).lower()}\n")
        overall = all(s for _, _, _, s in rows)
        fh.write(f"# trifusion_smaller_at_all_three={str(overall).lower()}\n")


# ---------------------------------------------------------------------------
# plots


def emit_plot(records, metric: str, path: str) -> str:
    """Line plot (one polyline per model) as pure-text SVG."""
    if metric not in ("mse", "psnr"):
        raise ConfigError(f"metric must be mse or psnr, got {metric!r}")
    records = list(records)
    if not records:
        raise InputError("no records to plot")
    levels = sorted({r.level for r in records})
    if len(levels) < 2:
        raise InputError("need at least 2 levels to draw a trend")
    width, height, margin = 640, 420, 60
    xs = {lv: margin + (width - 2 * margin) * i / (len(levels) - 1) for i, lv in enumerate(levels)}
    vals = [getattr(r, metric) for r in records]
    lo, hi = min(vals), max(vals)
    span = (hi - lo) or 1.0

    def y_of(v):
        return height - margin - (height - 2 * margin) * (v - lo) / span

    colors = {"cnn_ae": "#d62728", "trifusion": "#1f77b4"}
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" y2="{height - margin}" stroke="black"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{height - margin}" stroke="black"/>',
        f'<text x="{width // 2}" y="{height - margin // 4}" text-anchor="middle">perturbation level</text>',
        f'<text x="{margin // 4}" y="{height // 2}" text-anchor="middle" transform="rotate(-90 {margin // 4} {height // 2})">{metric.upper()}</text>',
        f'<text x="{margin}" y="{height - margin + 16}" text-anchor="middle">{levels[0]:g}</text>',
        f'<text x="{width - margin}" y="{height - margin + 16}" text-anchor="middle">{levels[-1]:g}</text>',
        f'<text x="{margin - 6}" y="{height - margin}" text-anchor="end">{lo:.6g}</text>',
        f'<text x="{margin - 6}" y="{margin + 4}" text-anchor="end">{hi:.6g}</text>',
    ]
    for model in MODEL_IDS:
        series = sorted((r.level, getattr(r, metric)) for r in records if r.model == model)
        if not series:
            continue
        pts = " ".join(f"{xs[lv]:.2f},{y_of(v):.2f}" for lv, v in series)
        parts.append(f'<polyline fill="none" stroke="{colors[model]}" stroke-width="2" points="{pts}"/>')
        parts.append(
            f'<text x="{width - margin + 4}" y="{y_of(series[-1][1]):.2f}" fill="{colors[model]}">{model}</text>'
        )
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(parts) + "\n")
    return path


def records_from_rows(rows):
    """Expand paired sweep rows into per-model ExperimentRecords."""
    records = []
    for row in rows:
        records.append(ExperimentRecord("cnn_ae", row["kind"], row["level"], row["cnn_mse"], row["cnn_psnr"]))
        records.append(ExperimentRecord("trifusion", row["kind"], row["level"], row["tri_mse"], row["tri_psnr"]))
    return records


# ---------------------------------------------------------------------------
# sensitivity table


def reproduce_table4(sweep_csv: str, out_path: str | None = None):
    """Fit metric-vs-level slopes per (kind, model) from a sweep CSV.

    Returns rows (kind, model, s_mse, s_psnr); optionally writes them in
    the transcribed-table CSV shape.
    """
    rows = read_sweep_csv(sweep_csv)
    if not rows:
        raise InputError(f"{sweep_csv} has no data rows")
    kinds = []
    for row in rows:
        if row["kind"] not in kinds:
            kinds.append(row["kind"])
    out = []
    for kind in kinds:
        sub = [r for r in rows if r["kind"] == kind]
        for model, mse_col, psnr_col in (
            ("cnn_ae", "cnn_mse", "cnn_psnr"),
            ("trifusion", "tri_mse", "tri_psnr"),
        ):
            s_mse = sensitivity.sensitivity(sensitivity.ols_fit([(r["level"], r[mse_col]) for r in sub]))
            s_psnr = sensitivity.sensitivity(sensitivity.ols_fit([(r["level"], r[psnr_col]) for r in sub]))
            out.append((kind, model, s_mse, s_psnr))
    if out_path is not None:
        with open(out_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("kind,model,s_mse,s_psnr\n")
            for kind, model, s_mse, s_psnr in out:
                fh.write(f"{kind},{model},{_fmt(s_mse)},{_fmt(s_psnr)}\n")
    return out


def table_fixture_path(name: str) -> str:
    """Path of a transcribed result-table CSV shipped with the package."""
    here = os.path.dirname(os.path.abspath(__file__))
    return os.path.join(here, "tables", name)
