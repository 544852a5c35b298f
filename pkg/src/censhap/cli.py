"""Command line pipeline: fit the base model, fit the surrogate, run analyses.

Configuration lives in one TOML file; every analysis knob can be overridden
on the command line. All outputs (JSON, CSV, SVG) are pure functions of the
config and input files: no timestamps, fixed key order, fixed float
formatting. Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric
failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import cen as cen_mod
from . import explain, synth, svg
from .data import Coalition, Dataset, FeatureSchema, FeatureSpec, load_csv
from .errors import CenShapError, ConfigError, DataError, NumericError
from .nn import Network, NetworkConfig, TrainConfig, load, save, train

# ---------------------------------------------------------------------------
# configuration

def _schema_from_config(doc: dict) -> FeatureSchema:
    try:
        features = []
        for f in doc["features"]:
            kind = f.get("kind", "continuous")
            if kind == "continuous":
                features.append(FeatureSpec(f["name"]))
            elif kind == "categorical":
                features.append(FeatureSpec(f["name"], tuple(f["levels"])))
            else:
                raise ConfigError(f"feature {f.get('name')!r}: unknown kind {kind!r}")
        return FeatureSchema(tuple(features), doc["response"], doc.get("exposure"))
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"invalid [schema] section: {exc}") from None


class RunConfig:
    def __init__(self, doc: dict, base_dir: Path):
        if "schema" not in doc or "paths" not in doc:
            raise ConfigError("config needs [schema] and [paths] sections")
        self.schema = _schema_from_config(doc["schema"])
        paths = doc["paths"]
        if "train_csv" not in paths:
            raise ConfigError("[paths] needs train_csv")
        self.train_csv = base_dir / paths["train_csv"]
        self.test_csv = base_dir / paths["test_csv"] if "test_csv" in paths else None
        self.model_dir = base_dir / paths.get("model_dir", "models")
        self.output_dir = base_dir / paths.get("output_dir", "out")
        self.nn = dict(doc.get("nn", {}))
        self.cen = dict(doc.get("cen", {}))
        self.analysis = dict(doc.get("analysis", {}))

    @property
    def base_path(self) -> Path:
        return self.model_dir / "base.json"

    @property
    def cen_path(self) -> Path:
        return self.model_dir / "cen.json"

    def network_config(self) -> NetworkConfig:
        return NetworkConfig(
            n_continuous=len(self.schema.continuous_positions),
            cat_levels=self.schema.categorical_level_counts,
            hidden=tuple(self.nn.get("hidden", (20, 15, 10))),
            output=self.nn.get("output", "exp"),
            embedding_dim=int(self.nn.get("embedding_dim", 2)),
            extra_level=False,
        )

    def base_train_config(self) -> TrainConfig:
        return TrainConfig(
            loss=self.nn.get("loss", "poisson"),
            learning_rate=float(self.nn.get("learning_rate", 1e-3)),
            batch_size=int(self.nn.get("batch_size", 128)),
            max_epochs=int(self.nn.get("max_epochs", 200)),
            patience=int(self.nn.get("patience", 10)),
            validation_fraction=float(self.nn.get("validation_fraction", 0.1)),
            rng_seed=int(self.nn.get("seed", 1)),
        )

    def cen_train_config(self) -> TrainConfig:
        pick = lambda key, fallback: self.cen.get(key, self.nn.get(key, fallback))
        return TrainConfig(
            loss="squared",
            learning_rate=float(pick("learning_rate", 1e-3)),
            batch_size=int(pick("batch_size", 128)),
            max_epochs=int(pick("max_epochs", 200)),
            patience=int(pick("patience", 10)),
            validation_fraction=float(pick("validation_fraction", 0.1)),
            rng_seed=int(self.cen.get("seed", 2)),
        )


def load_config(path: str) -> RunConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(p, "rb") as fh:
            doc = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: invalid TOML: {exc}") from None
    return RunConfig(doc, p.parent)


# ---------------------------------------------------------------------------
# io helpers

def _write_json(path: Path, obj):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _write_csv(path: Path, header: list[str], rows: list[list]):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            # plain-float repr round-trips exactly and is stable across runs
            writer.writerow([repr(float(v)) if isinstance(v, float) else v for v in row])


def _write_text(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _x100(v: float) -> float:
    return round(100.0 * v, 3)


def _load_train_test(cfg: RunConfig) -> tuple[Dataset, Dataset]:
    train_ds = load_csv(cfg.train_csv, cfg.schema)
    if cfg.test_csv is not None:
        test_ds = load_csv(cfg.test_csv, cfg.schema, stats=train_ds.stats)
    else:
        test_ds = train_ds
    return train_ds, test_ds


def _null_prediction(data: Dataset, loss: str) -> float:
    if loss == "poisson":
        return float(data.response.sum() / data.exposure.sum())
    return float(data.response.mean())


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise DataError(f"{what} not found: {path} (run the fitting step first)")
    return path


def _load_base(cfg: RunConfig) -> tuple[Network, dict]:
    return load(_require(cfg.base_path, "base model"))


def _load_cen(cfg: RunConfig) -> tuple[cen_mod.CenModel, dict]:
    return cen_mod.load_cen(_require(cfg.cen_path, "surrogate model"))


# ---------------------------------------------------------------------------
# commands

def cmd_fit_base(cfg: RunConfig) -> int:
    train_ds, test_ds = _load_train_test(cfg)
    tcfg = cfg.base_train_config()
    net = Network.init(cfg.network_config(), seed=tcfg.rng_seed)
    fitted, log_out = train(net, train_ds, tcfg)

    loss = tcfg.loss
    null_pred = _null_prediction(train_ds, loss)
    metrics = {"loss": loss, "epochs": log_out.epochs, "best_epoch": log_out.best_epoch}
    for tag, ds in (("in_sample", train_ds), ("out_of_sample", test_ds)):
        preds = fitted.predict_dataset(ds)
        metrics[tag] = {
            "null_x100": _x100(cen_mod.data_losses(np.full(ds.n, null_pred), ds, loss)),
            "model_x100": _x100(cen_mod.data_losses(preds, ds, loss)),
        }
    cfg.model_dir.mkdir(parents=True, exist_ok=True)
    save(fitted, cfg.base_path, meta={
        "schema_fingerprint": cfg.schema.fingerprint(),
        "cont_mean": list(map(float, train_ds.cont_mean)),
        "cont_std": list(map(float, train_ds.cont_std)),
        "null_prediction": null_pred,
        "train_loss_kind": loss,
    })
    _write_json(cfg.output_dir / "fit_base_metrics.json", metrics)
    print(f"base model -> {cfg.base_path}")
    for tag in ("in_sample", "out_of_sample"):
        print(f"  {tag}: null {metrics[tag]['null_x100']:.3f}  "
              f"model {metrics[tag]['model_x100']:.3f}  (avg loss x 100)")
    return 0


def cmd_fit_cen(cfg: RunConfig) -> int:
    base, base_meta = _load_base(cfg)
    if base_meta.get("schema_fingerprint") not in (None, cfg.schema.fingerprint()):
        raise ConfigError("schema in config does not match the fitted base model")
    train_ds, test_ds = _load_train_test(cfg)
    tcfg = cfg.cen_train_config()
    model, report = cen_mod.fit_cen(
        base,
        train_ds,
        tcfg,
        rng_seed=tcfg.rng_seed,
        delta=float(cfg.cen.get("delta", 0.001)),
        resample_per_epoch=bool(cfg.cen.get("resample_per_epoch", False)),
        base_fingerprint=base_meta.get("schema_fingerprint", ""),
    )
    cen_mod.save_cen(model, cfg.cen_path, meta={"schema_fingerprint": cfg.schema.fingerprint()})

    kind = report.data_loss_kind
    calibration = {
        "loss": kind,
        "mu0": report.mu0,
        "full_replication_mse": report.full_replication_mse,
        "null_replication_mse": report.null_replication_mse,
    }
    sur_null = model.null_value()
    for tag, ds in (("in_sample", train_ds), ("out_of_sample", test_ds)):
        base_preds = base.predict_dataset(ds)
        sur_full = model.query_batch(ds.continuous, ds.categorical, Coalition.full(cfg.schema.q))
        calibration[tag] = {
            "null_x100": _x100(cen_mod.data_losses(np.full(ds.n, report.mu0), ds, kind)),
            "full_x100": _x100(cen_mod.data_losses(base_preds, ds, kind)),
            "surrogate_null_x100": _x100(cen_mod.data_losses(np.full(ds.n, sur_null), ds, kind)),
            "surrogate_full_x100": _x100(cen_mod.data_losses(sur_full, ds, kind)),
        }
    _write_json(cfg.output_dir / "fit_cen_calibration.json", calibration)

    tri = cen_mod.build_triplicated(base, train_ds, model.mask, tcfg.rng_seed)
    preds = model.surrogate.predict(tri.x_cont, tri.x_cat)
    _write_csv(
        cfg.output_dir / "cen_scatter.csv",
        ["block", "target", "prediction"],
        [[blk, float(t), float(p)] for blk, t, p in zip(tri.block, tri.target, preds)],
    )
    groups = [
        (blk, tri.target[tri.block == blk], preds[tri.block == blk])
        for blk in ("full", "null", "masked")
    ]
    _write_text(
        cfg.output_dir / "cen_scatter.svg",
        svg.scatter(groups, title="surrogate replication", x_label="target",
                    y_label="surrogate prediction"),
    )
    print(f"surrogate -> {cfg.cen_path}")
    print(f"  mu0 {report.mu0:.6g}; replication mse full {report.full_replication_mse:.3g}, "
          f"null {report.null_replication_mse:.3g}")
    return 0


def _analysis_dataset(cfg: RunConfig) -> tuple[Dataset, Dataset]:
    train_ds, test_ds = _load_train_test(cfg)
    return train_ds, test_ds


def _report_files(cfg: RunConfig, name: str, report: explain.ImportanceReport, extra: dict | None = None):
    doc = {
        "kind": report.kind,
        "denominator": report.denominator,
        "entries": {k: v for k, v in report.entries.items()},
    }
    if report.order is not None:
        doc["order"] = report.order
    if report.total is not None:
        doc["total"] = report.total
    doc.update(extra or {})
    _write_json(cfg.output_dir / f"{name}.json", doc)


def cmd_drop1(cfg: RunConfig) -> int:
    base, _ = _load_base(cfg)
    model, _ = _load_cen(cfg)
    _, test_ds = _analysis_dataset(cfg)
    report = explain.drop1(model, base, test_ds)
    rows = sorted(report.entries.items(), key=lambda kv: -abs(kv[1]))
    _write_csv(cfg.output_dir / "drop1.csv", ["feature", "drop1"],
               [[k, float(v)] for k, v in rows])
    _report_files(cfg, "drop1", report)
    _write_text(cfg.output_dir / "drop1.svg",
                svg.bar_chart(rows, "drop1: relative loss increase", "relative increase"))
    for k, v in rows:
        print(f"  drop1[{k}] = {100 * v:.3f}%")
    return 0


def cmd_anova(cfg: RunConfig, order_arg: str | None) -> int:
    base, _ = _load_base(cfg)
    model, _ = _load_cen(cfg)
    _, test_ds = _analysis_dataset(cfg)
    names = [f.name for f in cfg.schema.features]
    if order_arg:
        order = [s.strip() for s in order_arg.split(",")]
    else:
        order = list(cfg.analysis.get("anova_order", names))
    report = explain.anova(model, base, test_ds, order)
    _write_csv(
        cfg.output_dir / "anova.csv",
        ["position", "feature", "anova"],
        [[k + 1, name, float(report.entries[name])] for k, name in enumerate(order)],
    )
    _report_files(cfg, "anova", report)
    deltas = [report.entries[name] for name in order]
    _write_text(cfg.output_dir / "anova.svg",
                svg.waterfall(order, deltas, 0.0, "anova: sequential loss decreases"))
    print(f"  total relative increase: {100 * report.total:.3f}%")
    for name in order:
        print(f"  anova[{name}] = {100 * report.entries[name]:.3f}%")
    return 0


def cmd_vpi(cfg: RunConfig, seed: int | None) -> int:
    base, _ = _load_base(cfg)
    _, test_ds = _analysis_dataset(cfg)
    rng_seed = seed if seed is not None else int(cfg.analysis.get("seed", 0))
    report = explain.vpi(base, test_ds, rng_seed=rng_seed,
                         repetitions=int(cfg.analysis.get("vpi_repetitions", 1)))
    rows = sorted(report.entries.items(), key=lambda kv: -abs(kv[1]))
    _write_csv(cfg.output_dir / "vpi.csv", ["feature", "vpi"],
               [[k, float(v)] for k, v in rows])
    _report_files(cfg, "vpi", report, {"seed": rng_seed})
    _write_text(cfg.output_dir / "vpi.svg",
                svg.bar_chart(rows, "permutation importance", "relative increase"))
    for k, v in rows:
        print(f"  vpi[{k}] = {100 * v:.3f}%")
    return 0


def _curve_rows(curve: explain.EffectCurve) -> tuple[list[str], list[list]]:
    rows = []
    if curve.is_categorical:
        header = ["level"]
        first = [curve.levels[int(g)] for g in curve.grid]
    else:
        header = ["x_std", "x_raw"]
        raws = curve.grid_raw if curve.grid_raw is not None else [float("nan")] * len(curve.grid)
        first = list(zip(curve.grid, raws))
    header.append("value")
    for i in range(len(curve.grid)):
        lead = [first[i]] if curve.is_categorical else [float(first[i][0]), float(first[i][1])]
        rows.append(lead + [float(curve.values[i])])
    if curve.n_obs is not None:
        header += ["n_obs", "y_bar", "mu_bar", "supported"]
        for i, row in enumerate(rows):
            row += [int(curve.n_obs[i]), float(curve.y_bar[i]), float(curve.mu_bar[i]),
                    bool(curve.supported[i])]
    return header, rows


def _curve_x(curve: explain.EffectCurve) -> np.ndarray:
    if curve.is_categorical:
        return np.asarray(curve.grid, dtype=float)
    if curve.grid_raw is not None:
        return np.asarray(curve.grid_raw, dtype=float)
    return np.asarray(curve.grid, dtype=float)


def cmd_pdp(cfg: RunConfig, feature: str | None) -> int:
    base, _ = _load_base(cfg)
    train_ds, _ = _analysis_dataset(cfg)
    feature = feature or cfg.analysis.get("feature")
    if not feature:
        raise ConfigError("pdp needs --feature")
    curve = explain.pdp(base, train_ds, feature,
                        points=int(cfg.analysis.get("grid_points", 51)))
    header, rows = _curve_rows(curve)
    _write_csv(cfg.output_dir / f"pdp_{feature}.csv", header, rows)
    _write_text(
        cfg.output_dir / f"pdp_{feature}.svg",
        svg.line_chart([("pdp", _curve_x(curve), curve.values)],
                       title=f"partial dependence: {feature}", x_label=feature),
    )
    print(f"  pdp({feature}): {len(curve.grid)} grid points")
    return 0


def cmd_mcep(cfg: RunConfig, feature: str | None) -> int:
    base, _ = _load_base(cfg)
    model, _ = _load_cen(cfg)
    train_ds, _ = _analysis_dataset(cfg)
    feature = feature or cfg.analysis.get("feature")
    if not feature:
        raise ConfigError("mcep needs --feature")
    curve = explain.mcep(model, feature, data=train_ds, base=base,
                         points=int(cfg.analysis.get("grid_points", 51)))
    header, rows = _curve_rows(curve)
    _write_csv(cfg.output_dir / f"mcep_{feature}.csv", header, rows)
    keep = curve.supported if curve.supported is not None else np.ones(len(curve.grid), bool)
    x = _curve_x(curve)
    series = [("mcep", x[keep], curve.values[keep])]
    pts = []
    if curve.mu_bar is not None:
        series.append(("avg prediction", x[keep], curve.mu_bar[keep]))
        pts.append(("observed mean", x[keep], curve.y_bar[keep]))
    n_skipped = int((~keep).sum())
    _write_text(
        cfg.output_dir / f"mcep_{feature}.svg",
        svg.line_chart(series, pts, title=f"marginal conditional expectation: {feature}",
                       x_label=feature),
    )
    print(f"  mcep({feature}): {int(keep.sum())} support points"
          + (f", {n_skipped} zero-mass levels flagged" if n_skipped else ""))
    return 0


def cmd_shap(cfg: RunConfig, instance: int | None, value_fn: str | None,
             m: int | None, seed: int | None) -> int:
    base, _ = _load_base(cfg)
    model, _ = _load_cen(cfg)
    train_ds, test_ds = _analysis_dataset(cfg)
    idx = instance if instance is not None else int(cfg.analysis.get("instance", 0))
    if not 0 <= idx < test_ds.n:
        raise ConfigError(f"instance {idx} outside [0, {test_ds.n})")
    fn_name = (value_fn or cfg.analysis.get("value_fn", "conditional")).lower()
    if fn_name == "conditional":
        kind = explain.Conditional()
    elif fn_name == "interventional":
        kind = explain.Interventional(
            background=train_ds,
            sample_size=int(cfg.analysis.get("sample_size", 1000)),
            seed=int(cfg.analysis.get("seed", 0)),
        )
    else:
        raise ConfigError(f"unknown value function {fn_name!r}")
    x = test_ds.instance(idx)
    big_weight = float(cfg.analysis.get("big_weight", 1e6))
    if m is None and "m" in cfg.analysis:
        m = int(cfg.analysis["m"])
    if m:
        att = explain.shap_mean(model, base, x, kind, mode="sampled", m=m,
                                rng_seed=seed if seed is not None else int(cfg.analysis.get("seed", 0)),
                                big_weight=big_weight)
    else:
        att = explain.shap_mean(model, base, x, kind, mode="exact", big_weight=big_weight)

    names = [f.name for f in cfg.schema.features]
    raw_cont = test_ds.destandardize(x.cont)
    shown = {}
    for j, spec in enumerate(cfg.schema.features):
        k = cfg.schema.column_of(j)
        shown[spec.name] = spec.levels[x.cat[k]] if spec.is_categorical else float(raw_cont[k])
    doc = {
        "instance": idx,
        "value_fn": fn_name,
        "mu0": att.mu0,
        "phi": {name: float(att.phi[j]) for j, name in enumerate(names)},
        "reconstruction": att.total,
        "feature_values": shown,
    }
    _write_json(cfg.output_dir / f"shap_{idx}.json", doc)
    _write_csv(
        cfg.output_dir / f"shap_{idx}.csv",
        ["feature", "value", "phi"],
        [[name, shown[name], float(att.phi[j])] for j, name in enumerate(names)],
    )
    order = np.argsort(-np.abs(att.phi))
    _write_text(
        cfg.output_dir / f"shap_{idx}.svg",
        svg.waterfall([f"{names[j]}={shown[names[j]]}" for j in order],
                      [float(att.phi[j]) for j in order], att.mu0,
                      f"SHAP decomposition of instance {idx} ({fn_name})",
                      total_label="prediction"),
    )
    print(f"  mu0 = {att.mu0:.6g}; reconstruction = {att.total:.6g}")
    for j in order:
        print(f"  phi[{names[j]}] = {att.phi[j]:+.6g}")
    return 0


def _gradient_color(t: float) -> str:
    a = (31, 119, 180)
    b = (214, 39, 40)
    rgb = tuple(int(round(x + (y - x) * t)) for x, y in zip(a, b))
    return f"#{rgb[0]:02x}{rgb[1]:02x}{rgb[2]:02x}"


def _dependence_svg(feature: str, x: np.ndarray, phi: np.ndarray,
                    color_by: str, color_vals: np.ndarray) -> str:
    lo, hi = float(color_vals.min()), float(color_vals.max())
    span = hi - lo or 1.0
    left, right, top, bottom = 80, 40, 60, 70
    sx = svg._Scale(float(x.min()), float(x.max()), left, svg.WIDTH - right)
    pad = 0.05 * (float(phi.max()) - float(phi.min()) or 1.0)
    sy = svg._Scale(float(phi.min()) - pad, float(phi.max()) + pad, svg.HEIGHT - bottom, top)
    out = svg._header(f"loss attribution vs {feature} (colored by {color_by})")
    for t in svg._ticks(float(x.min()), float(x.max())):
        out.append(f'<text x="{sx(t):.1f}" y="{svg.HEIGHT - bottom + 18}" font-size="11" '
                   f'text-anchor="middle">{svg.fmt(t)}</text>')
    for t in svg._ticks(float(phi.min()), float(phi.max())):
        out.append(f'<text x="{left - 6}" y="{sy(t) + 4:.1f}" font-size="11" '
                   f'text-anchor="end">{svg.fmt(t)}</text>')
    for a, b, c in zip(x, phi, color_vals):
        out.append(f'<circle cx="{sx(float(a)):.1f}" cy="{sy(float(b)):.1f}" r="2.5" '
                   f'fill="{_gradient_color((float(c) - lo) / span)}" fill-opacity="0.7"/>')
    out.append(f'<text x="{svg.WIDTH / 2}" y="{svg.HEIGHT - 14}" font-size="13" '
               f'text-anchor="middle">{svg._esc(feature)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def cmd_loss_shap(cfg: RunConfig, n_cases: int | None, m: int | None, seed: int | None) -> int:
    base, _ = _load_base(cfg)
    model, _ = _load_cen(cfg)
    _, test_ds = _analysis_dataset(cfg)
    q = cfg.schema.q
    n_cases = n_cases if n_cases is not None else int(cfg.analysis.get("n_cases", min(1000, test_ds.n)))
    m = m if m is not None else int(cfg.analysis.get("m", min((1 << q) - 2, 500)))
    rng_seed = seed if seed is not None else int(cfg.analysis.get("seed", 0))
    big_weight = float(cfg.analysis.get("big_weight", 1e6))
    result = explain.shap_loss_attribution(
        model, base, test_ds, n_cases=n_cases, m=m, rng_seed=rng_seed, big_weight=big_weight
    )
    names = [f.name for f in cfg.schema.features]
    phi_mean = result.phi.mean(axis=0)
    _write_csv(
        cfg.output_dir / "loss_shap.csv",
        ["feature", "phi_mean", "shap_anova"],
        [[name, float(phi_mean[j]), float(result.report.entries[name])]
         for j, name in enumerate(names)],
    )
    eff_gap = result.loss_full - result.loss_null - result.phi.sum(axis=1)
    _write_json(cfg.output_dir / "loss_shap.json", {
        "kind": "shap_anova",
        "n_cases": int(n_cases),
        "m": int(m),
        "seed": int(rng_seed),
        "denominator": result.report.denominator,
        "entries": result.report.entries,
        "max_abs_efficiency_gap": float(np.max(np.abs(eff_gap))),
    })
    case_header = ["case", "row", "loss_null", "loss_full"] + [f"phi_{n}" for n in names]
    case_rows = []
    for i, row_idx in enumerate(result.case_indices):
        case_rows.append([i, int(row_idx), float(result.loss_null[i]), float(result.loss_full[i])]
                         + [float(v) for v in result.phi[i]])
    _write_csv(cfg.output_dir / "loss_shap_cases.csv", case_header, case_rows)

    rows = sorted(result.report.entries.items(), key=lambda kv: -abs(kv[1]))
    _write_text(cfg.output_dir / "loss_shap.svg",
                svg.bar_chart(rows, "SHAP decomposition of the loss gap",
                              "relative loss decrease"))

    sub = test_ds.take(result.case_indices)
    for j, spec in enumerate(cfg.schema.features):
        k = cfg.schema.column_of(j)
        if spec.is_categorical:
            xvals = sub.categorical[:, k].astype(float)
        else:
            xvals = sub.destandardize(sub.continuous)[:, k]
        best, best_corr = None, -1.0
        for o, other in enumerate(cfg.schema.features):
            if o == j:
                continue
            ko = cfg.schema.column_of(o)
            ovals = (sub.categorical[:, ko].astype(float) if other.is_categorical
                     else sub.continuous[:, ko])
            if np.std(ovals) == 0 or np.std(result.phi[:, j]) == 0:
                continue
            c = abs(float(np.corrcoef(ovals, result.phi[:, j])[0, 1]))
            if c > best_corr:
                best, best_corr = o, c
        if best is None:
            continue
        kb = cfg.schema.column_of(best)
        cvals = (sub.categorical[:, kb].astype(float)
                 if cfg.schema.features[best].is_categorical else sub.continuous[:, kb])
        _write_text(
            cfg.output_dir / f"loss_shap_dependence_{spec.name}.svg",
            _dependence_svg(spec.name, xvals, result.phi[:, j],
                            cfg.schema.features[best].name, cvals),
        )
    for name, v in rows:
        print(f"  shap_anova[{name}] = {100 * v:.3f}%")
    return 0


def cmd_synth(fixture: str, out_dir: str, n: int | None, seed: int | None,
              noise: str | None) -> int:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if fixture in ("F1", "F2"):
        kwargs = {}
        if n is not None:
            kwargs["n"] = n
        if seed is not None:
            kwargs["seed"] = seed
        spec = synth.fixture_gaussian(fixture, noise=noise, **kwargs)
        test_spec = synth.GaussianLinearSpec(
            q=spec.q, sigma=spec.sigma, beta=spec.beta, beta0=spec.beta0,
            link=spec.link, noise=spec.noise, n=spec.n, seed=spec.seed + 1,
        )
        manifest = {
            "fixture": fixture,
            "family": "gaussian_linear",
            "q": spec.q,
            "sigma": spec.sigma.tolist(),
            "beta": spec.beta.tolist(),
            "beta0": spec.beta0,
            "link": spec.link,
            "noise": spec.noise,
            "n": spec.n,
            "train_seed": spec.seed,
            "test_seed": test_spec.seed,
        }
        for name, s in (("train", spec), ("test", test_spec)):
            ds = synth.gen_gaussian(s)
            raw = ds.destandardize(ds.continuous)
            header = [f.name for f in ds.schema.features] + ["y"]
            rows = [[float(raw[i, k]) for k in range(s.q)] + [float(ds.response[i])]
                    for i in range(ds.n)]
            _write_csv(out / f"{name}.csv", header, rows)
    elif fixture == "F3":
        kwargs = {}
        if n is not None:
            kwargs["n"] = n
        if seed is not None:
            kwargs["seed"] = seed
        spec = synth.fixture_discrete(**kwargs)
        manifest = {
            "fixture": "F3",
            "family": "discrete_joint",
            "level_counts": list(spec.level_counts),
            "pmf": spec.pmf.tolist(),
            "mu_table": spec.mu_table.tolist(),
            "n": spec.n,
            "train_seed": spec.seed,
            "test_seed": spec.seed + 1,
        }
        for name, sd in (("train", spec.seed), ("test", spec.seed + 1)):
            s = synth.DiscreteJointSpec(spec.level_counts, spec.pmf, spec.mu_table,
                                        n=spec.n, seed=sd)
            ds = synth.gen_discrete(s)
            header = [f.name for f in ds.schema.features] + ["y"]
            rows = []
            for i in range(ds.n):
                rows.append([ds.schema.features[j].levels[ds.categorical[i, j]]
                             for j in range(s.q)] + [float(ds.response[i])])
            _write_csv(out / f"{name}.csv", header, rows)
    else:
        raise ConfigError(f"unknown fixture {fixture!r} (expected F1, F2 or F3)")
    _write_json(out / "oracle_manifest.json", manifest)
    print(f"fixture {fixture} -> {out}/train.csv, test.csv, oracle_manifest.json")
    return 0


# ---------------------------------------------------------------------------
# argument parsing

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="censhap",
        description="conditional-expectation surrogate explanations for tabular models",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", required=True, help="TOML run configuration")
        return p

    with_config(sub.add_parser("fit-base", help="fit the base regression network"))
    with_config(sub.add_parser("fit-cen", help="fit the conditional expectation surrogate"))
    with_config(sub.add_parser("drop1", help="drop-one-feature importance"))
    p = with_config(sub.add_parser("anova", help="sequential inclusion importance"))
    p.add_argument("--order", help="comma-separated feature order")
    p = with_config(sub.add_parser("vpi", help="permutation importance"))
    p.add_argument("--seed", type=int)
    p = with_config(sub.add_parser("pdp", help="partial dependence curve"))
    p.add_argument("--feature")
    p = with_config(sub.add_parser("mcep", help="marginal conditional expectation curve"))
    p.add_argument("--feature")
    p = with_config(sub.add_parser("shap", help="per-instance SHAP of the prediction"))
    p.add_argument("--instance", type=int)
    p.add_argument("--value-fn", choices=["conditional", "interventional"])
    p.add_argument("--m", type=int, help="sampled coalitions (default: exact)")
    p.add_argument("--seed", type=int)
    p = with_config(sub.add_parser("loss-shap", help="SHAP decomposition of the loss gap"))
    p.add_argument("--n-cases", type=int)
    p.add_argument("--m", type=int)
    p.add_argument("--seed", type=int)
    p = sub.add_parser("synth", help="write a synthetic fixture with its oracle manifest")
    p.add_argument("--fixture", required=True, choices=["F1", "F2", "F3"])
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--noise", choices=["poisson"])
    return parser


def run(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "synth":
        return cmd_synth(args.fixture, args.out, args.n, args.seed, args.noise)
    cfg = load_config(args.config)
    if args.command == "fit-base":
        return cmd_fit_base(cfg)
    if args.command == "fit-cen":
        return cmd_fit_cen(cfg)
    if args.command == "drop1":
        return cmd_drop1(cfg)
    if args.command == "anova":
        return cmd_anova(cfg, args.order)
    if args.command == "vpi":
        return cmd_vpi(cfg, args.seed)
    if args.command == "pdp":
        return cmd_pdp(cfg, args.feature)
    if args.command == "mcep":
        return cmd_mcep(cfg, args.feature)
    if args.command == "shap":
        return cmd_shap(cfg, args.instance, args.value_fn, args.m, args.seed)
    if args.command == "loss-shap":
        return cmd_loss_shap(cfg, args.n_cases, args.m, args.seed)
    raise ConfigError(f"unknown command {args.command!r}")


def main(argv: list[str] | None = None) -> int:
    try:
        return run(argv)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 4
    except CenShapError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
