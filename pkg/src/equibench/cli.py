"""Command-line entry point: a staged, resumable pipeline.

Subcommands: synth | features | train | evaluate | explain | report |
valuate. Each stage reads the artifacts of prior stages from plain files,
so any stage can be rerun standalone. Configuration comes from flags plus
an optional JSON config file; flags win. All randomness derives from the
single --seed. Exit codes: 0 success, 1 pipeline error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import boosting, neuralnet
from .capm import DcfInputs, WaccInputs, dcf_value, wacc
from .dataset import (
    SynthConfig,
    generate_synthetic,
    load_panels,
    write_ground_truth,
    write_panels,
)
from .errors import ConfigurationError, EquibenchError
from .evaluate import (
    MODEL_NAMES,
    BenchmarkSettings,
    run_benchmark,
    train_and_predict,
    write_report_csv,
    write_report_json,
    BenchmarkReport,
    ModelRow,
    EvalPair,
    mse,
)
from .features import (
    audit_leakage,
    build_feature_matrix,
    read_features_csv,
    sequential_split,
    standardize_features,
    write_audit_report,
    write_features_csv,
)
from .explain import (
    importance_report,
    permutation_importance,
    shapley_exact,
    write_attribution_json,
    write_importance_csv,
)
from .util import child_rng

OUTPUT_ENV_VAR = "EQUIBENCH_OUT"
ML_MODELS = tuple(m for m in MODEL_NAMES if m != "capm")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="equibench",
        description="Annual equity-return forecasting benchmark pipeline.",
    )
    parser.add_argument("--config", help="JSON config file; flags override its values")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a seeded synthetic dataset")
    p.add_argument("--assets", type=int)
    p.add_argument("--years", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--noise-scale", type=float)
    p.add_argument("--nonlinear-amplitude", type=float)
    p.add_argument("--out")

    p = sub.add_parser("features", help="build the feature matrix and leakage audit")
    p.add_argument("--data", help="directory with prices.csv, fundamentals.csv, macro.csv")
    p.add_argument("--window", type=int)
    p.add_argument("--out")

    p = sub.add_parser("train", help="tune and train one model, saving it to JSON")
    p.add_argument("--data")
    p.add_argument("--model", choices=ML_MODELS)
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--test-fraction", type=float)
    p.add_argument("--window", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--out")

    p = sub.add_parser("evaluate", help="run the full model comparison")
    p.add_argument("--data")
    p.add_argument("--models", help="comma-separated roster, e.g. capm,gbt,deep_fnn")
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--test-fraction", type=float)
    p.add_argument("--window", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--jobs", type=int, help="max models trained concurrently")
    p.add_argument("--out")

    p = sub.add_parser("explain", help="feature importance + local attribution")
    p.add_argument("--features", help="features.csv from the features stage")
    p.add_argument("--model-file", help="model JSON from the train stage")
    p.add_argument("--test-fraction", type=float)
    p.add_argument("--top-k", type=int)
    p.add_argument("--repeats", type=int)
    p.add_argument("--row", type=int, help="test-row index for the local attribution")
    p.add_argument("--shap-features", type=int,
                   help="attribute this many top-ranked features exactly")
    p.add_argument("--background", type=int, help="background sample size")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")

    p = sub.add_parser("report", help="re-render a report.json")
    p.add_argument("--report", help="path to report.json")
    p.add_argument("--out")

    p = sub.add_parser("valuate", help="WACC / DCF valuation from JSON inputs")
    p.add_argument("--wacc", help='JSON like {"D":0,"E":100,"rD":0.04,"rE":0.10}')
    p.add_argument("--dcf", help='JSON like {"fcf":[100,110],"terminal_value":0,"discount_rate":0.1}')
    return parser


class _Config:
    """Flag values with config-file and hardcoded fallbacks; flags win."""

    def __init__(self, args: argparse.Namespace, file_values: dict):
        self.args = args
        self.file_values = file_values

    def get(self, key: str, default=None):
        flag = getattr(self.args, key.replace("-", "_"), None)
        if flag is not None:
            return flag
        if key in self.file_values:
            return self.file_values[key]
        return default

    def out_dir(self) -> Path:
        out = self.get("out") or os.environ.get(OUTPUT_ENV_VAR) or "."
        path = Path(out)
        path.mkdir(parents=True, exist_ok=True)
        return path


def _load_config_file(path) -> dict:
    if not path:
        return {}
    with open(path, encoding="utf-8") as fh:
        values = json.load(fh)
    if not isinstance(values, dict):
        raise ConfigurationError(f"{path}: config file must hold a JSON object")
    return values


def _load_data(cfg: _Config):
    data_dir = Path(cfg.get("data") or ".")
    return load_panels(data_dir / "prices.csv", data_dir / "fundamentals.csv",
                       data_dir / "macro.csv")


def _settings_from(cfg: _Config, budget=None) -> BenchmarkSettings:
    settings = BenchmarkSettings(
        test_fraction=float(cfg.get("test_fraction", 0.30)),
        window_years=int(cfg.get("window", 3)),
        data_source=str(cfg.get("data", ".")),
    )
    if cfg.get("epochs") is not None:
        settings.fnn_epochs = int(cfg.get("epochs"))
    if cfg.get("batch_size") is not None:
        settings.fnn_batch_size = int(cfg.get("batch_size"))
    if budget is not None:
        settings.hpo_budgets = {m: int(budget) for m in ML_MODELS}
    return settings


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def _cmd_synth(cfg: _Config) -> int:
    config = SynthConfig(
        n_assets=int(cfg.get("assets", 200)),
        n_years=int(cfg.get("years", 30)),
        seed=int(cfg.get("seed", 0)),
        noise_scale=float(cfg.get("noise_scale", 1.0)),
        nonlinear_amplitude=float(cfg.get("nonlinear_amplitude", 0.45)),
    )
    prices, fundamentals, macro, truth = generate_synthetic(config)
    out = cfg.out_dir()
    write_panels(prices, fundamentals, macro, out)
    write_ground_truth(truth, out / "groundtruth.json")
    print(f"synth: {config.n_assets} assets x {config.n_years} years "
          f"(seed {config.seed}) -> {out}/{{prices,fundamentals,macro}}.csv + groundtruth.json")
    return 0


def _cmd_features(cfg: _Config) -> int:
    prices, fundamentals, macro = _load_data(cfg)
    window = int(cfg.get("window", 3))
    matrix = build_feature_matrix(prices, fundamentals, macro, window)
    report = audit_leakage(matrix, prices, fundamentals, macro)
    out = cfg.out_dir()
    write_features_csv(matrix, out / "features.csv")
    write_audit_report(report, out / "audit.json")
    print(f"features: {report['rows']} rows x {matrix.n_features} features, "
          f"{report['dropped_missing']} dropped, "
          f"{report['leakage_violations']} leakage violations -> {out}/features.csv")
    if report["leakage_violations"]:
        raise EquibenchError(
            f"leakage audit failed: {report['leakage_violations']} violations "
            f"(see {out / 'audit.json'})"
        )
    return 0


def _cmd_train(cfg: _Config) -> int:
    model_name = cfg.get("model")
    if model_name not in ML_MODELS:
        raise ConfigurationError(f"--model must be one of {ML_MODELS}")
    prices, fundamentals, macro = _load_data(cfg)
    seed = int(cfg.get("seed", 0))
    settings = _settings_from(cfg, budget=cfg.get("trials", 20))
    matrix = build_feature_matrix(prices, fundamentals, macro, settings.window_years)
    split = sequential_split(matrix, settings.test_fraction)
    out = cfg.out_dir()
    history_path = out / f"{model_name}_trials.jsonl"
    if history_path.exists():
        history_path.unlink()
    preds, digest, model = train_and_predict(
        model_name, prices, macro, split, settings, seed,
        history_path=history_path)
    test_mse = mse(EvalPair(preds, split.test.y))
    model_path = out / f"{model_name}.json"
    if isinstance(model, neuralnet.MlpModel):
        neuralnet.save_mlp(model, model_path)
    else:
        boosting.save_model(model, model_path)
    print(f"train: {model_name} test_mse={test_mse:.6f} config={digest} "
          f"-> {model_path} (+ {history_path.name})")
    return 0


def _cmd_evaluate(cfg: _Config) -> int:
    prices, fundamentals, macro = _load_data(cfg)
    roster = [m.strip() for m in str(cfg.get("models", "capm,gbt,deep_fnn")).split(",") if m.strip()]
    seed = int(cfg.get("seed", 0))
    settings = _settings_from(cfg, budget=cfg.get("trials"))
    report = run_benchmark(prices, fundamentals, macro, roster, seed, settings,
                           jobs=int(cfg.get("jobs", 1)))
    out = cfg.out_dir()
    write_report_json(report, out / "report.json")
    write_report_csv(report, out / "report.csv")
    print(report.render_table(), end="")
    print(f"evaluate: report -> {out}/report.json")
    return 0 if report.all_ok else 1


def _load_any_model(path):
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    kind = payload.get("model_type")
    if kind == "mlp":
        return neuralnet.mlp_from_dict(payload), "mlp"
    if kind == "gbt":
        return boosting.ensemble_from_dict(payload), "gbt"
    if kind == "ngboost":
        return boosting.gaussian_ensemble_from_dict(payload), "ngboost"
    raise ConfigurationError(f"{path}: unknown model_type {payload.get('model_type')!r}")


def _cmd_explain(cfg: _Config) -> int:
    matrix = read_features_csv(cfg.get("features", "features.csv"))
    model, kind = _load_any_model(cfg.get("model_file", "model.json"))
    split = sequential_split(matrix, float(cfg.get("test_fraction", 0.30)))
    if kind == "mlp":
        split = standardize_features(split)
        predict_fn = lambda X: neuralnet.mlp_forward(model, X)
    else:
        predict_fn = model.predict
    seed = int(cfg.get("seed", 0))
    top_k = int(cfg.get("top_k", 10))

    ranking = permutation_importance(predict_fn, split.test,
                                     n_repeats=int(cfg.get("repeats", 3)), seed=seed)
    table, svg = importance_report(ranking, top_k)
    out = cfg.out_dir()
    write_importance_csv(ranking, out / "importance.csv", top_k=top_k)
    (out / "importance.svg").write_text(svg, encoding="utf-8")

    row_index = int(cfg.get("row", 0))
    if not 0 <= row_index < len(split.test):
        raise ConfigurationError(f"--row {row_index} outside the {len(split.test)}-row test set")
    n_shap = min(int(cfg.get("shap_features", 10)), matrix.n_features)
    name_to_col = {n: j for j, n in enumerate(matrix.feature_names)}
    subset = [name_to_col[e.feature_name] for e in ranking.top(n_shap)]
    rng = child_rng(seed, "background")
    n_bg = min(int(cfg.get("background", 100)), len(split.train))
    bg_rows = rng.choice(len(split.train), size=n_bg, replace=False)
    attribution = shapley_exact(
        predict_fn, split.test.X[row_index], split.train.X[bg_rows],
        feature_subset=subset,
        feature_names=tuple(matrix.feature_names[j] for j in subset),
    )
    write_attribution_json(attribution, out / "attribution.json")
    print(table, end="")
    print(f"explain: top-{top_k} ranking + row {row_index} attribution -> {out}")
    return 0


def _cmd_report(cfg: _Config) -> int:
    path = cfg.get("report", "report.json")
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    rows = [ModelRow(
        model_name=r["model_name"], status=r["status"], test_mse=r["test_mse"],
        n_test_rows=r["n_test_rows"], train_duration_s=r["train_duration_s"],
        config_digest=r["config_digest"], error=r.get("error"),
    ) for r in payload["rows"]]
    report = BenchmarkReport(rows=rows, metadata=payload["metadata"])
    out = cfg.out_dir()
    write_report_csv(report, out / "report.csv")
    print(report.render_table(), end="")
    return 0


def _cmd_valuate(cfg: _Config) -> int:
    did_anything = False
    wacc_json = cfg.get("wacc")
    rate = None
    if wacc_json:
        raw = json.loads(wacc_json) if isinstance(wacc_json, str) else wacc_json
        inputs = WaccInputs(
            debt_value=float(raw["D"]), equity_value=float(raw["E"]),
            cost_of_debt=float(raw["rD"]), cost_of_equity=float(raw["rE"]),
        )
        rate = wacc(inputs)
        print(f"WACC: {rate:.10g}")
        did_anything = True
    dcf_json = cfg.get("dcf")
    if dcf_json:
        raw = json.loads(dcf_json) if isinstance(dcf_json, str) else dcf_json
        discount = raw.get("discount_rate")
        if discount is None:
            if rate is None:
                raise ConfigurationError(
                    "dcf input needs a discount_rate (or pass --wacc to reuse it)")
            discount = rate
        inputs = DcfInputs(
            fcf=tuple(float(v) for v in raw["fcf"]),
            terminal_value=float(raw.get("terminal_value", 0.0)),
            discount_rate=float(discount),
        )
        print(f"DCF value: {dcf_value(inputs):.10g}")
        did_anything = True
    if not did_anything:
        raise ConfigurationError("valuate needs --wacc and/or --dcf")
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "features": _cmd_features,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "explain": _cmd_explain,
    "report": _cmd_report,
    "valuate": _cmd_valuate,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        file_values = _load_config_file(args.config)
        cfg = _Config(args, file_values)
        return _COMMANDS[args.command](cfg)
    except EquibenchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
