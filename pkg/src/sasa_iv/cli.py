"""Command-line entry points: gen, train, eval, ablate, plot and sd.

Settings come from (lowest to highest precedence) built-in defaults, an
optional ``--config`` file of ``key = value`` lines, the ``SASA_OUT``
environment variable (output directory only) and command-line flags.
"""

import argparse
import json
import logging
import math
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import io as sio
from . import metrics, synth
from .estimator import SASAClassifier, SASARegressor
from .model import VARIANTS, ModelConfig, canonical_variant
from .structure import beta_to_matrix

logger = logging.getLogger("sasa_iv")

EXIT_OK, EXIT_OTHER, EXIT_IO, EXIT_SCHEMA, EXIT_SEMANTIC = 0, 1, 2, 3, 4
REQUIRED = object()


class ConfigError(ValueError):
    pass


class SemanticError(ValueError):
    pass


def _optional_int(v):
    return None if str(v).lower() in ("", "none") else int(v)


def _floats(v):
    return [float(s) for s in str(v).split(",") if s.strip()]


def _names(v):
    return [s.strip() for s in str(v).split(",") if s.strip()]


def _model_keys():
    types = {"d_g": _optional_int}
    out = {}
    for f in fields(ModelConfig):
        default = f.default
        kind = types.get(f.name) or type(default)
        out[f.name] = (kind, default, "model setting")
    return out


SCHEMAS = {
    "gen": {
        "out": (str, "runs", "output directory"),
        "seed": (int, 0, "seed for the graph, both specs and both datasets"),
        "n_vars": (int, 6, "number of variables M"),
        "n_steps": (int, 16, "window length N"),
        "density": (float, 0.25, "edge probability of the shared adjacency"),
        "lag_max": (int, 3, "largest lag"),
        "variation": (str, "strengths", f"one of {', '.join(synth.VARIATIONS)}"),
        "count": (int, 2000, "samples per domain"),
        "noise_std": (float, 0.3, "innovation noise standard deviation"),
        "label_noise": (float, 0.1, "label noise standard deviation"),
        "task": (str, "regression", "regression or classification"),
    },
    "train": {
        "out": (str, "runs", "output directory"),
        "source": (str, REQUIRED, "source data CSV"),
        "source_labels": (str, REQUIRED, "source label CSV"),
        "target": (str, "", "target data CSV (unused by source-only)"),
        **_model_keys(),
    },
    "eval": {
        "out": (str, "runs", "output directory"),
        "checkpoint": (str, REQUIRED, "checkpoint written by train"),
        "data": (str, REQUIRED, "evaluation data CSV"),
        "labels": (str, REQUIRED, "evaluation label CSV"),
        "manifest": (str, "", "manifest with the ground-truth adjacency (optional)"),
        "task": (str, "", "expected task; must match the checkpoint if given"),
        "name": (str, "metrics", "stem of the metrics file"),
    },
    "ablate": {
        "out": (str, "runs", "output directory"),
        "source": (str, REQUIRED, "source data CSV"),
        "source_labels": (str, REQUIRED, "source label CSV"),
        "target": (str, REQUIRED, "target data CSV"),
        "eval_data": (str, REQUIRED, "labelled target evaluation data CSV"),
        "eval_labels": (str, REQUIRED, "labels for eval_data"),
        "variants": (_names, ",".join(VARIANTS), "comma-separated variant names"),
        "seeds": (int, 3, "number of seeds per variant (seed, seed+1, ...)"),
        **_model_keys(),
    },
    "plot": {
        "out": (str, "runs", "output directory"),
        "beta": (_names, REQUIRED, "comma-separated beta CSVs written by train"),
        "mus": (_floats, "0,0.1,0.3", "comma-separated thresholds"),
    },
    "sd": {
        "manifest_a": (str, REQUIRED, "first manifest"),
        "manifest_b": (str, REQUIRED, "second manifest"),
    },
}


def schema_text(command):
    lines = [f"expected keys for '{command}':"]
    for key, (_, default, text) in SCHEMAS[command].items():
        mark = "required" if default is REQUIRED else f"default {default!r}"
        lines.append(f"  {key} ({mark}): {text}")
    return "\n".join(lines)


def resolve(command, flags, env=None):
    """Merge defaults, config file, ``SASA_OUT`` and flags into a typed settings dict."""
    env = os.environ if env is None else env
    schema = SCHEMAS[command]
    raw = {k: d for k, (_, d, _) in schema.items()}
    if flags.get("config"):
        from_file = sio.read_config(flags["config"])
        unknown = sorted(set(from_file) - set(schema))
        if unknown:
            raise ConfigError(f"unknown config keys {unknown}\n{schema_text(command)}")
        raw.update(from_file)
    if "out" in schema and env.get("SASA_OUT"):
        raw["out"] = env["SASA_OUT"]
    raw.update({k: v for k, v in flags.items() if k in schema and v is not None})
    missing = [k for k, v in raw.items() if v is REQUIRED]
    if missing:
        raise ConfigError(f"missing required keys {missing}\n{schema_text(command)}")
    out = {}
    for key, value in raw.items():
        kind = schema[key][0]
        try:
            out[key] = value if not isinstance(value, str) else kind(value)
        except ValueError:
            raise ConfigError(f"bad value for {key}: {value!r}\n{schema_text(command)}") from None
    return out


def _estimator_for(task, params):
    cls = SASAClassifier if task == "classification" else SASARegressor
    return cls(**params)


def _model_params(cfg):
    keys = {f.name for f in fields(ModelConfig)} - {"task", "n_classes"}
    return {k: cfg[k] for k in keys}


def _load_labels(path, ids, task):
    _, y = sio.read_labels_csv(path, ids)
    if task == "classification":
        if not np.all(y == np.round(y)):
            raise SemanticError(f"{path}: classification needs integer labels")
        y = y.astype(int)
    return y


def _write_json(path, doc):
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def cmd_gen(cfg):
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    pair = synth.make_domain_pair(cfg["seed"], cfg["n_vars"], cfg["density"], cfg["variation"], cfg["count"],
                                  N=cfg["n_steps"], lag_max=cfg["lag_max"], noise_std=cfg["noise_std"],
                                  label_noise=cfg["label_noise"], task=cfg["task"])
    for name, data in zip(("src", "tgt"), pair):
        sio.write_data_csv(out / f"{name}.csv", data.X)
        sio.write_labels_csv(out / f"{name}_labels.csv", data.y)
        (out / f"{name}.manifest").write_text(data.manifest, encoding="utf-8")
    src, tgt = pair[0].spec, pair[1].spec
    print(metrics.structural_distance(src, tgt).to_json())
    return EXIT_OK


def cmd_train(cfg):
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    model_cfg = ModelConfig(**{k: cfg[k] for k in (f.name for f in fields(ModelConfig))})
    ids, xs = sio.read_data_csv(cfg["source"])
    ys = _load_labels(cfg["source_labels"], ids, model_cfg.task)
    xt = None
    if model_cfg.uses_target:
        if not cfg["target"]:
            raise SemanticError(f"variant {model_cfg.variant} needs a target data file")
        _, xt = sio.read_data_csv(cfg["target"])
        if xt.shape[1:] != xs.shape[1:]:
            raise SemanticError(f"target windows {xt.shape[1:]} do not match source windows {xs.shape[1:]}")
    est = _estimator_for(model_cfg.task, _model_params(cfg))
    with open(out / "train.log", "w", encoding="utf-8") as log:
        est.fit(xs, ys, xt)
        for epoch, rec in enumerate(est.history_, start=1):
            log.write(json.dumps({"epoch": epoch, **rec.as_dict()}, sort_keys=True) + "\n")
    est.save(out / "model.ckpt", task=model_cfg.task)
    for name, X in (("src", xs), ("tgt", xt)):
        if X is None:
            continue
        st = est.structure(X)
        sio.write_matrix_csv(out / f"adjacency_{name}.csv", st["adjacency"])
        sio.write_beta_csv(out / f"beta_{name}.csv", st["beta"])
    if est.history_:
        print(json.dumps(est.history_[-1].as_dict(), sort_keys=True))
    return EXIT_OK


def evaluate_checkpoint(checkpoint, data, labels, manifest="", task=""):
    """Metrics document for a saved model on a labelled CSV dataset."""
    try:
        est = SASARegressor.load(checkpoint)
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise SemanticError(f"{checkpoint}: unreadable checkpoint ({exc})") from None
    model_task = est.net_.cfg.task
    if task and task != model_task:
        raise SemanticError(f"task mismatch: checkpoint is {model_task}, requested {task}")
    ids, X = sio.read_data_csv(data)
    if X.shape[1:] != (est.n_steps_, est.n_features_in_):
        raise SemanticError(f"data windows (N={X.shape[1]}, M={X.shape[2]}) do not match the checkpoint "
                            f"(N={est.n_steps_}, M={est.n_features_in_})")
    y = _load_labels(labels, ids, model_task)
    if model_task == "classification":
        if len(np.unique(y)) != 2 or len(est.classes_) != 2:
            raise SemanticError("AUC evaluation needs binary labels and a binary checkpoint")
        if not np.isin(y, est.classes_).all():
            raise SemanticError("evaluation labels are not among the checkpoint classes")
        doc = {"auc": metrics.auc(est.predict_proba(X)[:, 1], y == est.classes_[1])}
    else:
        doc = metrics.evaluate(est.predict(X), y, "regression")
    doc.update(task=model_task, n=len(y), variant=est.net_.cfg.variant)
    if manifest:
        spec = synth.DomainSpec.from_manifest(Path(manifest).read_text(encoding="utf-8"))
        if spec.M != est.n_features_in_:
            raise SemanticError(f"manifest has M={spec.M}, checkpoint has M={est.n_features_in_}")
        p, r, f1 = metrics.structure_score(est.structure(X)["adjacency"], synth.ground_truth_adjacency(spec))
        doc["structure_score"] = {"precision": p, "recall": r, "f1": f1}
    return doc


def cmd_eval(cfg):
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    doc = evaluate_checkpoint(cfg["checkpoint"], cfg["data"], cfg["labels"], cfg["manifest"], cfg["task"])
    _write_json(out / f"{cfg['name']}.json", doc)
    print(json.dumps(doc, sort_keys=True))
    return EXIT_OK


def cmd_ablate(cfg):
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    variants = [canonical_variant(v) for v in cfg["variants"]]
    task = cfg["task"]
    ids, xs = sio.read_data_csv(cfg["source"])
    ys = _load_labels(cfg["source_labels"], ids, task)
    _, xt = sio.read_data_csv(cfg["target"])
    eids, xe = sio.read_data_csv(cfg["eval_data"])
    ye = _load_labels(cfg["eval_labels"], eids, task)
    metric = "auc" if task == "classification" else "rmse"
    runs = []
    for variant in variants:
        for k in range(cfg["seeds"]):
            params = {**_model_params(cfg), "variant": variant, "seed": cfg["seed"] + k}
            record = {"variant": variant, "seed": params["seed"]}
            try:
                est = _estimator_for(task, params).fit(xs, ys, xt)
                if task == "classification":
                    record[metric] = metrics.auc(est.predict_proba(xe)[:, 1], ye == est.classes_[1])
                else:
                    record[metric] = metrics.rmse(est.predict(xe), ye)
            except Exception as exc:  # one failed run must not stop the sweep
                logger.error("variant %s seed %d failed: %s", variant, params["seed"], exc)
                record["error"] = f"{type(exc).__name__}: {exc}"
            runs.append(record)
    rows = []
    for variant in variants:
        vals = [r[metric] for r in runs if r["variant"] == variant and metric in r]
        failed = sum(1 for r in runs if r["variant"] == variant and "error" in r)
        mean = float(np.mean(vals)) if vals else math.nan
        std = float(np.std(vals)) if vals else math.nan
        rows.append({"variant": variant, "metric": metric, "mean": mean, "std": std, "runs": len(vals),
                     "failed": failed})
    _write_json(out / "ablation.json", {"rows": rows, "runs": runs})
    table = [f"| variant | {metric} (mean ± std) | runs | failed |", "|---|---|---|---|"]
    table += [f"| {r['variant']} | {r['mean']:.4f} ± {r['std']:.4f} | {r['runs']} | {r['failed']} |" for r in rows]
    text = "\n".join(table) + "\n"
    (out / "ablation.md").write_text(text, encoding="utf-8")
    print(text, end="")
    return EXIT_OK


def render_heatmap(path, matrix, title, vmax=None):
    import matplotlib

    matplotlib.use("Agg")
    from matplotlib import pyplot as plt

    m = matrix.shape[0]
    fig, ax = plt.subplots(figsize=(4, 3.6), dpi=100)
    im = ax.imshow(matrix, cmap="viridis", vmin=0.0, vmax=vmax if vmax is not None else max(matrix.max(), 1e-12))
    ticks = np.arange(m)
    ax.set_xticks(ticks, [str(j + 1) for j in ticks])
    ax.set_yticks(ticks, [str(i + 1) for i in ticks])
    ax.set_xlabel("source variable j")
    ax.set_ylabel("target variable i")
    ax.set_title(title)
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    fig.savefig(path, format="png", metadata={"Software": None})
    plt.close(fig)


def cmd_plot(cfg):
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    summary = []
    for beta_path in cfg["beta"]:
        if not Path(beta_path).is_file():
            raise sio.DataSchemaError(f"{beta_path}: missing beta export")
        beta = sio.read_beta_csv(beta_path)
        stem = Path(beta_path).stem
        magnitude = beta_to_matrix(beta, reduce="max")
        for mu in cfg["mus"]:
            lit = beta > mu
            adj = beta_to_matrix(lit.astype(float), reduce="any")
            kept = beta_to_matrix(np.where(lit, beta, 0.0), reduce="max")
            render_heatmap(out / f"{stem}_mu{mu:g}_beta.png", kept, f"beta > {mu:g}", vmax=max(magnitude.max(), 1e-12))
            render_heatmap(out / f"{stem}_mu{mu:g}_adjacency.png", adj, f"adjacency, mu = {mu:g}", vmax=1.0)
            summary.append({"beta": str(beta_path), "mu": mu, "lit_edges": int(adj.sum())})
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_sd(cfg):
    specs = []
    for path in (cfg["manifest_a"], cfg["manifest_b"]):
        try:
            specs.append(synth.DomainSpec.from_manifest(Path(path).read_text(encoding="utf-8")))
        except (json.JSONDecodeError, TypeError, KeyError) as exc:
            raise sio.DataSchemaError(f"{path}: malformed manifest ({exc})") from None
    try:
        report = metrics.structural_distance(*specs)
    except ValueError as exc:
        raise SemanticError(str(exc)) from None
    print(report.to_json())
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "ablate": cmd_ablate, "plot": cmd_plot,
            "sd": cmd_sd}
HELP = {"gen": "sample a synthetic source/target pair", "train": "fit a model on source (and target) data",
        "eval": "score a checkpoint on labelled data", "ablate": "compare variants over several seeds",
        "plot": "render beta and adjacency heatmaps", "sd": "structural distance between two manifests"}


def build_parser():
    parser = argparse.ArgumentParser(prog="sasa-iv", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, schema in SCHEMAS.items():
        p = sub.add_parser(name, help=HELP[name], description=HELP[name])
        p.add_argument("--config", help="flat key = value settings file")
        for key, (_, default, text) in schema.items():
            shown = "required" if default is REQUIRED else default
            p.add_argument(f"--{key}", default=None, help=f"{text} [{shown}]")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "verbose")}
    try:
        cfg = resolve(args.command, flags)
        return COMMANDS[args.command](cfg)
    except sio.DataSchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except SemanticError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SEMANTIC
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_OTHER


if __name__ == "__main__":
    sys.exit(main())
