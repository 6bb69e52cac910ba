"""Command-line entry point: ``evgen <command> [flags]``.

Every command writes its primary artifacts plus ``config.json`` (the resolved
parameters, enough to rerun it) into ``--out``. Wall-clock times and library
versions go to ``run_meta.json`` so the primary files stay byte-identical
across reruns with the same config and seed.

Parameters are resolved as: command-line flag, then the YAML ``--config``
file, then the built-in default. A config file holds top-level ``seed``,
``out`` and ``log_level`` keys plus one block per command, named after it::

    seed: 3
    train-gmm:
      clusters: 16
      tol: 1.0e-6

Exit codes: 0 success, 2 input error, 3 training divergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .dataio import (LoadCurveDataset, SessionFileError, denormalize, normalize,
                     parse_sessions, read_dataset, sessions_to_dataset, split, write_dataset)

log = logging.getLogger("evgen")

EXIT_OK, EXIT_INPUT, EXIT_DIVERGED = 0, 2, 3

GLOBAL_DEFAULTS = {"seed": 0, "out": "out", "log_level": "INFO"}

DEFAULTS = {
    "ingest": {"sessions": None, "ratio": 0.95},
    "train-gmm": {"data": None, "clusters": 1000, "tol": 1e-6, "max_iter": 50000},
    "train-gan": {"data": None, "condition": "continuous", "categories": 8, "epochs": 500, "batch": 256,
                  "lambda_sc": 0.1, "lambda_gp": 10.0, "n_critic": 5, "lr": 1e-4,
                  "lr_patience": 50, "checkpoint_every": 50},
    "generate": {"model": None, "n": 1000, "fix_c": [], "category": None},
    "evaluate": {"real": None, "synth": [], "sweep_k": None, "tol": 1e-6, "max_iter": 50000, "plots": False},
    "sweep": {"model": None, "var": 0, "values": "0,0.5,1,1.5", "n_per_value": 500, "plots": False},
}

REQUIRED = {"ingest": ["sessions"], "train-gmm": ["data"], "train-gan": ["data"], "generate": ["model"],
            "evaluate": ["real"], "sweep": ["model"]}


class InputError(Exception):
    pass


# ---------------------------------------------------------------- argument parsing

def _global_flags(p: argparse.ArgumentParser) -> None:
    s = argparse.SUPPRESS
    p.add_argument("--seed", type=int, default=s, help="global random seed")
    p.add_argument("--out", default=s, help="output directory")
    p.add_argument("--log-level", dest="log_level", default=s,
                   choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    p.add_argument("--config", default=s, help="YAML config file")


def build_parser() -> argparse.ArgumentParser:
    s = argparse.SUPPRESS
    parser = argparse.ArgumentParser(prog="evgen", description="EV charging load-curve generation")
    parser.add_argument("--version", action="version", version=f"evgen {__version__}")
    _global_flags(parser)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="session CSV -> normalized train/test curve files")
    _global_flags(p)
    p.add_argument("--sessions", default=s, help="session CSV")
    p.add_argument("--ratio", type=float, default=s, help="train fraction (default 0.95)")

    p = sub.add_parser("train-gmm", help="fit the session-triple GMM baseline")
    _global_flags(p)
    p.add_argument("--data", default=s, help="curve file (raw or normalized)")
    p.add_argument("--clusters", type=int, default=s)
    p.add_argument("--tol", type=float, default=s)
    p.add_argument("--max-iter", dest="max_iter", type=int, default=s)

    p = sub.add_parser("train-gan", help="train the SC-WGAN-GP generator")
    _global_flags(p)
    p.add_argument("--data", default=s, help="normalized curve file")
    p.add_argument("--condition", choices=["continuous", "discrete"], default=s)
    p.add_argument("--categories", type=int, default=s, help="active categories for discrete codes")
    p.add_argument("--epochs", type=int, default=s)
    p.add_argument("--batch", type=int, default=s)
    p.add_argument("--lambda-sc", dest="lambda_sc", type=float, default=s)
    p.add_argument("--lambda-gp", dest="lambda_gp", type=float, default=s)
    p.add_argument("--n-critic", dest="n_critic", type=int, default=s)
    p.add_argument("--lr", type=float, default=s)
    p.add_argument("--lr-patience", dest="lr_patience", type=int, default=s)
    p.add_argument("--checkpoint-every", dest="checkpoint_every", type=int, default=s)

    p = sub.add_parser("generate", help="sample curves from a GAN or GMM model file")
    _global_flags(p)
    p.add_argument("--model", default=s)
    p.add_argument("--n", type=int, default=s)
    p.add_argument("--fix-c", dest="fix_c", action="append", default=s, metavar="INDEX=VALUE",
                   help="pin a continuous code entry, repeatable")
    p.add_argument("--category", type=int, default=s, help="pin the discrete category")

    p = sub.add_parser("evaluate", help="compare real curves against synthetic sets")
    _global_flags(p)
    p.add_argument("--real", default=s)
    p.add_argument("--synth", action="append", default=s, help="synthetic curve file, repeatable")
    p.add_argument("--sweep-k", dest="sweep_k", default=s, help="comma-separated GMM cluster counts")
    p.add_argument("--tol", type=float, default=s, help="EM tolerance for --sweep-k")
    p.add_argument("--max-iter", dest="max_iter", type=int, default=s, help="EM iteration cap for --sweep-k")
    p.add_argument("--plots", action="store_true", default=s)

    p = sub.add_parser("sweep", help="per-interval statistics with one condition entry pinned")
    _global_flags(p)
    p.add_argument("--model", default=s)
    p.add_argument("--var", type=int, default=s)
    p.add_argument("--values", default=s, help="comma-separated values")
    p.add_argument("--n-per-value", dest="n_per_value", type=int, default=s)
    p.add_argument("--plots", action="store_true", default=s)
    return parser


def resolve(argv=None) -> tuple[str, dict]:
    """Parse flags and merge them over the config file and the defaults."""
    ns = vars(build_parser().parse_args(argv))
    command = ns.pop("command")
    file_cfg = {}
    if "config" in ns:
        path = Path(ns.pop("config"))
        if not path.exists():
            raise InputError(f"config file not found: {path}")
        file_cfg = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        if not isinstance(file_cfg, dict):
            raise InputError(f"{path}: expected a mapping at top level")
    block = file_cfg.get(command, {}) or {}
    unknown = set(block) - set(DEFAULTS[command])
    if unknown:
        raise InputError(f"unknown keys in config block '{command}': {sorted(unknown)}")

    cfg = {**GLOBAL_DEFAULTS, **{k: file_cfg[k] for k in GLOBAL_DEFAULTS if k in file_cfg}}
    cfg.update(DEFAULTS[command])
    cfg.update(block)
    cfg.update(ns)
    missing = [k for k in REQUIRED[command] if cfg.get(k) is None]
    if missing:
        raise InputError(f"{command}: missing required parameter(s): "
                         + ", ".join("--" + k.replace("_", "-") for k in missing))
    return command, cfg


# ---------------------------------------------------------------- helpers

def _dump(path: Path, doc) -> Path:
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _existing(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise InputError(f"file not found: {p}")
    return p


def _raw(d: LoadCurveDataset) -> LoadCurveDataset:
    return denormalize(d) if d.is_normalized else d


def _model_format(path: Path) -> str:
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise InputError(f"{path}: not a model file ({exc})") from exc
    fmt = doc.get("format") if isinstance(doc, dict) else None
    if fmt not in ("evgen-gan", "evgen-gmm"):
        raise InputError(f"{path}: unrecognised model format {fmt!r}")
    return fmt


def _parse_fix_c(items) -> dict[int, float]:
    out = {}
    for item in items or []:
        try:
            k, v = item.split("=")
            out[int(k)] = float(v)
        except ValueError:
            raise InputError(f"--fix-c expects INDEX=VALUE, got {item!r}") from None
    return out


def _float_list(text) -> list[float]:
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise InputError(f"expected comma-separated numbers, got {text!r}") from None


# ---------------------------------------------------------------- commands

def cmd_ingest(cfg: dict, out: Path) -> dict:
    sessions, rejected = parse_sessions(_existing(cfg["sessions"]))
    if not sessions:
        raise InputError(f"{cfg['sessions']}: every row was rejected")
    raw = sessions_to_dataset(sessions)
    # one scale for the whole corpus so train and test share units
    normed, stats = normalize(raw)
    train, test = split(normed, cfg["ratio"], seed=cfg["seed"])
    write_dataset(out / "train.csv", train)
    write_dataset(out / "test.csv", test)
    _dump(out / "stats.json", asdict(stats))
    report = {"sessions_read": len(sessions) + len(rejected), "sessions_kept": len(sessions),
              "rejected": [{"row": r, "reason": why} for r, why in rejected],
              "n_train": len(train), "n_test": len(test), "scale": stats.scale}
    _dump(out / "ingest_report.json", report)
    print(f"kept {len(sessions)} sessions, rejected {len(rejected)}; train {len(train)}, test {len(test)}")
    return report


def cmd_train_gmm(cfg: dict, out: Path) -> dict:
    from .gmm import EmConfig, em_fit, extract_triples, save_gmm

    data = _raw(read_dataset(_existing(cfg["data"])))
    em_cfg = EmConfig(clusters=cfg["clusters"], tol=cfg["tol"], max_iter=cfg["max_iter"], seed=cfg["seed"])
    params, trace = em_fit(extract_triples(data), em_cfg)
    save_gmm(out / "gmm.json", params)
    lines = ["iteration,mean_log_likelihood"] + [f"{i},{v!r}" for i, v in enumerate(trace)]
    (out / "trace.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"K={params.n_clusters}: {len(trace)} iterations, mean log-likelihood {trace[-1]:.6f}")
    return {"iterations": len(trace), "final_log_likelihood": trace[-1]}


def cmd_train_gan(cfg: dict, out: Path) -> dict:
    from .scgan import TrainConfig, train

    data = read_dataset(_existing(cfg["data"]))
    if not data.is_normalized:
        data, _ = normalize(data)
        log.info("normalized raw training curves by their global maximum")
    tc = TrainConfig(epochs=cfg["epochs"], batch_size=cfg["batch"], condition_kind=cfg["condition"],
                     n_categories=cfg["categories"], lambda_gp=cfg["lambda_gp"], lambda_sc=cfg["lambda_sc"],
                     n_critic=cfg["n_critic"], lr=cfg["lr"], lr_patience=cfg["lr_patience"],
                     checkpoint_every=cfg["checkpoint_every"], seed=cfg["seed"])
    model = train(data, tc, out_dir=out)
    print(f"trained {model.epochs_trained} epochs; checkpoint {out / 'final.json'}")
    return {"epochs": model.epochs_trained}


def cmd_generate(cfg: dict, out: Path) -> dict:
    path = _existing(cfg["model"])
    n = cfg["n"]
    if n < 1:
        raise InputError("--n must be >= 1")
    if _model_format(path) == "evgen-gmm":
        from .gmm import load_gmm, sample_curves

        if cfg["fix_c"] or cfg["category"] is not None:
            raise InputError("--fix-c and --category apply to GAN models only")
        curves = sample_curves(load_gmm(path), n, seed=cfg["seed"])
    else:
        from .scgan import CODE_DIM, CONTINUOUS, generate, load_model, one_hot, sample_latent

        model = load_model(path)
        z, c = sample_latent(n, model.condition_kind, cfg["seed"], n_categories=model.n_categories)
        fixed = _parse_fix_c(cfg["fix_c"])
        if fixed and model.condition_kind != CONTINUOUS:
            raise InputError("--fix-c needs a continuous-condition model")
        for k, v in fixed.items():
            if not 0 <= k < CODE_DIM:
                raise InputError(f"--fix-c index must lie in [0, {CODE_DIM}), got {k}")
            c[:, k] = v
        if cfg["category"] is not None:
            k = cfg["category"]
            if model.condition_kind == CONTINUOUS:
                raise InputError("--category needs a discrete-condition model")
            if not 0 <= k < model.n_categories:
                raise InputError(f"--category must lie in [0, {model.n_categories}), got {k}")
            c = one_hot([k] * n, dtype=c.dtype)
        curves = generate(model, z, c)
    write_dataset(out / "generated.csv", curves)
    print(f"wrote {len(curves)} curves to {out / 'generated.csv'}")
    return {"n": len(curves)}


def cmd_evaluate(cfg: dict, out: Path) -> dict:
    from .evaluation import compare, gmm_cluster_sweep, plot_report
    from .gmm import EmConfig

    real = _raw(read_dataset(_existing(cfg["real"])))
    synth = cfg["synth"] if isinstance(cfg["synth"], list) else [cfg["synth"]]
    if not synth and not cfg["sweep_k"]:
        raise InputError("evaluate needs --synth and/or --sweep-k")
    summary = {}
    for i, s in enumerate(synth):
        p = _existing(s)
        name = f"{i:02d}_{p.stem}"
        plot_dir = out / "plots" / name if cfg["plots"] else None
        r = compare(real, _raw(read_dataset(p)), plot_dir=plot_dir, labels=("real", p.stem),
                    config={"real": str(cfg["real"]), "synth": str(s)})
        r.save(out / f"report_{name}.json")
        summary[name] = {"ks_distance": r.ks_distance, "log_spectral_distance": r.log_spectral_distance}
        print(f"{p.name}: KS {r.ks_distance:.4f}  LSD {r.log_spectral_distance:.3f} dB")
    if cfg["sweep_k"]:
        ks = [int(k) for k in _float_list(cfg["sweep_k"])]
        em_cfg = EmConfig(tol=cfg["tol"], max_iter=cfg["max_iter"], seed=cfg["seed"])
        reports = gmm_cluster_sweep(real, ks, em_cfg)
        for k, r in zip(ks, reports):
            r.save(out / f"sweep_k{k}.json")
            summary[f"k{k}"] = {"ks_distance": r.ks_distance, "log_spectral_distance": r.log_spectral_distance}
            print(f"K={k}: KS {r.ks_distance:.4f}  LSD {r.log_spectral_distance:.3f} dB")
            if cfg["plots"]:
                plot_report(r, out / "plots" / f"k{k}", labels=("real", f"GMM K={k}"))
    _dump(out / "summary.json", summary)
    return summary


def cmd_sweep(cfg: dict, out: Path) -> dict:
    from .scgan import condition_sweep, load_model

    path = _existing(cfg["model"])
    if _model_format(path) != "evgen-gan":
        raise InputError("sweep needs a GAN checkpoint")
    model = load_model(path)
    values = _float_list(cfg["values"])
    bundles = condition_sweep(model, cfg["var"], values, cfg["n_per_value"], seed=cfg["seed"])
    doc = [{k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in b.items()} for b in bundles]
    _dump(out / "sweep.json", doc)
    if cfg["plots"]:
        from .evaluation import plot_sweep

        plot_sweep(bundles, out / "sweep.png")
    print(f"swept code entry {cfg['var']} over {values}")
    return {"values": values}


COMMANDS = {"ingest": cmd_ingest, "train-gmm": cmd_train_gmm, "train-gan": cmd_train_gan,
            "generate": cmd_generate, "evaluate": cmd_evaluate, "sweep": cmd_sweep}


def main(argv=None) -> int:
    from .gmm import EmError
    from .scgan import TrainingDiverged

    try:
        command, cfg = resolve(argv)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    logging.basicConfig(level=getattr(logging, str(cfg["log_level"]).upper(), logging.INFO),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    _dump(out / "config.json", {"command": command, **cfg})
    t0 = time.time()
    status = EXIT_OK
    try:
        COMMANDS[command](cfg, out)
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(f"last checkpoint: {exc.last_checkpoint}", file=sys.stderr)
        status = EXIT_DIVERGED
    except (InputError, SessionFileError, FileNotFoundError, EmError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        status = EXIT_INPUT
    _dump(out / "run_meta.json", {
        "command": command, "exit_code": status, "evgen_version": __version__,
        "python": platform.python_version(), "numpy": np.__version__,
        "started": time.strftime("%Y-%m-%dT%H:%M:%S%z", time.localtime(t0)),
        "elapsed_s": round(time.time() - t0, 3)})
    return status


if __name__ == "__main__":
    sys.exit(main())
