"""Command-line entry point: gen-data, train, eval, sample, replay.

Every subcommand accepts --seed, --config and --out, reads an optional
JSON config file (sections: "generator", "training", "backend"; explicit
flags win over file values), and writes a run manifest next to its
outputs. Failure classes map to distinct exit codes so scripts can react:
config 2, data 3, training 4, backend 5.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import __version__
from .datagen import GeneratorConfig, generate_dataset, read_dataset, write_dataset
from .errors import BackendError, ConfigError, DataError, GazeshiftError, TrainingError
from .prior import ConditionalPrior
from .reasoner import OracleBackend, RemoteBackend, ScriptedBackend, load_scenario_dir
from .reasoner.backends import RemoteConfig
from .reasoner.replay import replay_evaluate, write_success_table
from .so3 import EyePose, HeadPose
from .trainer import (METRICS_FILE, PRIOR_CHECKPOINT, STAGE1_CHECKPOINT,
                      TrainConfig, dataset_arrays, infer, record_codes,
                      run_training, validate_stage1, validate_stage2)
from .vqvae import ConditionalVQVAE, ConditionVector

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_TRAINING = 4
EXIT_BACKEND = 5

_EXIT_BY_ERROR = (
    (ConfigError, EXIT_CONFIG),
    (DataError, EXIT_DATA),
    (TrainingError, EXIT_TRAINING),
    (BackendError, EXIT_BACKEND),
)

DIVERSITY_THRESHOLD = 0.05  # report codes the prior rates above 5%


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_json_atomic(doc: dict, path) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_manifest(out_dir, subcommand: str, config: dict, inputs: list,
                   outputs: list, elapsed_s: float, extra: dict | None = None) -> Path:
    manifest = {
        "subcommand": subcommand,
        "argv": sys.argv[1:],
        "version": __version__,
        "config": config,
        "inputs": {str(p): sha256_file(p) for p in inputs},
        "outputs": [str(p) for p in outputs],
        "elapsed_s": elapsed_s,
    }
    if extra:
        manifest.update(extra)
    path = Path(out_dir) / "manifest.json"
    for out in outputs:
        if not Path(out).exists():
            raise GazeshiftError(f"manifest names missing output {out}")
    write_json_atomic(manifest, path)
    return path


def load_config_file(path) -> dict:
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    unknown = set(doc) - {"generator", "training", "backend"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    return doc


def _generator_config(doc: dict) -> GeneratorConfig:
    section = dict(doc.get("generator", {}))
    return GeneratorConfig.from_dict(section)


def _train_config(doc: dict, seed_flag) -> TrainConfig:
    section = dict(doc.get("training", {}))
    if seed_flag is not None:
        section["seed"] = seed_flag
    return TrainConfig.from_dict(section)


def _parse_floats(text: str, n: int, what: str) -> list:
    parts = text.split(",")
    if len(parts) != n:
        raise ConfigError(f"{what} needs {n} comma-separated values, got {len(parts)}")
    try:
        return [float(p) for p in parts]
    except ValueError as exc:
        raise ConfigError(f"{what}: {exc}") from exc


# -- subcommands ---------------------------------------------------------------

def cmd_gen_data(args) -> int:
    t0 = time.monotonic()
    doc = load_config_file(args.config)
    config = _generator_config(doc)
    seed = 0 if args.seed is None else args.seed
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset = generate_dataset(seed=seed, config=config)
    dataset_path = out_dir / "dataset.jsonl"
    write_dataset(dataset, dataset_path)
    print(f"wrote {len(dataset.samples)} samples "
          f"({len(dataset.train_samples())} train / {len(dataset.val_samples())} val) "
          f"to {dataset_path}")
    write_manifest(out_dir, "gen-data", {"seed": seed, "generator": config.to_dict()},
                   inputs=[], outputs=[dataset_path],
                   elapsed_s=time.monotonic() - t0,
                   extra={"dataset_hash": dataset.content_hash()})
    return EXIT_OK


def cmd_train(args) -> int:
    t0 = time.monotonic()
    doc = load_config_file(args.config)
    config = _train_config(doc, args.seed)
    dataset = read_dataset(args.dataset)
    out_dir = Path(args.out)
    summary = run_training(dataset, config, out_dir, stage=args.stage)
    for stage_key in ("stage1", "stage2"):
        if stage_key in summary:
            best = summary[stage_key]
            print(f"{stage_key}: best epoch {best['best_epoch']}, "
                  f"val eye MGD {best['val_eye_mgd_deg']:.3f} deg, "
                  f"val head MGD {best['val_head_mgd_deg']:.3f} deg")
    write_manifest(out_dir, "train", {"training": config.to_dict(), "stage": args.stage},
                   inputs=[args.dataset], outputs=summary["outputs"],
                   elapsed_s=time.monotonic() - t0,
                   extra={"dataset_hash": summary["dataset_hash"],
                          "best": {k: summary[k] for k in ("stage1", "stage2") if k in summary}})
    return EXIT_OK


def _load_models(run_dir):
    run = Path(run_dir)
    try:
        model, _ = ConditionalVQVAE.load(run / STAGE1_CHECKPOINT)
        prior, _ = ConditionalPrior.load(run / PRIOR_CHECKPOINT,
                                         expect_stage1_fingerprint=model.fingerprint())
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        raise TrainingError(f"cannot load checkpoints from {run}: {exc}") from exc
    return model, prior


def cmd_eval(args) -> int:
    t0 = time.monotonic()
    dataset = read_dataset(args.dataset)
    model, prior = _load_models(args.run)
    Yv, Cv, eye_v, head_v = dataset_arrays(dataset, "val")
    eye1, head1, utilization = validate_stage1(model, Yv, Cv, eye_v, head_v)
    val_labels = np.array([lab.index for lab in record_codes(model, dataset, "val")])
    eye2, head2, top1 = validate_stage2(model, prior, Cv, eye_v, head_v, val_labels)

    # How each code splits work between head and eyes, over validation
    # conditions that argmax-decode to it.
    pi = prior.forward_rows(Cv)
    codes = np.argmax(pi, axis=1)
    per_code = {}
    for k in sorted(set(int(c) for c in codes)):
        rows = np.where(codes == k)[0]
        pred = model.decode_rows(np.tile(model.codebook[k], (len(rows), 1)), Cv[rows])
        head_mag = np.linalg.norm(pred[:, 2:4], axis=1)
        eye_mag = np.linalg.norm(pred[:, 0:2], axis=1)
        ratio = head_mag / np.maximum(head_mag + eye_mag, 1e-12)
        per_code[str(k)] = {"val_count": int(len(rows)),
                            "mean_head_contribution": float(ratio.mean())}
    report = {
        "stage1": {"val_eye_mgd_deg": eye1, "val_head_mgd_deg": head1,
                   "codebook_utilization": utilization},
        "stage2": {"val_eye_mgd_deg": eye2, "val_head_mgd_deg": head2,
                   "prior_top1_acc": top1},
        "per_code": per_code,
    }
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report_path = out_dir / "eval.json"
    write_json_atomic(report, report_path)
    print(f"stage1 val MGD eye {eye1:.3f} / head {head1:.3f} deg, utilization {utilization:.2f}")
    print(f"stage2 val MGD eye {eye2:.3f} / head {head2:.3f} deg, top-1 {top1:.3f}")
    print(f"report: {report_path}")
    write_manifest(out_dir, "eval", {}, inputs=[args.dataset,
                   Path(args.run) / STAGE1_CHECKPOINT, Path(args.run) / PRIOR_CHECKPOINT],
                   outputs=[report_path], elapsed_s=time.monotonic() - t0)
    return EXIT_OK


def cmd_sample(args) -> int:
    t0 = time.monotonic()
    model, prior = _load_models(args.run)
    eye = _parse_floats(args.eye, 2, "--eye")
    head = _parse_floats(args.head, 3, "--head")
    target = _parse_floats(args.target, 3, "--target")
    try:
        condition = ConditionVector(
            eye=EyePose(*[math.radians(v) for v in eye]),
            head=HeadPose(*[math.radians(v) for v in head]),
            target=np.array(target),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    seed = 0 if args.seed is None else args.seed
    rng = np.random.default_rng(seed)
    samples = []
    for _ in range(args.n):
        result = infer(model, prior, condition, mode=args.mode, rng=rng)
        samples.append({
            "code": result.code,
            "delta_eye_deg": [math.degrees(v) for v in result.allocation.delta_eye],
            "delta_head_deg": [math.degrees(v) for v in result.allocation.delta_head],
        })
    pi = prior.forward(condition)
    diverse = {str(k): float(pi[k]) for k in range(len(pi)) if pi[k] > DIVERSITY_THRESHOLD}
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = {
        "condition": {"eye_deg": eye, "head_deg": head, "target_m": target},
        "mode": args.mode,
        "seed": seed,
        "samples": samples,
        "pi": [float(p) for p in pi],
        "codes_above_threshold": diverse,
    }
    report_path = out_dir / "samples.json"
    write_json_atomic(report, report_path)
    print(f"{args.n} draws ({args.mode}); codes with prior probability > "
          f"{DIVERSITY_THRESHOLD:.0%}: "
          f"{', '.join(f'{k} ({v:.1%})' for k, v in sorted(diverse.items())) or 'none'}")
    print(f"report: {report_path}")
    write_manifest(out_dir, "sample",
                   {"seed": seed, "mode": args.mode, "n": args.n},
                   inputs=[Path(args.run) / STAGE1_CHECKPOINT, Path(args.run) / PRIOR_CHECKPOINT],
                   outputs=[report_path], elapsed_s=time.monotonic() - t0)
    return EXIT_OK


def _make_backend_factory(args, doc: dict):
    kind = args.backend
    if kind == "scripted":
        return lambda scenario: ScriptedBackend(scenario)
    if kind == "oracle":
        return lambda scenario: OracleBackend(scenario, delay=1)
    if kind == "adversarial":
        return lambda scenario: OracleBackend(scenario, delay=3)
    if kind == "remote":
        section = doc.get("backend")
        if not section:
            raise ConfigError("remote backend requires a 'backend' config section")
        config = RemoteConfig.from_dict(section)
        backend = RemoteBackend(config)
        # Fail fast here: inside the replay loop every backend error is
        # absorbed by the per-cycle fallback, which would silently turn a
        # bad credential into a 0% run.
        backend.preflight()
        return lambda scenario: backend
    raise ConfigError(f"unknown backend {kind!r}")


def cmd_replay(args) -> int:
    t0 = time.monotonic()
    doc = load_config_file(args.config)
    scenario_dir = args.scenarios or str(Path(__file__).parent / "scenarios")
    scenarios = load_scenario_dir(scenario_dir)
    factory = _make_backend_factory(args, doc)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / "cycles.jsonl"
    rows, results, excluded = replay_evaluate(scenarios, factory, log_path=log_path)
    table_path = out_dir / "success_table.csv"
    write_success_table(rows, table_path)
    for row in rows:
        print(f"{row.regularity}: {row.clips} clips, {row.correct} correct, "
              f"{row.success_rate:.1f}%")
    if excluded:
        print(f"excluded (no evaluation metadata): {', '.join(excluded)}")
    inputs = sorted(Path(scenario_dir).glob("*.json"))
    write_manifest(out_dir, "replay", {"backend": args.backend},
                   inputs=inputs, outputs=[table_path, log_path],
                   elapsed_s=time.monotonic() - t0,
                   extra={"excluded": excluded})
    return EXIT_OK


# -- argument wiring -----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gazeshift",
        description="Gaze-shift toolkit: synthetic data, two-stage training, "
                    "diverse sampling, and scripted gaze-reasoning replay.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None, help="rng seed (default 0)")
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--out", default="runs/latest", help="output directory")

    p = sub.add_parser("gen-data", help="generate a synthetic gaze-shift dataset")
    common(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="run stage-1/stage-2 training")
    common(p)
    p.add_argument("--dataset", required=True, help="dataset JSONL path")
    p.add_argument("--stage", choices=("1", "2", "both"), default="both")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate trained checkpoints on a dataset")
    common(p)
    p.add_argument("--dataset", required=True, help="dataset JSONL path")
    p.add_argument("--run", required=True, help="training output directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sample", help="draw diverse allocations for one condition")
    common(p)
    p.add_argument("--run", required=True, help="training output directory")
    p.add_argument("--n", type=int, default=10, help="number of draws")
    p.add_argument("--mode", choices=("sample", "argmax"), default="sample")
    p.add_argument("--eye", default="0,0", help="current eye yaw,pitch (degrees)")
    p.add_argument("--head", default="0,0,0", help="current head yaw,pitch,roll (degrees)")
    p.add_argument("--target", default="1.5,0.8,0.2", help="gaze target x,y,z (metres)")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("replay", help="replay scenarios through a backend")
    common(p)
    p.add_argument("--scenarios", default=None,
                   help="scenario directory (default: bundled corpus)")
    p.add_argument("--backend", choices=("scripted", "oracle", "adversarial", "remote"),
                   default="scripted")
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except GazeshiftError as exc:
        print(f"error: {exc}", file=sys.stderr)
        for err_type, code in _EXIT_BY_ERROR:
            if isinstance(exc, err_type):
                return code
        return 1


if __name__ == "__main__":
    sys.exit(main())
