"""Command-line interface: ``ltr train|eval|predict|synth``.

Settings resolve as command-line flag > JSON config file (``--config``) >
built-in default. The config file is one flat JSON object holding model
settings (see ``RankingConfig``) and run settings (paths). ``synth`` reads
``SyntheticSpec`` fields from it instead. Every command writes a
``manifest.json`` into ``--out`` that can be passed back as ``--config`` to
reproduce the run.

Exit codes: 0 success, 1 invalid configuration, 2 runtime failure.
"""

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict, fields
from pathlib import Path

from ltr.checkpoint import load_checkpoint, save_checkpoint
from ltr.data import read_lists
from ltr.errors import ConfigError, DomainError, LTRError
from ltr.metrics import MetricKey
from ltr.model import (
    RankingConfig, RankingHead, build_model, build_vocabularies, evaluate, infer_feature_specs, predict, train,
)
from ltr.parallel import shard_data, throughput_report, train_async
from ltr.synthetic import SyntheticSpec, gen_synthetic

log = logging.getLogger("ltr")

COMMANDS = ("train", "eval", "predict", "synth")
RUN_KEYS = ("train_path", "eval_path", "checkpoint", "out")
# flag name -> config key
FLAG_KEYS = {
    "train_path": "train_path",
    "eval_path": "eval_path",
    "checkpoint": "checkpoint",
    "out": "out",
    "list_size": "list_size",
    "group_size": "group_size",
    "loss": "loss",
    "metrics": "metrics",
    "learning_rate": "learning_rate",
    "batch_size": "batch_size",
    "num_steps": "num_steps",
    "workers": "worker_count",
    "seed": "seed",
}
DEFAULT_OUT = "ltr_out"


class ValidationFailed(Exception):
    def __init__(self, errors):
        super().__init__("; ".join(errors))
        self.errors = list(errors)


def build_parser():
    parser = argparse.ArgumentParser(prog="ltr", description="Train, evaluate and apply neural ranking models.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="JSON config file (a previous manifest.json also works)")
    parser.add_argument("--train_path", help="training data (.jsonl listwise, otherwise LIBSVM)")
    parser.add_argument("--eval_path", help="data to evaluate or score")
    parser.add_argument("--checkpoint", help="checkpoint to write (train) or read (eval, predict)")
    parser.add_argument("--out", help=f"output directory (default {DEFAULT_OUT})")
    parser.add_argument("--list_size", type=int)
    parser.add_argument("--group_size", type=int)
    parser.add_argument("--loss")
    parser.add_argument("--metrics", help="comma-separated, e.g. mrr,ndcg@5")
    parser.add_argument("--learning_rate", type=float)
    parser.add_argument("--batch_size", type=int)
    parser.add_argument("--num_steps", type=int)
    parser.add_argument("--workers", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def _read_config_file(path):
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ValidationFailed([f"config file not found: {path}"]) from None
    except json.JSONDecodeError as exc:
        raise ValidationFailed([f"config file {path} is not valid JSON: {exc}"]) from None
    if not isinstance(obj, dict):
        raise ValidationFailed([f"config file {path} must hold a JSON object"])
    obj.pop("command", None)
    obj.pop("outputs", None)
    return obj


def resolve_settings(args):
    """Merges defaults, config file and flags into one flat dict."""
    settings = {"out": DEFAULT_OUT}
    if args.config:
        settings.update(_read_config_file(args.config))
    for flag, key in FLAG_KEYS.items():
        value = getattr(args, flag)
        if value is None:
            continue
        if flag == "metrics":
            value = [m.strip() for m in value.split(",") if m.strip()]
        settings[key] = value
    return settings


def split_settings(settings, model_cls=RankingConfig):
    """Separates run keys from model keys; unknown keys are errors."""
    known = {f.name for f in fields(model_cls)}
    run = {k: settings.get(k) for k in RUN_KEYS}
    model_part = {k: v for k, v in settings.items() if k in known}
    unknown = sorted(k for k in settings if k not in known and k not in RUN_KEYS)
    errors = [f"unknown config key {k!r}" for k in unknown]
    return run, model_part, errors


def _model_config(settings):
    run, part, errors = split_settings(settings)
    config = None
    try:
        config = RankingConfig(**part)
        errors += config.validation_errors()
    except (TypeError, ConfigError) as exc:
        errors.append(str(exc))
    return run, config, errors


def _require_file(run, key, errors):
    path = run.get(key)
    if not path:
        errors.append(f"--{key} is required")
    elif not Path(path).is_file():
        errors.append(f"{key} does not exist: {path}")


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _manifest(command, run, config_dict, **outputs):
    return {"command": command, **{k: v for k, v in run.items() if v is not None}, **config_dict,
            "outputs": outputs}


def cmd_train(settings):
    run, config, errors = _model_config(settings)
    _require_file(run, "train_path", errors)
    if errors:
        raise ValidationFailed(errors)
    out = Path(run["out"])
    out.mkdir(parents=True, exist_ok=True)
    ckpt = Path(run["checkpoint"] or out / "model.ckpt")
    raw = read_lists(run["train_path"])
    if not raw:
        raise DomainError(f"training file {run['train_path']} holds no lists")
    if not config.feature_specs:
        config.feature_specs = tuple(infer_feature_specs(raw))
    model = build_model(config, vocabularies=build_vocabularies(config.feature_specs, raw))
    data = model.prepare(raw)
    outputs = {"checkpoint": str(ckpt), "loss_trace": str(out / "loss.tsv")}
    if config.worker_count == 1:
        _, trace = train(model, data, config.num_steps)
    else:
        result = train_async(model, shard_data(data, config.worker_count), config.num_steps)
        model.params = result.params
        full = result.trace
        trace = [t for i, t in enumerate(full) if (i + 1) % config.log_every == 0 or i == len(full) - 1]
        report = throughput_report({config.worker_count: [(result.total_steps, result.wall_time, None)]})
        outputs["async"] = {
            "throughput": report,
            "dropped_updates": result.dropped,
            "mean_staleness": [r.mean_staleness for r in result.reports],
            "steps_are": "optimizer updates",
        }
    save_checkpoint(model, ckpt)
    with open(out / "loss.tsv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("step\tloss\n")
        for step, loss in trace:
            fh.write(f"{step}\t{loss!r}\n")
    _write_json(out / "manifest.json", _manifest("train", run, config.to_dict(), **outputs))
    log.info("trained %d steps, checkpoint %s", model.global_step, ckpt)
    return 0


def _load_for_apply(run, errors):
    _require_file(run, "checkpoint", errors)
    _require_file(run, "eval_path", errors)
    if errors:
        raise ValidationFailed(errors)
    return load_checkpoint(run["checkpoint"])


def cmd_eval(settings):
    metrics = settings.get("metrics")
    run, _, errors = split_settings(settings)
    errors += _metric_errors(metrics)
    model = _load_for_apply(run, errors)
    if metrics:
        model.head = RankingHead(model.config.loss, metrics, model.optimizer)
        model.config.metrics = tuple(metrics)
    raw = read_lists(run["eval_path"])
    if not raw:
        raise DomainError(f"evaluation file {run['eval_path']} holds no lists")
    report = evaluate(model, model.prepare(raw))
    out = Path(run["out"])
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "report.json", report.to_json())
    (out / "report.txt").write_text(report.to_text() + "\n", encoding="utf-8")
    _write_json(out / "manifest.json", _manifest(
        "eval", run, {"metrics": list(model.config.metrics)},
        report=str(out / "report.json"),
    ))
    print(report.to_text())
    return 0


def _metric_errors(metrics):
    errors = []
    for m in metrics or ():
        try:
            MetricKey.parse(m)
        except ConfigError as exc:
            errors.append(str(exc))
    return errors


def cmd_predict(settings):
    run, _, errors = split_settings(settings)
    model = _load_for_apply(run, errors)
    raw = read_lists(run["eval_path"])
    scores = predict(model, raw)
    out = Path(run["out"])
    out.mkdir(parents=True, exist_ok=True)
    path = out / "predictions.tsv"
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("qid\titem_index\tscore\n")
        for r, s in zip(raw, scores):
            for i, v in enumerate(s):
                fh.write(f"{r.query_id}\t{i}\t{float(v)!r}\n")
    _write_json(out / "manifest.json", _manifest("predict", run, {}, predictions=str(path)))
    return 0


def cmd_synth(settings):
    known = {f.name for f in fields(SyntheticSpec)}
    unknown = sorted(k for k in settings if k not in known and k not in RUN_KEYS)
    errors = [f"unknown synth key {k!r}" for k in unknown]
    spec = SyntheticSpec(**{k: v for k, v in settings.items() if k in known})
    try:
        spec.validate()
    except ConfigError as exc:
        errors += str(exc).split("; ")
    if errors:
        raise ValidationFailed(errors)
    out = Path(settings["out"])
    gen_synthetic(spec, out)
    _write_json(out / "manifest.json", {"command": "synth", "out": str(out), **asdict(spec)})
    return 0


HANDLERS = {"train": cmd_train, "eval": cmd_eval, "predict": cmd_predict, "synth": cmd_synth}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        settings = resolve_settings(args)
        start = time.perf_counter()
        code = HANDLERS[args.command](settings)
        log.info("%s finished in %.2fs", args.command, time.perf_counter() - start)
        return code
    except ValidationFailed as exc:
        print("invalid configuration:", file=sys.stderr)
        for e in exc.errors:
            print(f"  - {e}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return 1
    except (LTRError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
