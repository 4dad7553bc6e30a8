"""Command line: gen-data, train, eval, benchmark, stream.

Configuration is a JSON file (``--config`` or the ``RNTK_CONFIG``
environment variable) whose sections mirror the library's config objects;
``--set section.key=value`` overrides single values. Every command writes
the fully resolved configuration into its output directory.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
Errors are printed to stderr as ``rntk: error: <kind>: <message>``.
"""

from __future__ import annotations

import argparse
import copy
import dataclasses
import json
import os
import sys

from . import toy
from .decode import DecodeConfig, MicCloserConfig, Recognizer, finalize, format_partials, stream_step
from .errors import ConfigError, RntkError
from .evaluation import benchmark, benchmark_sweep, default_fusion, endpointing_sweep, evaluate, is_codeswitch
from .frontend import AugmentConfig
from .model import ModelConfig, load_checkpoint, save_checkpoint
from .synthdata import SilenceConfig, read_dataset, write_dataset
from .training import OptimizerConfig, train_endpointer, train_stage1, train_stage2_eou
from .transducer import LossConfig

CONFIG_ENV = "RNTK_CONFIG"
EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2

DATA_DEFAULTS = toy.DATA

BENCHMARK_DEFAULTS = {
    "max_utterances": 100,
    "streaming": True,
    "predictor_kinds": ["lstm", "embedding"],
    "width_multipliers": [1.0],
}

SECTIONS = {
    "model": ModelConfig,
    "optimizer": OptimizerConfig,
    "eou_optimizer": OptimizerConfig,
    "ep_optimizer": OptimizerConfig,
    "loss": LossConfig,
    "augment": AugmentConfig,
    "mic": MicCloserConfig,
    "decode": DecodeConfig,
}

TOP_LEVEL = {"seed", "output_dir", "data_dir", "lid", "joint_endpointer", "ep_branch_kind", "data", "benchmark"}

STAGE_OPTIMIZER_DEFAULTS = {
    "optimizer": {"max_steps": toy.STAGE1_STEPS},
    "eou_optimizer": {"max_steps": toy.EOU_STEPS, "peak_lr": 3e-3, "warmup_steps": 50},
    "ep_optimizer": {"max_steps": toy.EP_STEPS, "peak_lr": 3e-3, "warmup_steps": 50},
}


def _fields(cls):
    return {f.name for f in dataclasses.fields(cls)}


def default_config():
    cfg = {
        "seed": 0,
        "output_dir": "run",
        "data_dir": None,
        "lid": False,
        "joint_endpointer": False,
        "ep_branch_kind": None,
        "data": copy.deepcopy(DATA_DEFAULTS),
        "benchmark": copy.deepcopy(BENCHMARK_DEFAULTS),
    }
    for name in SECTIONS:
        cfg[name] = copy.deepcopy(STAGE_OPTIMIZER_DEFAULTS.get(name, {}))
    return cfg


def _merge(base, override, where):
    for key, value in override.items():
        if key not in base:
            raise ConfigError(f"unknown config key {where}{key!r}")
        if isinstance(base[key], dict) and key != "silence" and isinstance(value, dict):
            _merge(base[key], value, f"{where}{key}.")
        else:
            base[key] = value


def _check_sections(cfg):
    for name, cls in SECTIONS.items():
        unknown = set(cfg[name]) - _fields(cls)
        if unknown:
            raise ConfigError(f"unknown config key(s) in {name!r}: {sorted(unknown)}")
    unknown = set(cfg["data"]["silence"]) - _fields(SilenceConfig)
    if unknown:
        raise ConfigError(f"unknown config key(s) in 'data.silence': {sorted(unknown)}")


def _open_sections(cfg):
    """Sections backed by dataclasses accept any of their fields."""
    for name, cls in SECTIONS.items():
        cfg[name] = {**{k: None for k in _fields(cls)}, **cfg[name]}


def _strip_unset(cfg):
    for name in SECTIONS:
        cfg[name] = {k: v for k, v in cfg[name].items() if v is not None}
    return cfg


def parse_assignment(text):
    if "=" not in text:
        raise ConfigError(f"--set expects key=value, got {text!r}")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    out = value
    for part in reversed(key.split(".")):
        out = {part: out}
    return out


def load_config(path=None, overrides=()):
    """Defaults, then the config file, then ``--set`` overrides; unknown keys are errors."""
    cfg = default_config()
    _open_sections(cfg)
    path = path or os.environ.get(CONFIG_ENV)
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc.msg} (line {exc.lineno})") from None
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        _merge(cfg, data, "")
    for item in overrides:
        _merge(cfg, parse_assignment(item), "")
    cfg = _strip_unset(cfg)
    _check_sections(cfg)
    unknown = set(cfg) - TOP_LEVEL - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    return cfg


def build(cfg, name, **extra):
    try:
        return SECTIONS[name](**{**cfg[name], **extra})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {name!r} section: {exc}") from None


def stage_optimizer(cfg, name):
    return build(cfg, name, seed=cfg[name].get("seed", cfg["seed"]))


def model_config(cfg, feature_dim, num_languages):
    base = dict(cfg["model"])
    base.setdefault("input_dim", 3 * feature_dim + num_languages)
    base.setdefault("lid_dim", num_languages)
    base.setdefault("vocab_size", cfg["data"]["num_languages"] * cfg["data"]["tokens_per_language"])
    try:
        mc = ModelConfig(**base)
        mc.validate()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid 'model' section: {exc}") from None
    return mc


# ---------------------------------------------------------------- paths


def out_dir(cfg):
    path = cfg["output_dir"]
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {path}: {exc.strerror}") from None
    if not os.access(path, os.W_OK):
        raise ConfigError(f"output directory {path} is not writable")
    return path


def data_dir(cfg):
    return cfg["data_dir"] or os.path.join(cfg["output_dir"], "data")


def split_path(cfg, split):
    return os.path.join(data_dir(cfg), f"{split}.jsonl")


def echo_config(cfg, command):
    path = os.path.join(out_dir(cfg), f"resolved_config.{command}.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_split(cfg, split, path=None):
    path = path or split_path(cfg, split)
    if not os.path.exists(path):
        raise ConfigError(f"dataset {path} not found (run gen-data first)")
    return read_dataset(path)


def ckpt_path(cfg, stage):
    return os.path.join(cfg["output_dir"], f"{stage}.ckpt")


def latest_checkpoint(cfg):
    for stage in ("ep", "eou", "stage1"):
        if os.path.exists(ckpt_path(cfg, stage)):
            return ckpt_path(cfg, stage)
    return None


# ---------------------------------------------------------------- commands


def cmd_gen_data(cfg, args):
    d = cfg["data"]
    if d["num_languages"] < 2:
        raise ConfigError("data.num_languages must be >= 2 for a code-switch split")
    try:
        specs = toy.languages(d, cfg["seed"])
        toy.silence_config(d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid 'data' section: {exc}") from None
    root = data_dir(cfg)
    try:
        os.makedirs(root, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create data directory {root}: {exc.strerror}") from None
    manifest = {"seed": cfg["seed"], "feature_dim": d["feature_dim"], "splits": {}}
    for split in toy.SPLIT_OFFSETS:
        records = toy.make_split(specs, d, split, cfg["seed"])
        write_dataset(records, split_path(cfg, split), d["feature_dim"])
        manifest["splits"][split] = _counts(records)
    with open(os.path.join(root, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(json.dumps(manifest["splits"], sort_keys=True))
    return EXIT_OK


def _counts(records):
    out = {}
    for r in records:
        out[r.language_tag] = out.get(r.language_tag, 0) + 1
    out["total"] = len(records)
    return out


def cmd_train(cfg, args):
    stage = args.stage
    if stage == "1":
        train = read_split(cfg, "train", args.dataset)
        nl = cfg["data"]["num_languages"] if cfg["lid"] else 0
        mc = model_config(cfg, train[0].frames.shape[1], nl)
        ckpt, log = train_stage1(
            train, mc, stage_optimizer(cfg, "optimizer"), build(cfg, "loss"), build(cfg, "augment"),
            num_languages=nl, joint_endpointer=cfg["joint_endpointer"],
            log_path=os.path.join(out_dir(cfg), "stage1.log"),
        )
        path = ckpt_path(cfg, "stage1")
    else:
        source = args.checkpoint or (ckpt_path(cfg, "eou") if stage == "ep" and os.path.exists(ckpt_path(cfg, "eou")) else ckpt_path(cfg, "stage1"))
        if not os.path.exists(source):
            raise ConfigError(f"stage-1 checkpoint required for --stage {stage} (looked for {source})")
        base = load_checkpoint(source)
        train = read_split(cfg, "train", args.dataset)
        if stage == "eou":
            ckpt, log = train_stage2_eou(base, train, stage_optimizer(cfg, "eou_optimizer"), os.path.join(out_dir(cfg), "eou.log"))
            path = ckpt_path(cfg, "eou")
        else:
            dev = read_split(cfg, "dev")
            ckpt, log, acc = train_endpointer(
                base, train, stage_optimizer(cfg, "ep_optimizer"), cfg["ep_branch_kind"], dev,
                os.path.join(out_dir(cfg), "ep.log"),
            )
            path = ckpt_path(cfg, "ep")
            print(json.dumps({"dev_final_silence_accuracy": acc}))
    save_checkpoint(ckpt, path)
    print(json.dumps({"checkpoint": path, "steps": len(log.entries), "final_loss": log.losses[-1] if log.entries else None}))
    return EXIT_OK


def _checkpoint_arg(cfg, args):
    path = args.checkpoint or latest_checkpoint(cfg)
    if not path or not os.path.exists(path):
        raise ConfigError("no checkpoint found; pass --checkpoint or train first")
    return load_checkpoint(path)


def _eval_records(cfg, args):
    if args.dataset:
        return read_split(cfg, None, args.dataset)
    records = read_split(cfg, "eval")
    if os.path.exists(split_path(cfg, "codeswitch_eval")):
        records += read_split(cfg, "codeswitch_eval")
    return records


def cmd_eval(cfg, args):
    ckpt = _checkpoint_arg(cfg, args)
    records = _eval_records(cfg, args)
    if int(ckpt.meta.get("num_languages", 0)) and any(is_codeswitch(r) for r in records) and not args.force:
        raise ConfigError(
            "checkpoint takes a language ID, which is undefined for code-switch records; "
            "pass --force to decode them with language 0"
        )
    report, details = evaluate(ckpt, records, build(cfg, "decode"), _mic(cfg, ckpt), force=args.force)
    root = out_dir(cfg)
    partials = report.extra.pop("partials", {})
    if partials:
        pdir = os.path.join(root, "partials")
        os.makedirs(pdir, exist_ok=True)
        for rid, text in partials.items():
            with open(os.path.join(pdir, f"{rid}.tsv"), "w", encoding="utf-8") as fh:
                fh.write(text)
    if ckpt.has_eou_joint:
        report.extra["endpointing_sweep"] = endpointing_sweep(ckpt, [r for r in records if not is_codeswitch(r)])
    report.write(os.path.join(root, "report.json"))
    with open(os.path.join(root, "report.csv"), "w", encoding="utf-8") as fh:
        fh.write(report.to_csv())
    with open(os.path.join(root, "eval_details.jsonl"), "w", encoding="utf-8") as fh:
        for d in details:
            fh.write(json.dumps(d, sort_keys=True) + "\n")
    print(report.to_json())
    return EXIT_OK


def _mic(cfg, ckpt):
    if cfg["mic"]:
        return build(cfg, "mic")
    return None


def cmd_benchmark(cfg, args):
    ckpt = _checkpoint_arg(cfg, args)
    b = cfg["benchmark"]
    records = [r for r in _eval_records(cfg, args) if not is_codeswitch(r)][: b["max_utterances"]]
    rows = [benchmark(ckpt, records, streaming=b["streaming"])]
    if args.sweep:
        rows += benchmark_sweep(ckpt, records, b["predictor_kinds"], b["width_multipliers"], streaming=b["streaming"])
    out = {
        "rows": rows,
        "notes": [
            "wall-clock fields vary between runs; MAC and byte counts are exact",
            "the embedding predictor row is expected to show fewer decoder MACs per step",
        ],
    }
    with open(os.path.join(out_dir(cfg), "benchmark.json"), "w", encoding="utf-8") as fh:
        json.dump(out, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(json.dumps(out, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_stream(cfg, args):
    ckpt = _checkpoint_arg(cfg, args)
    records = _eval_records(cfg, args)
    if args.record_id is not None:
        match = [r for r in records if r.id == args.record_id]
        if not match:
            raise ConfigError(f"record {args.record_id!r} not in dataset")
        record = match[0]
    else:
        if not 0 <= args.index < len(records):
            raise ConfigError(f"--index {args.index} out of range (dataset has {len(records)} records)")
        record = records[args.index]
    rule = default_fusion(ckpt)
    decode_cfg = build(cfg, "decode")
    if rule is None:
        decode_cfg = dataclasses.replace(decode_cfg, endpointing=False)
    mic = _mic(cfg, ckpt) or MicCloserConfig(fusion_rule=rule or "either")
    rec = Recognizer(ckpt, decode_cfg, mic)
    feats = rec.features(record, force=args.force)
    state = rec.new_stream()
    print(f"# record {record.id} lang {record.language_tag} ref {' '.join(map(str, record.tokens))}", flush=True)
    for f in feats:
        stream_step(state, f)
        sys.stdout.write(format_partials(state.partials[-1:]))
        sys.stdout.flush()
        if state.mic_closed:
            break
    res = finalize(state)
    print(f"# final {' '.join(map(str, res.tokens)) or '-'} close_frame {res.close_frame} trigger {res.trigger}", flush=True)
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "benchmark": cmd_benchmark,
    "stream": cmd_stream,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"rntk: error: usage: {message}\n")
        raise SystemExit(EXIT_USAGE)


def build_parser():
    p = _Parser(prog="rntk", description="Streaming multilingual transducer toolkit.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help=f"JSON config (default: ${CONFIG_ENV})")
        s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config value")
        s.add_argument("--output-dir")
        s.add_argument("--seed", type=int)
        if name == "train":
            s.add_argument("--stage", choices=["1", "eou", "ep"], required=True)
        if name != "gen-data":
            s.add_argument("--checkpoint")
            s.add_argument("--dataset")
        if name in ("eval", "stream"):
            s.add_argument("--force", action="store_true", help="decode code-switch records with a language-ID model")
        if name == "benchmark":
            s.add_argument("--sweep", action="store_true")
        if name == "stream":
            s.add_argument("--record-id")
            s.add_argument("--index", type=int, default=0)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        overrides = list(args.set)
        if args.output_dir is not None:
            overrides.append(f"output_dir={json.dumps(args.output_dir)}")
        if args.seed is not None:
            overrides.append(f"seed={args.seed}")
        cfg = load_config(args.config, overrides)
        echo_config(cfg, args.command)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        sys.stderr.write(f"rntk: error: config: {exc}\n")
        return EXIT_USAGE
    except RntkError as exc:
        sys.stderr.write(f"rntk: error: {type(exc).__name__}: {exc}\n")
        return EXIT_RUNTIME
    except OSError as exc:
        sys.stderr.write(f"rntk: error: io: {exc}\n")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
