"""Command-line entry point: ``amtl <subcommand> [options]``.

Settings are resolved as flags > ``--config`` JSON file > defaults. The
resolved settings are written to ``<run-dir>/resolved-config.json`` together
with ``<run-dir>/run.log``; rerunning with that file reproduces the run.
"""
from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys
from dataclasses import asdict, fields
from pathlib import Path

from amtl.audio import AugmentSpec, FrontendConfig
from amtl.errors import AmtlError, ConfigError
from amtl.evaluation import Hypothesis, aggregate_wer, emit_report, format_table, greedy_ctc_decode, read_hypotheses, write_hypotheses
from amtl.losses import LabelMode, MtlWeights
from amtl.manifest import accent_inventory, parse_manifest, summarize
from amtl.model import PRESETS, ModelConfig, build_model, load_checkpoint, save_checkpoint
from amtl.synth import SynthSpec, generate_synthetic_corpus
from amtl.tokenization import Vocabulary, build_char_vocab, train_bpe
from amtl.training import AdamConfig, PretrainConfig, ScheduleConfig, TrainConfig, pretrain, pseudo_label, train

log = logging.getLogger("amtl")

SECTIONS = {
    "model": ModelConfig,
    "frontend": FrontendConfig,
    "schedule": ScheduleConfig,
    "optimizer": AdamConfig,
    "weights": MtlWeights,
    "augment": AugmentSpec,
    "synth": SynthSpec,
}
TRAIN_KEYS = (
    "batch_size",
    "max_epochs",
    "max_steps",
    "label_mode",
    "noisy_labels",
    "freeze_trunk",
    "grad_clip",
    "eval_every",
    "stop_when_fit",
    "checkpoint_every",
    "use_augment",
)
PRETRAIN_KEYS = ("steps", "batch_size", "mask_prob", "span", "num_negatives", "temperature", "chunk_seconds", "grad_clip")


def _defaults() -> dict:
    d = {name: asdict(cls()) for name, cls in SECTIONS.items()}
    d["model"]["preset"] = None
    del d["synth"]["seed"]
    t = TrainConfig()
    d["train"] = {k: getattr(t, k) for k in TRAIN_KEYS if hasattr(t, k)}
    d["train"].update(label_mode="all", noisy_labels=[], use_augment=True)
    p = PretrainConfig()
    d["pretrain"] = {k: getattr(p, k) for k in PRETRAIN_KEYS}
    d["pretrain"]["schedule"] = asdict(p.schedule)
    d["tokenizer"] = {"kind": "char", "vocab_size": 64}
    d["paths"] = {}
    d["seed"] = None
    return d


def _merge(base: dict, override: dict, where: str = "") -> dict:
    for k, v in override.items():
        if k not in base:
            raise ConfigError(f"unknown config key {where}{k}")
        if isinstance(base[k], dict) and k != "paths":
            if not isinstance(v, dict):
                raise ConfigError(f"config key {where}{k} must be an object")
            _merge(base[k], v, f"{where}{k}.")
        else:
            base[k] = v
    return base


def _tuple_fields(cls, values: dict) -> dict:
    out = dict(values)
    for f in fields(cls):
        if isinstance(out.get(f.name), list):
            out[f.name] = tuple(out[f.name])
    return out


def _build(cls, values: dict):
    try:
        return cls(**_tuple_fields(cls, values))
    except TypeError as exc:
        raise ConfigError(f"bad {cls.__name__} settings: {exc}") from None


# flag dest -> (section, key); flags default to None so only explicit ones override
FLAG_MAP = {
    "seed": (None, "seed"),
    "preset": ("model", "preset"),
    "num_layers": ("model", "num_layers"),
    "model_dim": ("model", "model_dim"),
    "dropout": ("model", "dropout"),
    "accent_head": ("model", "accent_head_layer"),
    "aux_layers": ("model", "aux_asr_layers"),
    "stop_gradient": ("model", "accent_stop_gradient"),
    "num_mels": ("frontend", "num_mels"),
    "lambda_asr": ("weights", "lambda_asr"),
    "lambda_acc": ("weights", "lambda_acc"),
    "aux_weight": ("weights", "aux_asr_weight"),
    "label_mode": ("train", "label_mode"),
    "noisy_labels": ("train", "noisy_labels"),
    "batch_size": ("train", "batch_size"),
    "max_epochs": ("train", "max_epochs"),
    "max_steps": ("train", "max_steps"),
    "freeze_trunk": ("train", "freeze_trunk"),
    "no_augment": ("train", "use_augment"),
    "eval_every": ("train", "eval_every"),
    "stop_when_fit": ("train", "stop_when_fit"),
    "lr": ("schedule", "peak_lr"),
    "warmup_steps": ("schedule", "warmup_steps"),
    "hold_steps": ("schedule", "hold_steps"),
    "decay_steps": ("schedule", "decay_steps"),
    "steps": ("pretrain", "steps"),
    "num_utterances": ("synth", "num_utterances"),
    "num_accents": ("synth", "num_accents"),
    "tokens": ("synth", "tokens"),
    "kind": ("tokenizer", "kind"),
    "vocab_size": ("tokenizer", "vocab_size"),
}
PATH_FLAGS = ("manifest", "vocab", "init", "out", "model", "baseline_avg", "format", "name", "hyps", "out_dir")


def resolve(args: argparse.Namespace) -> dict:
    cfg = _defaults()
    if getattr(args, "config", None):
        try:
            loaded = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {args.config} is not valid JSON ({exc.msg})") from None
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        loaded.pop("command", None)
    else:
        loaded = {}
    model_section = loaded.get("model") if isinstance(loaded.get("model"), dict) else {}
    preset = getattr(args, "preset", None) or model_section.get("preset")
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r} (choose from {', '.join(PRESETS)})")
        cfg["model"].update(PRESETS[preset])
    _merge(cfg, loaded)
    for dest, (section, key) in FLAG_MAP.items():
        value = getattr(args, dest, None)
        if value is None:
            continue
        if dest == "no_augment":
            value = not value
        if section is None:
            cfg[key] = value
        else:
            cfg[section][key] = value
    for name in PATH_FLAGS:
        value = getattr(args, name, None)
        if value is not None:
            cfg["paths"][name] = value
    if cfg["seed"] is None:
        env = os.environ.get("AMTL_SEED")
        try:
            cfg["seed"] = int(env) if env is not None else 0
        except ValueError:
            raise ConfigError(f"AMTL_SEED must be an integer, got {env!r}") from None
    cfg["command"] = args.command
    return cfg


def _model_config(cfg: dict, **overrides) -> ModelConfig:
    values = dict(cfg["model"])
    values.pop("preset")
    values.update(overrides)
    return _build(ModelConfig, values).validate()


def _path(cfg: dict, name: str, required: bool = True):
    value = cfg["paths"].get(name)
    if value is None and required:
        raise ConfigError(f"missing required option --{name.replace('_', '-')}")
    return value


def _load_vocab(path) -> Vocabulary:
    p = Path(path)
    merges = p.with_name(p.name + ".merges")
    return Vocabulary.load(p, merges if merges.exists() else None)


# -- subcommands -----------------------------------------------------------


def cmd_synth(cfg: dict, run_dir: Path) -> None:
    values = dict(cfg["synth"], seed=cfg["seed"])
    spec = _build(SynthSpec, values)
    out = _path(cfg, "out_dir")
    records = generate_synthetic_corpus(spec, out)
    log.info("wrote %d utterances to %s", len(records), out)
    log.info("\n%s", summarize(records).table())


def cmd_tokenizer(cfg: dict, run_dir: Path) -> None:
    records = parse_manifest(_path(cfg, "manifest"))
    texts = [r.text for r in records if r.text is not None]
    kind = cfg["tokenizer"]["kind"]
    out = Path(_path(cfg, "out"))
    if kind == "char":
        vocab = build_char_vocab(texts)
    elif kind == "bpe":
        vocab, _ = train_bpe(texts, int(cfg["tokenizer"]["vocab_size"]))
        vocab.save_merges(out.with_name(out.name + ".merges"))
    else:
        raise ConfigError(f"tokenizer kind must be char or bpe, got {kind!r}")
    vocab.save(out)
    log.info("wrote %s vocabulary of %d tokens to %s", vocab.kind, len(vocab), out)


def cmd_pretrain(cfg: dict, run_dir: Path) -> None:
    records = parse_manifest(_path(cfg, "manifest"))
    frontend = _build(FrontendConfig, cfg["frontend"])
    mcfg = _model_config(cfg, feature_dim=frontend.feature_dim, accent_head_layer=None, num_accents=0)
    model = build_model(mcfg, cfg["seed"], frontend=frontend)
    p = dict(cfg["pretrain"])
    schedule = _build(ScheduleConfig, p.pop("schedule"))
    pcfg = _build(PretrainConfig, dict(p, seed=cfg["seed"], schedule=schedule, optimizer=_build(AdamConfig, cfg["optimizer"])))
    _, plog = pretrain(model, records, pcfg, out_path=_path(cfg, "out"), run_dir=run_dir)
    last = plog.records[-1].loss if plog.records else float("nan")
    log.info(
        "pretrained %d steps: final loss %.6f, mask fraction %.4f, skipped %d",
        len(plog.records),
        last,
        plog.mask_fraction,
        plog.skipped_utterances,
    )


def cmd_train(cfg: dict, run_dir: Path) -> None:
    records = parse_manifest(_path(cfg, "manifest"))
    vocab = _load_vocab(_path(cfg, "vocab"))
    frontend = _build(FrontendConfig, cfg["frontend"])
    accents = accent_inventory(records)
    head = cfg["model"]["accent_head_layer"]
    mcfg = _model_config(
        cfg,
        feature_dim=frontend.feature_dim,
        vocab_size=len(vocab),
        num_accents=len(accents) if head is not None else 0,
    )
    model = build_model(mcfg, cfg["seed"], vocab=vocab, accents=accents if head is not None else [], frontend=frontend)
    init = _path(cfg, "init", required=False)
    if init:
        load_checkpoint(init, model, trunk_only=True)
        log.info("initialized trunk from %s", init)
    t = cfg["train"]
    tcfg = TrainConfig(
        batch_size=t["batch_size"],
        max_epochs=t["max_epochs"],
        max_steps=t["max_steps"],
        seed=cfg["seed"],
        weights=_build(MtlWeights, cfg["weights"]),
        label_mode=LabelMode(t["label_mode"], frozenset(t["noisy_labels"])),
        schedule=_build(ScheduleConfig, cfg["schedule"]),
        optimizer=_build(AdamConfig, cfg["optimizer"]),
        freeze_trunk=t["freeze_trunk"],
        grad_clip=t["grad_clip"],
        augment=_build(AugmentSpec, cfg["augment"]) if t["use_augment"] else None,
        eval_every=t["eval_every"],
        stop_when_fit=t["stop_when_fit"],
        checkpoint_every=t["checkpoint_every"],
    )
    model, tlog = train(model, records, tcfg, run_dir=run_dir)
    out = _path(cfg, "out", required=False)
    if out:
        save_checkpoint(model, out)
    last = tlog.records[-1] if tlog.records else None
    log.info(
        "trained %d steps (skipped %d batches); final combined loss %s",
        len(tlog.records),
        tlog.skipped_batches,
        "n/a" if last is None else f"{last.combined:.6f}",
    )
    if tlog.evals:
        log.info("last fit check: %s", json.dumps(tlog.evals[-1]))


def cmd_pseudolabel(cfg: dict, run_dir: Path) -> None:
    teacher = load_checkpoint(_path(cfg, "model"))
    records = parse_manifest(_path(cfg, "manifest"))
    result = pseudo_label(teacher, records, _path(cfg, "out"))
    log.info("pseudo-labelled %d utterances, dropped %d", len(result.records), len(result.dropped))


def _baseline(cfg: dict):
    b = cfg["paths"].get("baseline_avg")
    return None if b is None else float(b) / 100.0


def cmd_evaluate(cfg: dict, run_dir: Path) -> None:
    from amtl.audio import features, load_wav
    from amtl.autograd import no_grad

    model = load_checkpoint(_path(cfg, "model"))
    records = parse_manifest(_path(cfg, "manifest"))
    hyps = []
    with no_grad():
        for r in records:
            if r.text is None:
                raise AmtlError(f"utterance {r.id!r} has no reference transcript")
            out = model.forward(features(load_wav(r.audio_path), model.frontend))
            text = model.vocab.decode(greedy_ctc_decode(out.ctc_log_probs.data, model.vocab.blank_id))
            hyps.append(Hypothesis(r.id, text, r.text, r.accent))
    write_hypotheses(hyps, run_dir / "hyps.jsonl")
    report = aggregate_wer(hyps, _baseline(cfg))
    fmt = cfg["paths"].get("format", "tsv")
    out = _path(cfg, "out", required=False) or run_dir / ("report.md" if fmt == "markdown" else "report.tsv")
    emit_report(report, fmt, out, cfg["paths"].get("name", "model"))
    log.info("\n%s", format_table([(cfg["paths"].get("name", "model"), report)], "tsv").rstrip())


def cmd_report(cfg: dict, run_dir: Path) -> None:
    rows = []
    for spec in _path(cfg, "hyps"):
        name, sep, path = spec.partition("=")
        if not sep:
            name, path = Path(spec).stem, spec
        rows.append((name, aggregate_wer(read_hypotheses(path), _baseline(cfg))))
    fmt = cfg["paths"].get("format", "tsv")
    text = format_table(rows, fmt)
    out = _path(cfg, "out", required=False) or run_dir / ("report.md" if fmt == "markdown" else "report.tsv")
    try:
        Path(out).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise AmtlError(f"cannot write report to {out}: {exc.strerror}") from None
    log.info("\n%s", text.rstrip())


COMMANDS = {
    "synth": cmd_synth,
    "tokenizer": cmd_tokenizer,
    "pretrain": cmd_pretrain,
    "train": cmd_train,
    "pseudolabel": cmd_pseudolabel,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
}


def _layer_spec(text: str):
    return int(text) if text.lstrip("-").isdigit() else text


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="amtl", description="Accent-robust multi-task CTC speech recognition toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def common(p):
        p.add_argument("--config", help="JSON config file; flags override its values")
        p.add_argument("--run-dir", help="directory for resolved-config.json, run.log and other outputs")
        p.add_argument("--seed", type=int, help="random seed (fallback: AMTL_SEED, then 0)")

    def model_flags(p):
        p.add_argument("--preset", choices=sorted(PRESETS))
        p.add_argument("--num-layers", type=int)
        p.add_argument("--model-dim", type=int)
        p.add_argument("--dropout", type=float)
        p.add_argument("--num-mels", type=int)

    p = sub.add_parser("synth", help="generate a synthetic accented corpus")
    common(p)
    p.add_argument("--out-dir")
    p.add_argument("--num-utterances", type=int)
    p.add_argument("--num-accents", type=int)
    p.add_argument("--tokens")

    p = sub.add_parser("tokenizer", help="build a character or BPE vocabulary from a manifest")
    common(p)
    p.add_argument("--manifest")
    p.add_argument("--out")
    p.add_argument("--kind", choices=["char", "bpe"])
    p.add_argument("--vocab-size", type=int)

    p = sub.add_parser("pretrain", help="contrastive pretraining of the encoder trunk")
    common(p)
    model_flags(p)
    p.add_argument("--manifest")
    p.add_argument("--out", help="checkpoint path")
    p.add_argument("--steps", type=int)

    p = sub.add_parser("train", help="supervised multi-task training")
    common(p)
    model_flags(p)
    p.add_argument("--manifest")
    p.add_argument("--vocab")
    p.add_argument("--init", help="checkpoint whose trunk initializes the model")
    p.add_argument("--out", help="final checkpoint path")
    p.add_argument("--accent-head", type=_layer_spec, help="low, mid, top or a 1-based layer index")
    p.add_argument("--aux-layers", type=int, nargs="*")
    p.add_argument("--stop-gradient", action="store_const", const=True)
    p.add_argument("--lambda-asr", type=float)
    p.add_argument("--lambda-acc", type=float)
    p.add_argument("--aux-weight", type=float)
    p.add_argument("--label-mode", choices=["all", "clean"])
    p.add_argument("--noisy-labels", nargs="*")
    p.add_argument("--batch-size", type=int)
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--lr", type=float, help="peak learning rate")
    p.add_argument("--warmup-steps", type=int)
    p.add_argument("--hold-steps", type=int)
    p.add_argument("--decay-steps", type=int)
    p.add_argument("--freeze-trunk", action="store_const", const=True)
    p.add_argument("--no-augment", action="store_const", const=True)
    p.add_argument("--eval-every", type=int)
    p.add_argument("--stop-when-fit", action="store_const", const=True)

    p = sub.add_parser("pseudolabel", help="transcribe unlabeled audio with a teacher model")
    common(p)
    p.add_argument("--model")
    p.add_argument("--manifest")
    p.add_argument("--out", help="output manifest")

    p = sub.add_parser("evaluate", help="decode a manifest and write an accent-stratified WER report")
    common(p)
    p.add_argument("--model")
    p.add_argument("--manifest")
    p.add_argument("--baseline-avg", type=float, help="baseline average WER in percent")
    p.add_argument("--format", choices=["tsv", "markdown"])
    p.add_argument("--name", help="row label in the report")
    p.add_argument("--out", help="report path (default: <run-dir>/report.tsv)")

    p = sub.add_parser("report", help="tabulate hypothesis files from several models")
    common(p)
    p.add_argument("--hyps", nargs="+", metavar="NAME=PATH")
    p.add_argument("--baseline-avg", type=float, help="baseline average WER in percent")
    p.add_argument("--format", choices=["tsv", "markdown"])
    p.add_argument("--out")
    return parser


def _setup_logging(run_dir: Path) -> logging.Handler:
    log.setLevel(logging.INFO)
    handler = logging.FileHandler(run_dir / "run.log", mode="w", encoding="utf-8")
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    logging.getLogger("amtl").addHandler(handler)
    return handler


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = None
    try:
        cfg = resolve(args)
        run_dir = Path(args.run_dir or Path("runs") / args.command)
        try:
            run_dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise AmtlError(f"cannot create run directory {run_dir}: {exc.strerror}") from None
        resolved = copy.deepcopy(cfg)
        (run_dir / "resolved-config.json").write_text(json.dumps(resolved, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        handler = _setup_logging(run_dir)
        COMMANDS[args.command](cfg, run_dir)
    except AmtlError as exc:
        print(f"error: {exc}".replace("\n", " "), file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc.strerror}: {exc.filename}", file=sys.stderr)
        return 1
    finally:
        if handler is not None:
            logging.getLogger("amtl").removeHandler(handler)
            handler.close()
    return 0


if __name__ == "__main__":
    sys.exit(main())
