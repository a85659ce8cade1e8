"""mltse command line: prepare, features, train, evaluate, extract, report.

Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime error.
Flags can also come from a JSON ``--config`` file keyed by flag name
(``{"epochs": 5, "tf_map": "emb"}``); explicit flags win.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import torch

from .config import config_hash, load_config
from .data import SPLITS, MixtureDataset, build_synth_manifest, libri2mix_manifest
from .dsp import read_wav, write_wav
from .evaluation import (
    EvalResult,
    ablation_csv,
    ablation_markdown,
    ablation_rows,
    curves_csv,
    evaluate,
    plot_curves,
)
from .extractor import ExtractorConfig, FeatureConfig
from .training import TrainConfig, build_model, load_checkpoint, save_checkpoint, train

log = logging.getLogger("mltse")

EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 1, 2, 3

DEFAULTS = {
    "seed": 0,
    "speakers": 12,
    "mixtures": 100,
    "sample_rate": 8000,
    "duration": 2.0,
    "preset": "desk",
    "tf_map": "off",
    "contextual": "off",
    "spk_emb": "off",
    "softmax_axis": "enrollment",
    "energy": "projection",
    "fusion_site": "once",
    "epochs": 20,
    "steps_per_epoch": 100,
    "batch_size": 8,
    "segment_seconds": 1.0,
    "enrollment_seconds": 2.0,
    "lr_start": 1e-3,
    "lr_end": 2.5e-5,
    "eval_examples": 16,
    "workers": 1,
    "limit": None,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _feature_flags(p):
    p.add_argument("--tf-map", dest="tf_map", choices=["off", "spec", "emb"])
    p.add_argument("--contextual", choices=["on", "off"])
    p.add_argument("--spk-emb", dest="spk_emb", choices=["on", "off"])
    p.add_argument("--softmax-axis", dest="softmax_axis", choices=["enrollment", "mixture"])
    p.add_argument("--energy", choices=["projection", "norm"])
    p.add_argument("--fusion-site", dest="fusion_site", choices=["once", "every_block"])
    p.add_argument("--preset", choices=["desk", "paper"])


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mltse", description=__doc__.split("\n")[0])
    parser.add_argument("--config", help="JSON file of flag values")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("prepare", help="generate synthetic data or index a Libri2Mix split")
    p.add_argument("--out", required=True)
    p.add_argument("--synthetic", action="store_true")
    p.add_argument("--speakers", type=int)
    p.add_argument("--mixtures", type=int)
    p.add_argument("--sample-rate", dest="sample_rate", type=int)
    p.add_argument("--duration", type=float)
    p.add_argument("--libri2mix", help="Libri2Mix split directory (mix_clean/, s1/, s2/)")
    p.add_argument("--enrollment-map", dest="enrollment_map")
    p.add_argument("--seed", type=int)

    p = sub.add_parser("features", help="dump speaker cues for inspection")
    p.add_argument("action", choices=["dump"])
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--limit", type=int)
    p.add_argument("--seed", type=int)
    _feature_flags(p)

    p = sub.add_parser("train", help="train an extractor")
    p.add_argument("--data", required=True, help="directory holding train/val/test .jsonl manifests")
    p.add_argument("--out", required=True)
    _feature_flags(p)
    for flag, typ in (("epochs", int), ("steps-per-epoch", int), ("batch-size", int), ("segment-seconds", float),
                      ("enrollment-seconds", float), ("lr-start", float), ("lr-end", float),
                      ("eval-examples", int), ("seed", int)):
        p.add_argument(f"--{flag}", dest=flag.replace("-", "_"), type=typ)

    p = sub.add_parser("evaluate", help="SI-SDRi / accuracy of a checkpoint on a manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--one-direction", action="store_true", help="only extract the first speaker")
    p.add_argument("--oracle", action="store_true", help="score the reference itself (sanity check)")
    p.add_argument("--limit", type=int)
    p.add_argument("--workers", type=int)

    p = sub.add_parser("extract", help="extract the enrolled speaker from one mixture WAV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mixture", required=True)
    p.add_argument("--enrollment", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("report", help="ablation table and per-split curves")
    p.add_argument("--results", nargs="+", default=[], metavar="NAME=RESULTS.jsonl")
    p.add_argument("--curves", nargs="*", default=[], metavar="NAME=TRAIN_LOG.jsonl")
    p.add_argument("--baseline")
    p.add_argument("--out", required=True)
    p.add_argument("--plots", action="store_true")
    return parser


def resolve(args: argparse.Namespace) -> dict:
    """Explicit flags > config file > defaults."""
    file_cfg = load_config(args.config) if args.config else {}
    out = {}
    for key, val in vars(args).items():
        if val is None:
            val = file_cfg.get(key, DEFAULTS.get(key))
        out[key] = val
    unknown = set(file_cfg) - set(out)
    if unknown:
        raise UsageError(f"unknown config keys for '{args.command}': {sorted(unknown)}")
    return out


def feature_config(cfg: dict) -> FeatureConfig:
    fc = FeatureConfig(
        tf_map=cfg["tf_map"],
        contextual=cfg["contextual"] == "on",
        spk_emb=cfg["spk_emb"] == "on",
        softmax_axis=cfg["softmax_axis"],
        energy=cfg["energy"],
        fusion_site=cfg["fusion_site"],
    )
    if fc.fusion_site == "every_block" and not (fc.contextual or fc.spk_emb):
        raise UsageError("--fusion-site every_block needs --contextual on or --spk-emb on")
    return fc


def model_config(cfg: dict) -> ExtractorConfig:
    fc = feature_config(cfg)
    return ExtractorConfig.desk(fc) if cfg["preset"] == "desk" else ExtractorConfig.paper(fc)


def cmd_prepare(cfg: dict) -> int:
    out = Path(cfg["out"])
    if cfg["synthetic"]:
        paths = build_synth_manifest(
            cfg["speakers"], cfg["mixtures"], out, seed=cfg["seed"],
            sample_rate=cfg["sample_rate"], duration=cfg["duration"],
        )
        for split, path in paths.items():
            n = sum(1 for _ in path.open())
            print(f"{split}: {n} mixtures -> {path}")
        return 0
    if cfg["libri2mix"]:
        if not cfg["enrollment_map"]:
            raise UsageError("--libri2mix needs --enrollment-map")
        entries = libri2mix_manifest(cfg["libri2mix"], cfg["enrollment_map"], out)
        print(f"{len(entries)} mixtures -> {out}")
        return 0
    raise UsageError("prepare needs --synthetic or --libri2mix")


def _load_or_build(cfg: dict):
    if cfg.get("checkpoint"):
        model, ckpt = load_checkpoint(cfg["checkpoint"])
        return model, ckpt["config_hash"]
    mcfg = model_config(cfg)
    return build_model(mcfg, cfg["seed"]).eval(), config_hash(mcfg.to_dict())


def cmd_features(cfg: dict) -> int:
    model, h = _load_or_build(cfg)
    ds = MixtureDataset(cfg["manifest"], model.cfg.sample_rate)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    index = {"config_hash": h, "features": asdict(model.cfg.features), "items": {}}
    for ex in ds.examples(limit=cfg["limit"]):
        key = f"{ex.mixture_id}__{ex.target_speaker}"
        with torch.no_grad():
            mix = torch.as_tensor(ex.mixture)[None]
            enr = torch.as_tensor(ex.enrollment)[None]
            bundle = model.features(mix, enr)
        item = {}
        for name in ("tf_map", "enroll_frames", "spk_embedding"):
            val = getattr(bundle, name)
            if val is not None:
                arr = val[0].numpy().astype("<f4")
                arr.tofile(out / f"{key}.{name}.f32")
                item[name] = {"file": f"{key}.{name}.f32", "shape": list(arr.shape)}
        index["items"][key] = item
    (out / "index.json").write_text(json.dumps(index, indent=1, sort_keys=True))
    print(f"{len(index['items'])} feature sets -> {out}")
    return 0


def cmd_train(cfg: dict) -> int:
    mcfg = model_config(cfg)
    if not mcfg.features.any:
        log.warning("no speaker features enabled: training an unconditional separator")
    tcfg = TrainConfig(
        epochs=cfg["epochs"], steps_per_epoch=cfg["steps_per_epoch"], batch_size=cfg["batch_size"],
        segment_seconds=cfg["segment_seconds"], enrollment_seconds=cfg["enrollment_seconds"],
        lr_start=cfg["lr_start"], lr_end=cfg["lr_end"], eval_examples=cfg["eval_examples"], seed=cfg["seed"],
    )
    data = Path(cfg["data"])
    sets = {s: MixtureDataset(data / f"{s}.jsonl", mcfg.sample_rate) for s in SPLITS if (data / f"{s}.jsonl").exists()}
    if "train" not in sets:
        raise FileNotFoundError(f"no train.jsonl in {data}")
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    model = build_model(mcfg, tcfg.seed)
    hist = train(model, sets["train"], tcfg, eval_sets=sets, log_path=out / "train_log.jsonl",
                 checkpoint_path=out / "best.pt")
    h = save_checkpoint(out / "last.pt", model, None, tcfg.epochs - 1, tcfg)
    print(f"trained {tcfg.epochs} epochs; best epoch {hist.best_epoch}; config hash {h}")
    return 0


def cmd_evaluate(cfg: dict) -> int:
    model, h = _load_or_build(cfg)
    ds = MixtureDataset(cfg["manifest"], model.cfg.sample_rate, validate=False)
    estimator = (lambda ex: ex.target) if cfg["oracle"] else model
    res = evaluate(estimator, ds, both_directions=not cfg["one_direction"], limit=cfg["limit"],
                   workers=cfg["workers"])
    res.meta = {"checkpoint": str(cfg["checkpoint"]), "checkpoint_hash": h,
                "features": asdict(model.cfg.features), "manifest": str(cfg["manifest"])}
    res.meta["config_hash"] = config_hash({k: v for k, v in res.meta.items()})
    res.to_jsonl(cfg["out"])
    agg = res.aggregate()
    print(f"SI-SDRi {agg['mean_si_sdri']:.2f} dB  accuracy {agg['accuracy']:.2f}%  "
          f"n={agg['n']}  errors={agg['n_errors']}")
    return 0


def cmd_extract(cfg: dict) -> int:
    model, _ = load_checkpoint(cfg["checkpoint"])
    sr = model.cfg.sample_rate
    mix = torch.as_tensor(read_wav(cfg["mixture"], sr))[None]
    enr = torch.as_tensor(read_wav(cfg["enrollment"], sr))[None]
    with torch.no_grad():
        est = model(mix, enr)[0].numpy()
    write_wav(cfg["out"], est, sr)
    print(f"wrote {cfg['out']}")
    return 0


def _pairs(items, what):
    out = {}
    for item in items:
        if "=" not in item:
            raise UsageError(f"{what} entries must look like NAME=PATH, got {item!r}")
        name, path = item.split("=", 1)
        out[name] = path
    return out


def cmd_report(cfg: dict) -> int:
    if not cfg["results"] and not cfg["curves"]:
        raise UsageError("report needs --results and/or --curves")
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    results = {name: EvalResult.from_jsonl(p) for name, p in _pairs(cfg["results"], "--results").items()}
    if results:
        rows = ablation_rows({n: (r.meta.get("features", {}), r) for n, r in results.items()}, cfg["baseline"])
        (out / "ablation.md").write_text(ablation_markdown(rows))
        (out / "ablation.csv").write_text(ablation_csv(rows))
        print(ablation_markdown(rows))
    logs = {name: [json.loads(l) for l in Path(p).read_text().splitlines() if l.strip()]
            for name, p in _pairs(cfg["curves"], "--curves").items()}
    if logs:
        (out / "curves.csv").write_text(curves_csv(logs))
        if cfg["plots"]:
            plot_curves(out / "curves.csv", out / "curves.png")
    meta = {"results": {n: r.meta.get("config_hash") for n, r in results.items()},
            "curves": sorted(logs), "baseline": cfg["baseline"]}
    meta["config_hash"] = config_hash(meta)
    (out / "report.json").write_text(json.dumps(meta, indent=1, sort_keys=True))
    return 0


COMMANDS = {
    "prepare": cmd_prepare,
    "features": cmd_features,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "extract": cmd_extract,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve(args)
        return COMMANDS[args.command](cfg)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"mltse: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, KeyError, ValueError, OSError) as exc:
        print(f"mltse: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        log.exception("runtime failure")
        print(f"mltse: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
