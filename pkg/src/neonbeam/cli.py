"""Command-line entry point.

Subcommands: attack, render, eval, transfer, dataset. Parameters resolve in
the order built-in defaults < config file (--config, YAML) < --preset pins <
explicit flags, and every report echoes the fully resolved configuration plus
the seed so runs can be reproduced byte for byte (timestamps live in their
own field).

Exit codes: 0 success, 1 any per-item failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np
import yaml

from .attack import (
    AttackConfig,
    CleanMisclassifiedError,
    EotConfig,
    result_to_dict,
    run_attack,
)
from .beam import (
    DEFAULT_PROFILE,
    PROFILES,
    BeamGroup,
    ParamBounds,
    beams_from_lines,
    group_from_json,
    parse_palette,
    render,
)
from .harness import (
    DatasetSpec,
    EvalRecord,
    compute_asr,
    generate_dataset,
    misclass_histogram,
    read_manifest,
    record_from_dict,
    record_to_dict,
    transfer_matrix,
    write_manifest,
)
from .imaging import decode_image, encode_image, mask_from_image
from .oracle import HttpOracle, OnnxOracle, Oracle, ToyOracle

PRESETS = {
    # Digital-test setting: 20 beams of radius 20 px at intensity 0.7.
    "paper-digital": {"beams": 20, "radius": 20.0, "intensity": 0.7},
}


class ConfigError(ValueError):
    pass


def build_oracle(spec: str, onnx_opts: dict | None = None) -> Oracle:
    if spec == "toy":
        return ToyOracle()
    if spec.startswith("onnx:"):
        opts = dict(onnx_opts or {})
        labels = None
        if opts.get("labels_file"):
            with open(opts["labels_file"], encoding="utf-8") as fh:
                labels = [line.strip() for line in fh if line.strip()]
        kwargs = {}
        if "input_size" in opts and opts["input_size"] is not None:
            kwargs["input_size"] = tuple(opts["input_size"])
        if "mean" in opts:
            kwargs["mean"] = opts["mean"]
        if "std" in opts:
            kwargs["std"] = opts["std"]
        return OnnxOracle(spec[len("onnx:"):], labels=labels, **kwargs)
    if spec.startswith("http:") or spec.startswith("https:"):
        return HttpOracle(spec)
    raise ConfigError(f"unknown oracle spec {spec!r}; use toy, onnx:PATH or http:URL")


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid config file: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config file must contain a mapping")
    return data


def _resolve(args: argparse.Namespace, defaults: dict) -> dict:
    """Merge defaults, config file, preset pins and explicit flags."""
    cfg = dict(defaults)
    cfg.update(_load_config_file(getattr(args, "config", None)))
    preset = getattr(args, "preset", None) or cfg.get("preset")
    if preset:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}")
        cfg.update(PRESETS[preset])
        cfg["preset"] = preset
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    return cfg


def _load_mask(path: str | None, threshold: float):
    if not path:
        return None
    with open(path, "rb") as fh:
        return mask_from_image(fh.read(), threshold)


def _attack_bounds(height: int, width: int, cfg: dict) -> ParamBounds:
    radius = None
    if cfg.get("radius") is not None:
        r = float(cfg["radius"])
        radius = (r, r)
    intensity = (0.2, 0.7)
    if cfg.get("intensity") is not None:
        i = float(cfg["intensity"])
        intensity = (i, i)
    palette = parse_palette(cfg.get("palette") or "neon5")
    return ParamBounds.for_image(
        height, width, radius=radius, intensity=intensity, palette=palette
    )


def _resolve_label(raw, oracle: Oracle) -> int:
    try:
        return int(raw)
    except (TypeError, ValueError):
        pass
    names = oracle.labels
    if names is None:
        raise ConfigError(
            f"label {raw!r}: this oracle backend does not expose class names; "
            "pass a numeric label index"
        )
    if raw not in names:
        raise ConfigError(f"label {raw!r} not in oracle vocabulary")
    return names.index(raw)


def _write_report(path: str, report: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, sort_keys=True, indent=2)
        fh.write("\n")


def cmd_attack(args: argparse.Namespace) -> int:
    defaults = {
        "seed": 0,
        "oracle": "toy",
        "beams": 20,
        "tmax": 50,
        "intensity": None,
        "radius": None,
        "palette": "neon5",
        "profile": DEFAULT_PROFILE,
        "eot_k": None,
        "epsilon": None,
        "workers": 1,
        "mask_threshold": 0.5,
    }
    cfg = _resolve(args, defaults)
    oracle = build_oracle(cfg["oracle"], cfg.get("onnx"))
    mask = _load_mask(args.mask, cfg["mask_threshold"])

    if args.manifest:
        items = [
            (str(row.get("id", i)), row["path"], row["label"])
            for i, row in enumerate(read_manifest(args.manifest))
        ]
    else:
        if not args.images or args.label is None:
            raise ConfigError("provide IMAGE arguments with --label, or --manifest")
        items = [
            (os.path.splitext(os.path.basename(p))[0], p, args.label)
            for p in args.images
        ]

    os.makedirs(args.out, exist_ok=True)
    eot = None
    if cfg["eot_k"]:
        eot_cfg = cfg.get("eot") or {}
        eot = EotConfig(
            samples=int(cfg["eot_k"]),
            brightness_range=tuple(eot_cfg.get("brightness", (0.9, 1.1))),
            offset_range=tuple(eot_cfg.get("offset", (-2, 2))),
            color_jitter=tuple(eot_cfg.get("jitter", (0.95, 1.05))),
        )

    records, failures, item_reports = [], 0, []
    for index, (item_id, path, raw_label) in enumerate(items):
        child_seed = int(
            np.random.SeedSequence((int(cfg["seed"]), index)).generate_state(1)[0]
        )
        try:
            label = _resolve_label(raw_label, oracle)
            with open(path, "rb") as fh:
                base = decode_image(fh.read())
            attack_cfg = AttackConfig(
                num_beams=int(cfg["beams"]),
                max_steps=int(cfg["tmax"]),
                bounds=_attack_bounds(base.height, base.width, cfg),
                profile=cfg["profile"],
                seed=child_seed,
                eot=eot,
                epsilon_report=cfg["epsilon"],
            )
            result = run_attack(
                base, label, mask, oracle, attack_cfg, workers=int(cfg["workers"])
            )
        except CleanMisclassifiedError as exc:
            records.append(
                EvalRecord(item_id, exc.expected, False, None, exc.predicted)
            )
            print(f"{item_id}: skipped (clean image misclassified as {exc.predicted})")
            continue
        except ConfigError:
            raise
        except Exception as exc:
            failures += 1
            item_reports.append({"id": item_id, "error": str(exc)})
            print(f"{item_id}: FAILED ({exc})", file=sys.stderr)
            continue

        records.append(
            EvalRecord(item_id, label, True, result, result.final_prediction)
        )
        report = result_to_dict(result)
        report["id"] = item_id
        report["seed"] = child_seed
        if cfg["epsilon"] is not None:
            report["within_epsilon"] = result.l2_delta < float(cfg["epsilon"])
        item_reports.append(report)
        _write_report(os.path.join(args.out, f"{item_id}.json"), report)
        with open(os.path.join(args.out, f"{item_id}.png"), "wb") as fh:
            fh.write(encode_image(result.adversarial))
        print(
            f"{item_id}: success={result.success} queries={result.queries} "
            f"l2={result.l2_delta:.4f}"
        )

    write_manifest(
        [record_to_dict(r) for r in records], os.path.join(args.out, "records.jsonl")
    )
    _write_report(
        os.path.join(args.out, "report.json"),
        {
            "command": "attack",
            "config": _jsonable(cfg),
            "timestamp": time.time(),
            "items": item_reports,
        },
    )
    return 1 if failures else 0


def cmd_render(args: argparse.Namespace) -> int:
    defaults = {"profile": DEFAULT_PROFILE, "mask_threshold": 0.5}
    cfg = _resolve(args, defaults)
    with open(args.image, "rb") as fh:
        base = decode_image(fh.read())
    mask = _load_mask(args.mask, cfg["mask_threshold"])
    if args.beams_file:
        with open(args.beams_file, encoding="utf-8") as fh:
            group = BeamGroup(tuple(beams_from_lines(fh.read())))
    elif args.beams_json:
        with open(args.beams_json, encoding="utf-8") as fh:
            group = group_from_json(fh.read())
    else:
        group = BeamGroup()
    out = render(base, group, mask, cfg["profile"])
    with open(args.out, "wb") as fh:
        fh.write(encode_image(out))
    print(f"wrote {args.out} ({len(group)} beams)")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = _resolve(args, {})
    records = [record_from_dict(d) for d in read_manifest(args.records)]
    asr = compute_asr(records)
    hist = misclass_histogram(records)
    clean_correct = sum(1 for r in records if r.clean_correct)
    print(f"records:        {len(records)}")
    print(f"clean-correct:  {clean_correct}")
    print(f"ASR:            {asr:.3f}")
    if hist:
        print("misclassified as:")
        for label, count in hist.items():
            print(f"  {label:>6}  {count}")
    if args.out:
        _write_report(
            args.out,
            {
                "command": "eval",
                "config": _jsonable({**cfg, "records": args.records}),
                "timestamp": time.time(),
                "asr": asr,
                "clean_correct": clean_correct,
                "total_records": len(records),
                "histogram": {str(k): v for k, v in hist.items()},
            },
        )
    return 0


def cmd_transfer(args: argparse.Namespace) -> int:
    cfg = _resolve(args, {"oracle": None})
    specs = args.oracles or ([cfg["oracle"]] if cfg["oracle"] else [])
    if not specs:
        raise ConfigError("at least one --oracle is required")
    oracles = [build_oracle(s, cfg.get("onnx")) for s in specs]
    rows = read_manifest(args.manifest)
    images, labels = [], []
    for row in rows:
        with open(row["path"], "rb") as fh:
            images.append(decode_image(fh.read()))
        labels.append(str(row["label"]))
    matrix = transfer_matrix(images, labels, oracles)
    print(f"{'oracle':<40} ASR")
    for spec, asr in zip(specs, matrix):
        print(f"{spec:<40} {asr:.3f}")
    if args.csv:
        with open(args.csv, "w", encoding="utf-8") as fh:
            fh.write("oracle,asr\n")
            for spec, asr in zip(specs, matrix):
                fh.write(f"{spec},{asr!r}\n")
    if args.out:
        _write_report(
            args.out,
            {
                "command": "transfer",
                "config": _jsonable({**cfg, "oracles": specs}),
                "timestamp": time.time(),
                "asr": dict(zip(specs, matrix)),
            },
        )
    return 0


def cmd_dataset(args: argparse.Namespace) -> int:
    defaults = {
        "seed": 0,
        "beams": 20,
        "intensity": 0.7,
        "radius": 20.0,
        "palette": "grid27",
        "workers": 1,
    }
    cfg = _resolve(args, defaults)
    palette = parse_palette(cfg["palette"])
    if palette is None:
        raise ConfigError("dataset generation needs a finite palette")
    spec = DatasetSpec(
        colors=palette,
        beams_per_image=int(cfg["beams"]),
        intensity=float(cfg["intensity"]),
        radius=float(cfg["radius"]),
        seed=int(cfg["seed"]),
    )
    sources = [
        (str(row.get("id", i)), row["path"])
        for i, row in enumerate(read_manifest(args.manifest))
    ]
    rows = generate_dataset(spec, sources, args.out, workers=int(cfg["workers"]))
    errors = sum(1 for r in rows if "error" in r)
    print(f"wrote {len(rows) - errors}/{len(rows)} outputs to {args.out}")
    _write_report(
        os.path.join(args.out, "report.json"),
        {
            "command": "dataset",
            "config": _jsonable(cfg),
            "timestamp": time.time(),
            "outputs": len(rows) - errors,
            "errors": errors,
        },
    )
    return 1 if errors else 0


def _jsonable(cfg: dict) -> dict:
    out = {}
    for k, v in cfg.items():
        if isinstance(v, tuple):
            v = list(v)
        out[k] = v
    return out


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML config file; flags override it")
    p.add_argument("--seed", type=int, help="random stream seed (default 0)")
    p.add_argument("--preset", help="named parameter bundle, e.g. paper-digital")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="neonbeam",
        description="Composite circular light beams onto images and search "
        "their parameters to defeat a black-box classifier.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("attack", help="run the beam search against an oracle")
    _add_common(p)
    p.add_argument("images", nargs="*", help="input PNG files")
    p.add_argument("--label", help="true label (index or class name)")
    p.add_argument("--manifest", help="JSONL batch manifest with path and label")
    p.add_argument("--oracle", help="toy | onnx:PATH | http:URL")
    p.add_argument("--mask", help="mask PNG restricting the attackable region")
    p.add_argument("--beams", type=int, help="max number of beams N")
    p.add_argument("--tmax", type=int, help="candidate draws per beam slot")
    p.add_argument("--intensity", type=float, help="pin beam intensity")
    p.add_argument("--radius", type=float, help="pin beam radius (pixels)")
    p.add_argument("--palette", help="neon5 | grid27 | continuous | r,g,b;...")
    p.add_argument("--profile", choices=PROFILES)
    p.add_argument("--eot-k", dest="eot_k", type=int, help="robust scoring samples")
    p.add_argument("--epsilon", type=float, help="report-only L2 threshold")
    p.add_argument("--workers", type=int, help="parallel candidate evaluations")
    p.add_argument("--out", default="out", help="output directory")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("render", help="composite a beam list onto an image")
    _add_common(p)
    p.add_argument("image", help="input PNG")
    p.add_argument("--beams-file", help="text beam list: m n r i cr cg cb per line")
    p.add_argument("--beams-json", help="JSON beam list (attack report schema)")
    p.add_argument("--mask", help="mask PNG")
    p.add_argument("--profile", choices=PROFILES)
    p.add_argument("--out", required=True, help="output PNG path")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("eval", help="ASR and histogram from attack records")
    _add_common(p)
    p.add_argument("--records", required=True, help="records.jsonl from attack")
    p.add_argument("--out", help="write a JSON report here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("transfer", help="re-score adversarial images on oracles")
    _add_common(p)
    p.add_argument("--manifest", required=True, help="JSONL rows: path, label")
    p.add_argument(
        "--oracle", dest="oracles", action="append", help="repeatable oracle spec"
    )
    p.add_argument("--csv", help="write the ASR table as CSV")
    p.add_argument("--out", help="write a JSON report here")
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("dataset", help="stamp fixed-color beam groups in bulk")
    _add_common(p)
    p.add_argument("--manifest", required=True, help="JSONL rows: id, path")
    p.add_argument("--beams", type=int, help="beams per output image")
    p.add_argument("--intensity", type=float)
    p.add_argument("--radius", type=float)
    p.add_argument("--palette", help="color set; default grid27")
    p.add_argument("--workers", type=int)
    p.add_argument("--out", default="dataset", help="output directory")
    p.set_defaults(func=cmd_dataset)

    return parser


def run_command(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
