"""Command line for the full pipeline.

Subcommands: synth, score, map, train, generate, sweep, safety-eval.
Values resolve as defaults < config-file section < explicit flags, and every
run drops a resolved-config snapshot next to its primary output. Exit
codes: 0 ok, 1 contract/configuration error, 2 I/O error, 3 training
divergence.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .config import ModelConfig, ScheduleConfig, TrainConfig
from .diffusion import (
    NoiseSchedule,
    images_to_unit,
    init_model_params,
    intensity_vector,
    sample_batch,
    train,
)
from .errors import (
    AttrDialError,
    ConfigError,
    ContractError,
    TrainingDivergenceError,
)
from .evaluate import derive_sample_seed, run_safety_eval, run_sweep
from .image import decode_image, encode_image
from .mapping import MappingTable, assign_bins, balance, to_normalized
from .metrics import (
    DEFAULT_EMBEDDER_SEED,
    DEFAULT_SAFETY_THRESHOLD,
    AttributeKind,
    FileBackedEmbedder,
    RealismPrompts,
    SafetyConcept,
    SyntheticEmbedder,
    score_all,
)
from .reports import emit_report
from .store import (
    Checkpoint,
    atomic_write,
    json_bytes,
    load_checkpoint,
    read_manifest,
    read_mapping_table,
    save_checkpoint,
    sha256_bytes,
    sha256_file,
    write_manifest,
    write_mapping_table,
)
from .synth import CorpusConfig, generate_corpus

EXIT_OK = 0
EXIT_CONTRACT = 1
EXIT_IO = 2
EXIT_DIVERGED = 3

DEFAULT_TARGETS = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9"

_DEFAULTS: dict[str, dict] = {
    "synth": {
        "count": 1000, "size": 32, "classes": "0,1,2,3", "brightness_range": "0,1",
        "detail_range": "2,64", "unsafe_fraction": 0.0, "seed": 0,
    },
    "score": {
        "attributes": "brightness,detail,realism,safety", "provider": "synthetic",
        "provider_seed": DEFAULT_EMBEDDER_SEED, "safety_threshold": DEFAULT_SAFETY_THRESHOLD,
    },
    "map": {"bin_count": 10, "per_bin": 500, "seed": 0, "balanced_out": None},
    "train": {
        "steps": 3000, "batch_size": 32, "learning_rate": 1e-3, "seed": 0,
        "image_size": 32, "patch_size": 4, "model_dim": 64, "n_heads": 4,
        "mlp_hidden": 256, "n_classes": 4, "class_tokens": 4,
        "timesteps": 200, "beta_start": 1e-4, "beta_end": 0.02, "log_every": 0,
    },
    "generate": {"count": 4, "class_id": 0, "intensity": [], "seed": 0},
    "sweep": {
        "targets": DEFAULT_TARGETS, "samples_per_target": 32, "seed": 0,
        "formats": "csv,json,svg", "fixed_intensity": [],
        "provider_seed": DEFAULT_EMBEDDER_SEED, "safety_threshold": DEFAULT_SAFETY_THRESHOLD,
    },
    "safety_eval": {
        "n_samples": 200, "seed": 0,
        "provider_seed": DEFAULT_EMBEDDER_SEED, "safety_threshold": DEFAULT_SAFETY_THRESHOLD,
    },
}


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; 2 is reserved for I/O here
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="attrdial", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a synthetic corpus")
    sp.add_argument("--out", required=True)
    sp.add_argument("--count", type=int)
    sp.add_argument("--size", type=int)
    sp.add_argument("--classes")
    sp.add_argument("--brightness-range", dest="brightness_range")
    sp.add_argument("--detail-range", dest="detail_range")
    sp.add_argument("--unsafe-fraction", dest="unsafe_fraction", type=float)
    sp.add_argument("--seed", type=int)
    _common(sp)

    sp = sub.add_parser("score", help="compute raw attribute scores for a manifest")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--attributes")
    sp.add_argument("--provider", help="'synthetic' or 'cache:PATH'")
    sp.add_argument("--provider-seed", dest="provider_seed", type=int)
    sp.add_argument("--safety-threshold", dest="safety_threshold", type=float)
    _common(sp)

    sp = sub.add_parser("map", help="bin, balance and rank-normalize one attribute")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--attribute", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--bin-count", dest="bin_count", type=int)
    sp.add_argument("--per-bin", dest="per_bin", type=int,
                    help="records per bin after balancing; 0 skips balancing "
                         "(for distributions whose equal-width bins are legitimately empty)")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--balanced-out", dest="balanced_out")
    _common(sp)

    sp = sub.add_parser("train", help="train the toy diffusion model")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--table", action="append", metavar="ATTR=PATH",
                    help="mapping table per conditioned attribute, in order")
    sp.add_argument("--out", required=True)
    sp.add_argument("--steps", type=int)
    sp.add_argument("--batch-size", dest="batch_size", type=int)
    sp.add_argument("--learning-rate", dest="learning_rate", type=float)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--image-size", dest="image_size", type=int)
    sp.add_argument("--patch-size", dest="patch_size", type=int)
    sp.add_argument("--model-dim", dest="model_dim", type=int)
    sp.add_argument("--n-heads", dest="n_heads", type=int)
    sp.add_argument("--mlp-hidden", dest="mlp_hidden", type=int)
    sp.add_argument("--n-classes", dest="n_classes", type=int)
    sp.add_argument("--class-tokens", dest="class_tokens", type=int)
    sp.add_argument("--timesteps", type=int)
    sp.add_argument("--beta-start", dest="beta_start", type=float)
    sp.add_argument("--beta-end", dest="beta_end", type=float)
    sp.add_argument("--log-every", dest="log_every", type=int)
    _common(sp)

    sp = sub.add_parser("generate", help="sample images from a checkpoint")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--count", type=int)
    sp.add_argument("--class-id", dest="class_id", type=int)
    sp.add_argument("--intensity", action="append", metavar="ATTR=VALUE",
                    help="target intensity; unspecified attributes default to 0.5")
    sp.add_argument("--seed", type=int)
    _common(sp)

    sp = sub.add_parser("sweep", help="target-grid controllability evaluation")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--attribute", required=True)
    sp.add_argument("--out-prefix", dest="out_prefix", required=True)
    sp.add_argument("--targets")
    sp.add_argument("--samples-per-target", dest="samples_per_target", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--formats")
    sp.add_argument("--fixed-intensity", dest="fixed_intensity", action="append",
                    metavar="ATTR=VALUE")
    sp.add_argument("--provider-seed", dest="provider_seed", type=int)
    sp.add_argument("--safety-threshold", dest="safety_threshold", type=float)
    _common(sp)

    sp = sub.add_parser("safety-eval", help="removal rate at safety intensity 1 vs 0")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--n-samples", dest="n_samples", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--provider-seed", dest="provider_seed", type=int)
    sp.add_argument("--safety-threshold", dest="safety_threshold", type=float)
    _common(sp)
    return p


def _common(sp):
    sp.add_argument("--config", help="JSON config file with per-subcommand sections")


def _resolve(command: str, ns: argparse.Namespace) -> dict:
    key = command.replace("-", "_")
    merged = dict(_DEFAULTS.get(key, {}))
    if getattr(ns, "config", None):
        try:
            doc = json.loads(Path(ns.config).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid config file {ns.config}: {exc}") from exc
        section = doc.get(key, doc.get(command, {}))
        if not isinstance(section, dict):
            raise ConfigError(f"config section for {command!r} must be an object")
        merged.update(section)
    for name, value in vars(ns).items():
        if name in ("command", "config") or value is None:
            continue
        if isinstance(value, list) and not value:
            continue
        merged[name] = value
    return merged


def _snapshot(primary_out, command: str, resolved: dict) -> None:
    primary_out = Path(primary_out)
    if primary_out.suffix == "" and (primary_out.is_dir() or not primary_out.exists()):
        dest = primary_out / "resolved-config.json"
    else:
        dest = Path(str(primary_out) + ".config.json")
    atomic_write(dest, json_bytes({"command": command, **resolved}) + b"\n")


# ---------------------------------------------------------------------------
# Small parsers
# ---------------------------------------------------------------------------

def _floats_csv(s: str) -> list[float]:
    return [float(x) for x in str(s).split(",") if x != ""]


def _ints_csv(s: str) -> tuple[int, ...]:
    return tuple(int(x) for x in str(s).split(",") if x != "")


def _attr(name: str) -> AttributeKind:
    try:
        return AttributeKind(name.strip().lower())
    except ValueError:
        raise ConfigError(f"unknown attribute {name!r}") from None


def _attr_value_pairs(items) -> dict[AttributeKind, float]:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"expected ATTR=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[_attr(k)] = float(v)
    return out


def _provider(resolved: dict):
    spec = str(resolved.get("provider", "synthetic"))
    if spec == "synthetic":
        return SyntheticEmbedder(seed=int(resolved.get("provider_seed", DEFAULT_EMBEDDER_SEED)))
    if spec.startswith("cache:"):
        return FileBackedEmbedder.from_file(spec[len("cache:"):])
    raise ConfigError(f"unknown provider {spec!r} (use 'synthetic' or 'cache:PATH')")


def _load_image(root: Path, row: dict):
    path = Path(row["path"])
    full = path if path.is_absolute() else root / path
    data = full.read_bytes()
    if sha256_bytes(data) != row["hash"]:
        raise ConfigError(f"{full}: content hash does not match the manifest")
    return decode_image(data)


def _rebase_row_path(row: dict, src_root: Path, dest_root: Path) -> dict:
    """Keep manifest paths valid when writing a manifest to a new directory."""
    path = Path(row["path"])
    if path.is_absolute() or src_root.resolve() == dest_root.resolve():
        return row
    row = dict(row)
    row["path"] = os.path.relpath((src_root / path).resolve(), dest_root.resolve())
    return row


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _cmd_synth(resolved: dict) -> None:
    size = int(resolved["size"])
    blo, bhi = _floats_csv(resolved["brightness_range"])
    dlo, dhi = _ints_csv(resolved["detail_range"])
    cfg = CorpusConfig(
        count=int(resolved["count"]),
        size=(size, size),
        classes=_ints_csv(resolved["classes"]),
        brightness_range=(blo, bhi),
        detail_range=(dlo, dhi),
        unsafe_fraction=float(resolved["unsafe_fraction"]),
        seed=int(resolved["seed"]),
    )
    out = Path(resolved["out"])
    generate_corpus(cfg, out)
    _snapshot(out, "synth", resolved)
    print(f"wrote {cfg.count} images and manifest under {out}")


def _cmd_score(resolved: dict) -> None:
    manifest = Path(resolved["manifest"])
    rows = read_manifest(manifest)
    kinds = [_attr(a) for a in str(resolved["attributes"]).split(",") if a]
    needs_provider = AttributeKind.REALISM in kinds or AttributeKind.SAFETY in kinds
    provider = _provider(resolved) if needs_provider else None
    concept = (
        SafetyConcept.default(provider, float(resolved["safety_threshold"]))
        if AttributeKind.SAFETY in kinds
        else None
    )
    out = Path(resolved["out"])
    out_rows = []
    for row in rows:
        img = _load_image(manifest.parent, row)
        scores = score_all(img, provider, RealismPrompts(), concept, kinds)
        row = _rebase_row_path(row, manifest.parent, out.parent)
        row["scores"] = {**row.get("scores", {}), **{k.value: v.value for k, v in scores.items()}}
        out_rows.append(row)
    write_manifest(out, out_rows)
    _snapshot(out, "score", resolved)
    print(f"scored {len(rows)} images -> {out}")


def _cmd_map(resolved: dict) -> None:
    manifest = Path(resolved["manifest"])
    rows = read_manifest(manifest)
    attr = _attr(resolved["attribute"])
    try:
        raws = np.array([row["scores"][attr.value] for row in rows], dtype=np.float64)
    except KeyError:
        raise ConfigError(f"manifest rows lack a {attr.value!r} score; run `score` first") from None
    bins = assign_bins(raws, int(resolved["bin_count"]))
    per_bin = int(resolved["per_bin"])
    if per_bin > 0:
        chosen = balance(list(range(len(rows))), bins, per_bin, int(resolved["seed"]))
    else:
        chosen = list(range(len(rows)))
    table = MappingTable.from_values(attr, raws[chosen])
    meta = {
        "bin_count": bins.bin_count,
        "lo": bins.lo,
        "hi": bins.hi,
        "per_bin": per_bin,
        "seed": int(resolved["seed"]),
        "source_manifest_hash": sha256_file(manifest),
    }
    out = Path(resolved["out"])
    write_mapping_table(out, table, meta)
    if resolved.get("balanced_out"):
        balanced_rows = []
        dest = Path(resolved["balanced_out"])
        for idx in chosen:
            row = _rebase_row_path(rows[idx], manifest.parent, dest.parent)
            raw = float(raws[idx])
            row["normalized"] = {**row.get("normalized", {}), attr.value: to_normalized(table, raw)}
            row["bins"] = {**row.get("bins", {}), attr.value: int(bins.assignments[idx])}
            balanced_rows.append(row)
        write_manifest(dest, balanced_rows)
    _snapshot(out, "map", resolved)
    print(f"mapping table for {attr.value} ({table.n} entries) -> {out}")


def _parse_tables(resolved: dict) -> dict[AttributeKind, MappingTable]:
    items = resolved.get("table")
    if not items:
        raise ConfigError("at least one --table ATTR=PATH is required")
    tables: dict[AttributeKind, MappingTable] = {}
    for item in items:
        if "=" not in item:
            raise ConfigError(f"expected ATTR=PATH, got {item!r}")
        name, path = item.split("=", 1)
        attr = _attr(name)
        table, _ = read_mapping_table(path)
        if table.kind is not attr:
            raise ConfigError(f"{path} holds a {table.kind.value} table, not {attr.value}")
        tables[attr] = table
    return tables


def _cmd_train(resolved: dict) -> None:
    manifest = Path(resolved["manifest"])
    rows = read_manifest(manifest)
    tables = _parse_tables(resolved)
    attributes = tuple(tables.keys())

    mcfg = ModelConfig(
        image_size=int(resolved["image_size"]),
        patch_size=int(resolved["patch_size"]),
        model_dim=int(resolved["model_dim"]),
        n_heads=int(resolved["n_heads"]),
        mlp_hidden=int(resolved["mlp_hidden"]),
        n_classes=int(resolved["n_classes"]),
        class_tokens=int(resolved["class_tokens"]),
    )
    scfg = ScheduleConfig(
        steps=int(resolved["timesteps"]),
        beta_start=float(resolved["beta_start"]),
        beta_end=float(resolved["beta_end"]),
    )
    tcfg = TrainConfig(
        total_steps=int(resolved["steps"]),
        batch_size=int(resolved["batch_size"]),
        learning_rate=float(resolved["learning_rate"]),
        seed=int(resolved["seed"]),
    )

    images, class_ids, intensities = [], [], []
    for row in rows:
        img = _load_image(manifest.parent, row)
        if img.width != mcfg.image_size or img.height != mcfg.image_size:
            raise ConfigError(
                f"{row['path']}: size {img.width}x{img.height} does not match --image-size"
            )
        images.append(img)
        class_ids.append(int(row.get("spec", {}).get("class_id", 0)))
        values = []
        for attr in attributes:
            norm = row.get("normalized", {}).get(attr.value)
            if norm is None:
                raw = row.get("scores", {}).get(attr.value)
                if raw is None:
                    raise ConfigError(f"{row['path']}: no {attr.value} score or normalized value")
                norm = to_normalized(tables[attr], float(raw))
            values.append(float(norm))
        intensities.append(values)

    z0 = images_to_unit(images)
    class_arr = np.array(class_ids)
    if np.any(class_arr >= mcfg.n_classes):
        raise ConfigError("manifest class id exceeds --n-classes")
    mp = init_model_params(mcfg, attributes, tcfg.seed)
    sched = NoiseSchedule.from_config(scfg)
    losses = train(mp, mcfg, sched, z0, class_arr, np.array(intensities), tcfg,
                   log_every=int(resolved["log_every"]))
    out = Path(resolved["out"])
    save_checkpoint(out, Checkpoint(params=mp, model=mcfg, schedule=scfg, train=tcfg, tables=tables))
    _snapshot(out, "train", resolved)
    print(f"trained {tcfg.total_steps} steps (final loss {losses[-100:].mean():.5f}) -> {out}")


def _cmd_generate(resolved: dict) -> None:
    ckpt = load_checkpoint(resolved["checkpoint"])
    requested = _attr_value_pairs(resolved.get("intensity"))
    values = {k: 0.5 for k in ckpt.params.attributes}
    values.update(requested)
    vec = intensity_vector(ckpt.params.attributes, values)
    count = int(resolved["count"])
    class_id = int(resolved["class_id"])
    seeds = [derive_sample_seed(int(resolved["seed"]), i) for i in range(count)]
    images = sample_batch(
        ckpt.params, ckpt.model, ckpt.noise_schedule(),
        np.full(count, class_id), np.tile(vec, (count, 1)), seeds,
    )
    out = Path(resolved["out"])
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for i, img in enumerate(images):
        png = encode_image(img)
        rel = f"img_{i:05d}.png"
        (out / rel).write_bytes(png)
        rows.append({
            "path": rel,
            "hash": sha256_bytes(png),
            "class_id": class_id,
            "intensities": {k.value: float(v) for k, v in values.items()},
            "seed": seeds[i],
        })
    write_manifest(out / "manifest.jsonl", rows)
    _snapshot(out, "generate", resolved)
    print(f"sampled {count} images -> {out}")


def _cmd_sweep(resolved: dict) -> None:
    attr = _attr(resolved["attribute"])
    ckpt = load_checkpoint(resolved["checkpoint"])
    provider = SyntheticEmbedder(seed=int(resolved["provider_seed"]))
    result = run_sweep(
        ckpt,
        attr,
        _floats_csv(resolved["targets"]),
        int(resolved["samples_per_target"]),
        int(resolved["seed"]),
        provider=provider,
        concept=SafetyConcept.default(provider, float(resolved["safety_threshold"])),
        fixed_intensities=_attr_value_pairs(resolved.get("fixed_intensity")),
    )
    prefix = Path(resolved["out_prefix"])
    prefix.parent.mkdir(parents=True, exist_ok=True)
    for fmt in str(resolved["formats"]).split(","):
        fmt = fmt.strip()
        if fmt:
            atomic_write(Path(str(prefix) + "." + fmt), emit_report(result, fmt))
    _snapshot(Path(str(prefix) + ".sweep"), "sweep", resolved)
    print(
        f"{attr.value} sweep: avg_diff={result.avg_diff:.4f} "
        f"spearman={result.spearman:.4f} over {len(result.pairs)} samples"
    )


def _cmd_safety_eval(resolved: dict) -> None:
    ckpt = load_checkpoint(resolved["checkpoint"])
    provider = SyntheticEmbedder(seed=int(resolved["provider_seed"]))
    res = run_safety_eval(
        ckpt,
        int(resolved["n_samples"]),
        int(resolved["seed"]),
        provider=provider,
        concept=SafetyConcept.default(provider, float(resolved["safety_threshold"])),
    )
    out = Path(resolved["out"])
    atomic_write(out, json_bytes({"n_o": res.n_o, "n_s": res.n_s, "rr": res.rr}) + b"\n")
    _snapshot(out, "safety-eval", resolved)
    print(f"safety eval: n_o={res.n_o} n_s={res.n_s} rr={res.rr:.4f} -> {out}")


_COMMANDS = {
    "synth": _cmd_synth,
    "score": _cmd_score,
    "map": _cmd_map,
    "train": _cmd_train,
    "generate": _cmd_generate,
    "sweep": _cmd_sweep,
    "safety-eval": _cmd_safety_eval,
}


def main(argv=None) -> int:
    try:
        ns = build_parser().parse_args(argv)
        resolved = _resolve(ns.command, ns)
        _COMMANDS[ns.command](resolved)
        return EXIT_OK
    except TrainingDivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except AttrDialError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
