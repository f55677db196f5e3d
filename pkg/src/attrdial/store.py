"""On-disk formats: JSONL manifests, mapping-table JSON, and a binary
container (checkpoints, embedding caches).

Container layout: 16-byte magic, little-endian uint64 metadata length, a
UTF-8 JSON metadata block, then the raw little-endian float32 section
blobs in the order listed under metadata["sections"]. Every format carries
an integer format_version starting at 1. All writes are atomic
(temp file in the target directory, then rename), and every byte written
is a pure function of the data, so reruns reproduce files exactly.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .config import ModelConfig, ScheduleConfig, TrainConfig, config_dict
from .diffusion import DenoiserParams, ModelParams, init_model_params
from .encoder import ValueEncoderParams
from .errors import ConfigError, ContractError
from .mapping import MappingTable
from .metrics import AttributeKind

MAGIC = b"ATTRDIALCONTAIN1"
FORMAT_VERSION = 1


def atomic_write(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def json_bytes(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path) -> str:
    return sha256_bytes(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------

def write_manifest(path, rows: list[dict]) -> None:
    """One JSON object per line; keys sorted so reruns are byte-identical."""
    for row in rows:
        if "path" not in row or "hash" not in row:
            raise ContractError("manifest rows need at least path and hash")
    body = b"".join(json_bytes(row) + b"\n" for row in rows)
    atomic_write(path, body)


def read_manifest(path) -> list[dict]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}:{lineno}: invalid manifest line: {exc}") from exc
    return rows


# ---------------------------------------------------------------------------
# Mapping tables
# ---------------------------------------------------------------------------

def write_mapping_table(path, table: MappingTable, metadata: dict | None = None) -> None:
    doc = {
        "format_version": FORMAT_VERSION,
        "kind": "mapping-table",
        "attribute": table.kind.value,
        "entries": [[float(r), float(n)] for r, n in table.entries],
        "metadata": metadata or {},
    }
    atomic_write(path, json_bytes(doc) + b"\n")


def read_mapping_table(path) -> tuple[MappingTable, dict]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("kind") != "mapping-table":
        raise ConfigError(f"{path} is not a mapping table file")
    if doc.get("format_version") != FORMAT_VERSION:
        raise ConfigError(f"unsupported mapping table version {doc.get('format_version')}")
    table = MappingTable(
        kind=AttributeKind(doc["attribute"]), entries=np.array(doc["entries"], dtype=np.float64)
    )
    return table, doc.get("metadata", {})


# ---------------------------------------------------------------------------
# Binary container
# ---------------------------------------------------------------------------

def write_container(path, kind: str, metadata: dict, sections: Mapping[str, np.ndarray]) -> None:
    section_list = []
    blobs = []
    for name, arr in sections.items():
        a = np.ascontiguousarray(arr, dtype="<f4")
        section_list.append({"name": name, "shape": list(a.shape)})
        blobs.append(a.tobytes())
    meta = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "sections": section_list,
        "metadata": metadata,
    }
    mb = json_bytes(meta)
    out = bytearray(MAGIC)
    out.extend(struct.pack("<Q", len(mb)))
    out.extend(mb)
    for b in blobs:
        out.extend(b)
    atomic_write(path, bytes(out))


def read_container(path) -> tuple[str, dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if len(data) < 24 or data[:16] != MAGIC:
        raise ConfigError(f"{path} is not a container file (bad magic)")
    (mlen,) = struct.unpack("<Q", data[16:24])
    if 24 + mlen > len(data):
        raise ConfigError(f"{path}: truncated metadata block")
    meta = json.loads(data[24:24 + mlen].decode("utf-8"))
    if meta.get("format_version") != FORMAT_VERSION:
        raise ConfigError(f"unsupported container version {meta.get('format_version')}")
    sections = {}
    pos = 24 + mlen
    for sec in meta["sections"]:
        shape = tuple(sec["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 4
        if pos + nbytes > len(data):
            raise ConfigError(f"{path}: truncated section {sec['name']}")
        arr = np.frombuffer(data[pos:pos + nbytes], dtype="<f4").reshape(shape)
        sections[sec["name"]] = arr.astype(np.float64)
        pos += nbytes
    return meta["kind"], meta.get("metadata", {}), sections


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

@dataclass
class Checkpoint:
    """Everything needed to generate and evaluate: weights, configs, tables."""

    params: ModelParams
    model: ModelConfig
    schedule: ScheduleConfig
    train: TrainConfig
    tables: dict[AttributeKind, MappingTable]

    def noise_schedule(self):
        from .diffusion import NoiseSchedule

        return NoiseSchedule.from_config(self.schedule)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    metadata = {
        "model": config_dict(ckpt.model),
        "schedule": config_dict(ckpt.schedule),
        "train": config_dict(ckpt.train),
        "attributes": [k.value for k in ckpt.params.attributes],
        "tables": {
            k.value: [[float(r), float(n)] for r, n in t.entries] for k, t in ckpt.tables.items()
        },
    }
    write_container(path, "checkpoint", metadata, ckpt.params.as_dict())


def load_checkpoint(path) -> Checkpoint:
    kind, metadata, sections = read_container(path)
    if kind != "checkpoint":
        raise ConfigError(f"{path} holds {kind!r}, expected a checkpoint")
    mcfg = ModelConfig(**metadata["model"])
    scfg = ScheduleConfig(**metadata["schedule"])
    tcfg = TrainConfig(**metadata["train"])
    attributes = tuple(AttributeKind(a) for a in metadata["attributes"])

    # Rebuild with the stored weights; init_model_params supplies the structure.
    mp = init_model_params(mcfg, attributes, seed=0)
    want = set(mp.as_dict().keys())
    have = set(sections.keys())
    if want != have:
        raise ConfigError(f"checkpoint sections mismatch: missing {want - have}, extra {have - want}")
    mp.denoiser = DenoiserParams(**{k: sections[f"denoiser.{k}"] for k in mp.denoiser.as_dict()})
    mp.class_emb = sections["class_emb"]
    mp.encoders = {
        kind_: ValueEncoderParams(
            **{f: sections[f"encoder.{kind_.value}.{f}"] for f in ("w1", "b1", "w2", "b2", "pos_emb")}
        )
        for kind_ in attributes
    }
    tables = {
        AttributeKind(name): MappingTable(
            kind=AttributeKind(name), entries=np.array(entries, dtype=np.float64)
        )
        for name, entries in metadata["tables"].items()
    }
    return Checkpoint(params=mp, model=mcfg, schedule=scfg, train=tcfg, tables=tables)


# ---------------------------------------------------------------------------
# Embedding cache
# ---------------------------------------------------------------------------

def write_embedding_cache(path, dim: int, entries: Mapping[str, np.ndarray]) -> None:
    for key, vec in entries.items():
        if np.asarray(vec).shape != (dim,):
            raise ContractError(f"cache entry {key} must have shape ({dim},)")
    write_container(path, "embedding-cache", {"dim": dim}, dict(entries))


def read_embedding_cache(path) -> tuple[int, dict[str, np.ndarray]]:
    kind, metadata, sections = read_container(path)
    if kind != "embedding-cache":
        raise ConfigError(f"{path} holds {kind!r}, expected an embedding cache")
    return int(metadata["dim"]), sections
