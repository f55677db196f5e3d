import numpy as np
import pytest

from attrdial.config import ModelConfig, ScheduleConfig, TrainConfig
from attrdial.diffusion import init_model_params
from attrdial.errors import ConfigError, ContractError
from attrdial.mapping import MappingTable
from attrdial.metrics import AttributeKind, FileBackedEmbedder
from attrdial.image import image_from_array
from attrdial.store import (
    Checkpoint,
    atomic_write,
    load_checkpoint,
    read_container,
    read_manifest,
    read_mapping_table,
    save_checkpoint,
    write_container,
    write_embedding_cache,
    write_manifest,
    write_mapping_table,
)

from .conftest import TINY_MODEL


def test_container_round_trip(tmp_path):
    path = tmp_path / "c.bin"
    rng = np.random.default_rng(0)
    sections = {"a": rng.standard_normal((3, 4)).astype(np.float32), "b": np.arange(5.0)}
    write_container(path, "checkpoint", {"note": 1}, sections)
    kind, meta, loaded = read_container(path)
    assert kind == "checkpoint" and meta == {"note": 1}
    assert loaded["a"] == pytest.approx(sections["a"], abs=0)
    assert loaded["b"] == pytest.approx(sections["b"].astype(np.float32), abs=0)


def test_container_bad_magic(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"not a container at all")
    with pytest.raises(ConfigError):
        read_container(path)


def test_container_truncated(tmp_path):
    path = tmp_path / "c.bin"
    write_container(path, "checkpoint", {}, {"a": np.ones(100)})
    data = path.read_bytes()
    path.write_bytes(data[:-50])
    with pytest.raises(ConfigError):
        read_container(path)


def test_manifest_round_trip_and_determinism(tmp_path):
    rows = [
        {"path": "x.png", "hash": "00", "spec": {"class_id": 1}},
        {"path": "y.png", "hash": "01", "scores": {"brightness": 0.25}},
    ]
    write_manifest(tmp_path / "m1.jsonl", rows)
    write_manifest(tmp_path / "m2.jsonl", rows)
    assert read_manifest(tmp_path / "m1.jsonl") == rows
    assert (tmp_path / "m1.jsonl").read_bytes() == (tmp_path / "m2.jsonl").read_bytes()


def test_manifest_requires_path_and_hash(tmp_path):
    with pytest.raises(ContractError):
        write_manifest(tmp_path / "m.jsonl", [{"path": "x.png"}])


def test_manifest_rejects_invalid_json(tmp_path):
    p = tmp_path / "m.jsonl"
    p.write_text('{"path": "a", "hash": "b"}\nnot json\n')
    with pytest.raises(ConfigError):
        read_manifest(p)


def test_mapping_table_round_trip_exact(tmp_path):
    rng = np.random.default_rng(1)
    table = MappingTable.from_values(AttributeKind.DETAIL, rng.uniform(0, 5.5, 200))
    path = tmp_path / "table.json"
    write_mapping_table(path, table, {"per_bin": 20})
    loaded, meta = read_mapping_table(path)
    assert loaded.kind is AttributeKind.DETAIL
    assert np.array_equal(loaded.entries, table.entries)  # float64 exact via JSON repr
    assert meta == {"per_bin": 20}


def test_checkpoint_round_trip(tmp_path):
    mp = init_model_params(TINY_MODEL, [AttributeKind.BRIGHTNESS, AttributeKind.DETAIL], seed=5)
    tables = {
        AttributeKind.BRIGHTNESS: MappingTable.from_values(AttributeKind.BRIGHTNESS, [0.1, 0.5, 0.9]),
        AttributeKind.DETAIL: MappingTable.from_values(AttributeKind.DETAIL, [1.0, 2.0]),
    }
    ckpt = Checkpoint(params=mp, model=TINY_MODEL, schedule=ScheduleConfig(steps=10),
                      train=TrainConfig(total_steps=5, batch_size=2, seed=5), tables=tables)
    path = tmp_path / "ckpt.bin"
    save_checkpoint(path, ckpt)
    loaded = load_checkpoint(path)
    assert loaded.model == TINY_MODEL
    assert loaded.schedule == ScheduleConfig(steps=10)
    assert loaded.train.total_steps == 5
    assert loaded.params.attributes == mp.attributes
    for k, arr in mp.as_dict().items():
        # weights persist as float32
        assert loaded.params.as_dict()[k] == pytest.approx(arr.astype(np.float32), abs=0)
    for kind, table in tables.items():
        assert np.array_equal(loaded.tables[kind].entries, table.entries)


def test_checkpoint_save_deterministic(tmp_path):
    mp = init_model_params(TINY_MODEL, [AttributeKind.BRIGHTNESS], seed=2)
    ckpt = Checkpoint(params=mp, model=TINY_MODEL, schedule=ScheduleConfig(steps=10),
                      train=TrainConfig(total_steps=5, batch_size=2, seed=2),
                      tables={AttributeKind.BRIGHTNESS: MappingTable.from_values(
                          AttributeKind.BRIGHTNESS, [0.2, 0.4])})
    save_checkpoint(tmp_path / "a.bin", ckpt)
    save_checkpoint(tmp_path / "b.bin", ckpt)
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()


def test_embedding_cache_and_file_backed_provider(tmp_path):
    img = image_from_array(np.full((4, 4, 3), 9, dtype=np.uint8))
    vec = np.arange(16.0)
    import hashlib

    entries = {
        "img:" + img.content_hash(): vec,
        "text:" + hashlib.sha256(b"hello").hexdigest(): vec * 2,
    }
    path = tmp_path / "cache.bin"
    write_embedding_cache(path, 16, entries)
    emb = FileBackedEmbedder.from_file(path)
    assert emb.embed_image(img) == pytest.approx(vec, abs=0)
    assert emb.embed_text("hello") == pytest.approx(vec * 2, abs=0)
    other = image_from_array(np.zeros((4, 4, 3), dtype=np.uint8))
    with pytest.raises(ContractError):
        emb.embed_image(other)
    with pytest.raises(ContractError):
        emb.embed_text("missing")


def test_embedding_cache_dim_checked(tmp_path):
    with pytest.raises(ContractError):
        write_embedding_cache(tmp_path / "c.bin", 4, {"img:00": np.ones(5)})


def test_atomic_write_no_temp_left(tmp_path):
    atomic_write(tmp_path / "out.bin", b"hello")
    assert (tmp_path / "out.bin").read_bytes() == b"hello"
    assert [p.name for p in tmp_path.iterdir()] == ["out.bin"]
