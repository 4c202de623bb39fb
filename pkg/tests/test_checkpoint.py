import json

import numpy as np
import pytest

from losparse.checkpoint import (
    MANIFEST,
    MatrixEntry,
    checkpoint_bytes,
    load_checkpoint,
    load_entries,
    model_entries,
    save_checkpoint,
    save_entries,
    stored_parameter_count,
)
from losparse.decomposition import FactorizedLayer, DenseLayer, remaining_ratio
from losparse.errors import CheckpointFormatError, StorageError
from losparse.harness import ToyModel


def factorized_model(rng, live=None):
    layer = FactorizedLayer(rng.standard_normal((100, 2)), rng.standard_normal((2, 100)),
                            rng.standard_normal((100, 100)))
    if live is not None:
        layer.live_columns[:] = False
        layer.live_columns[live] = True
        layer.S[:, ~layer.live_columns] = 0.0
    return ToyModel([layer, DenseLayer(rng.standard_normal((100, 7)))], [rng.standard_normal(100), np.zeros(7)])


def test_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    model = factorized_model(rng, live=[3, 10, 50])
    save_checkpoint(model, tmp_path / "ck")
    back = load_checkpoint(tmp_path / "ck")
    for a, b in zip(model.weights(), back.weights()):
        np.testing.assert_allclose(b, a, rtol=1e-6, atol=1e-7)
    assert back.layers[0].live_columns.tolist() == model.layers[0].live_columns.tolist()
    for a, b in zip(model.biases, back.biases):
        np.testing.assert_allclose(b, a, rtol=1e-6)


def test_resave_is_byte_identical(tmp_path):
    rng = np.random.default_rng(1)
    save_checkpoint(factorized_model(rng, live=[1, 2]), tmp_path / "a")
    save_checkpoint(load_checkpoint(tmp_path / "a"), tmp_path / "b")
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == sorted(p.name for p in (tmp_path / "b").iterdir())
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()


def test_overwrite_replaces_previous(tmp_path):
    rng = np.random.default_rng(2)
    save_checkpoint(factorized_model(rng), tmp_path / "ck")
    save_checkpoint(ToyModel([DenseLayer(np.ones((2, 2)))], [np.zeros(2)]), tmp_path / "ck")
    assert sorted(p.name for p in (tmp_path / "ck").iterdir()) == sorted([MANIFEST, "layer0.bias.bin", "layer0.w.bin"])
    assert [p.name for p in tmp_path.iterdir()] == ["ck"]


def test_sparse_blob_holds_live_columns_only(tmp_path):
    rng = np.random.default_rng(3)
    save_checkpoint(factorized_model(rng, live=list(range(0, 100, 10))), tmp_path / "pruned")
    save_checkpoint(factorized_model(rng), tmp_path / "full")
    pruned = (tmp_path / "pruned" / "layer0.s.bin").stat().st_size
    full = (tmp_path / "full" / "layer0.s.bin").stat().st_size
    assert full == 100 * 100 * 4
    assert pruned == full // 10


def test_manifest_parameter_count_matches_remaining_ratio(tmp_path):
    rng = np.random.default_rng(4)
    model = factorized_model(rng, live=[0, 5, 9, 77])
    save_checkpoint(model, tmp_path / "ck")
    entries = load_entries(tmp_path / "ck")
    assert stored_parameter_count(entries) == round(remaining_ratio(model.layers, model.original_param_count)
                                                    * model.original_param_count)


def test_manifest_fields(tmp_path):
    rng = np.random.default_rng(5)
    manifest = save_checkpoint(factorized_model(rng, live=[4, 2]), tmp_path / "ck")
    recs = {r["name"]: r for r in manifest["matrices"]}
    assert recs["layer0.u"]["rank"] == 2 and recs["layer0.v"]["rank"] == 2
    assert recs["layer0.s"]["live_column_ids"] == [2, 4]
    assert recs["layer1.w"]["kind"] == "dense"
    assert all(r["dtype"] == "float32" and r["endianness"] == "little" for r in recs.values())
    assert json.loads((tmp_path / "ck" / MANIFEST).read_text()) == manifest


def test_checkpoint_bytes_sums_files(tmp_path):
    save_checkpoint(ToyModel([DenseLayer(np.ones((3, 4)))], [np.zeros(4)]), tmp_path / "ck")
    assert checkpoint_bytes(tmp_path / "ck") == sum(p.stat().st_size for p in (tmp_path / "ck").iterdir())


def corrupt(tmp_path, edit):
    save_checkpoint(factorized_model(np.random.default_rng(6), live=[1]), tmp_path / "ck")
    path = tmp_path / "ck" / MANIFEST
    doc = json.loads(path.read_text())
    edit(doc)
    path.write_text(json.dumps(doc))
    return tmp_path / "ck"


@pytest.mark.parametrize("field, edit", [
    ("dtype", lambda d: d["matrices"][0].update(dtype="float64")),
    ("endianness", lambda d: d["matrices"][0].update(endianness="big")),
    ("rows", lambda d: d["matrices"][0].pop("rows")),
    ("kind", lambda d: d["matrices"][0].update(kind="mystery")),
    ("rank", lambda d: d["matrices"][0].update(rank=3)),
    ("live_column_ids", lambda d: d["matrices"][2].update(live_column_ids=[5, 1])),
    ("format_version", lambda d: d.update(format_version=99)),
    ("blob_file", lambda d: d["matrices"][0].update(blob_file="../escape.bin")),
])
def test_format_errors_name_the_field(tmp_path, field, edit):
    with pytest.raises(CheckpointFormatError, match=field):
        load_entries(corrupt(tmp_path, edit))


def test_truncated_blob_reports_sizes(tmp_path):
    ck = corrupt(tmp_path, lambda d: None)
    (ck / "layer0.u.bin").write_bytes(b"\0" * 12)
    with pytest.raises(CheckpointFormatError, match="12 bytes, expected 800"):
        load_entries(ck)


def test_missing_checkpoint(tmp_path):
    with pytest.raises(StorageError):
        load_entries(tmp_path / "nowhere")


def test_duplicate_names_rejected(tmp_path):
    e = MatrixEntry("a.w", "dense", np.ones((1, 1)))
    with pytest.raises(CheckpointFormatError):
        save_entries([e, e], tmp_path / "ck")


def test_entries_cover_every_layer():
    model = factorized_model(np.random.default_rng(7))
    names = [e.name for e in model_entries(model)]
    assert names == ["layer0.u", "layer0.v", "layer0.s", "layer0.bias", "layer1.w", "layer1.bias"]
