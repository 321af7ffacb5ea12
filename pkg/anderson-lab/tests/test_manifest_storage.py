import json
import os

import pytest

from manifest_storage import ExperimentManifest, ManifestStorage, compare_digests, load_manifest
from utils import file_digest


@pytest.fixture
def storage(tmp_path):
    return ManifestStorage(str(tmp_path / "runs"))


def _manifest(command="ppp-sample", exit_code=0):
    return ExperimentManifest(command, {"region": "ball:1", "seed": 3}, [3], {}, exit_code=exit_code)


def test_record_outputs_uses_sha256(tmp_path):
    path = tmp_path / "cloud.csv"
    path.write_text("# dim=3\n0,0,0\n")
    manifest = _manifest()
    manifest.record_outputs([str(path)])
    assert manifest.outputs == {"cloud.csv": file_digest(str(path))}
    assert len(manifest.outputs["cloud.csv"]) == 64


def test_save_and_load(storage):
    manifest = _manifest()
    manifest.outputs["cloud.csv"] = "ab" * 32
    run_id = storage.save_manifest(manifest)
    loaded = storage.get_manifest(run_id)
    assert loaded == manifest
    assert load_manifest(storage.manifest_path(run_id)) == manifest


def test_index_survives_reload(storage):
    run_id = storage.save_manifest(_manifest())
    reopened = ManifestStorage(storage.storage_dir)
    assert [r["id"] for r in reopened.list_runs()] == [run_id]


def test_resaving_replaces_index_entry(storage):
    run_id = storage.save_manifest(_manifest())
    storage.save_manifest(_manifest(exit_code=2), run_id)
    runs = storage.list_runs()
    assert len(runs) == 1
    assert runs[0]["exit_code"] == 2


def test_list_runs_filters_and_pages(storage):
    for command in ("ppp-sample", "fk", "fk"):
        storage.save_manifest(_manifest(command))
    assert len(storage.list_runs(filters={"command": "fk"})) == 2
    assert len(storage.list_runs(limit=1, offset=1)) == 1


def test_delete_run(storage):
    run_id = storage.save_manifest(_manifest())
    assert storage.delete_run(run_id)
    assert storage.get_manifest(run_id) is None
    assert not storage.delete_run(run_id)


def test_delete_run_removes_outputs(storage):
    run_id = storage.save_manifest(_manifest())
    out = os.path.join(storage.run_dir(run_id), "cloud.csv")
    with open(out, "w") as f:
        f.write("# dim=3\n")
    assert storage.delete_run(run_id)
    assert not os.path.exists(os.path.dirname(out))
    assert run_id not in [r["id"] for r in storage.list_runs()]


def test_corrupt_index_starts_empty(tmp_path):
    runs = tmp_path / "runs"
    runs.mkdir()
    (runs / "index.json").write_text("{not json")
    assert ManifestStorage(str(runs)).list_runs() == []


def test_bare_manifest_file(tmp_path):
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps(dict(_manifest().to_dict(), extra="ignored")))
    assert load_manifest(str(path)).command == "ppp-sample"


def test_run_dir_is_created(storage):
    assert os.path.isdir(storage.run_dir("abc"))


def test_compare_digests():
    assert compare_digests({"a": "1", "b": "2"}, {"a": "1", "b": "2"}) == []
    assert compare_digests({"a": "1", "b": "2"}, {"a": "1", "b": "3", "c": "4"}) == ["b", "c"]
