import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ascbench import dataset as ds
from ascbench.dataset import DatasetManifest, ManifestEntry
from ascbench.errors import ConfigError, DataError, DuplicateEntryError, FormatError, TaxonomyError

from helpers import full_scale_manifest


def touch(path):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(b"")


def test_build_from_directories(tmp_path):
    for sub in ["airport", "metro_station", "shopping-mall", "park", "street_pedestrian", "PublicSquare"]:
        for i in range(2):
            touch(tmp_path / sub / f"f{i}.wav")
    m = ds.build_manifest(tmp_path)
    assert len(m) == 12
    assert {e.subclass for e in m} == set(ds.SUBCLASSES)
    assert all(e.split == "unassigned" and not e.augmented for e in m)
    airport = [e for e in m if e.path.startswith("airport/")]
    assert all(e.scene == "Indoor" for e in airport)


def test_build_empty_root(tmp_path):
    assert len(ds.build_manifest(tmp_path)) == 0


def test_build_errors(tmp_path):
    with pytest.raises(DataError, match="nowhere"):
        ds.build_manifest(tmp_path / "nowhere")
    touch(tmp_path / "beach" / "a.wav")
    with pytest.raises(TaxonomyError):
        ds.build_manifest(tmp_path)


def test_build_from_index(tmp_path):
    idx = tmp_path / "index.csv"
    idx.write_text("# path,subclass\na.wav,Park\nb.wav,airport\n")
    m = ds.build_manifest(idx)
    assert [(e.path, e.subclass, e.scene) for e in m] == [("a.wav", "Park", "Outdoor"), ("b.wav", "Airport", "Indoor")]
    idx.write_text("a.wav,Park\na.wav,Park\n")
    with pytest.raises(DuplicateEntryError):
        ds.build_manifest(idx)


def test_entry_taxonomy():
    with pytest.raises(TaxonomyError):
        ManifestEntry("x.wav", "Beach", "x")
    with pytest.raises(TaxonomyError):
        ManifestEntry("x.wav", "Park", "x", scene="Indoor")
    e = ManifestEntry("x.wav", "Park", "x")
    assert e.label(2) == 1 and e.label(6) == ds.SUBCLASSES.index("Park")


@pytest.mark.parametrize("label6", range(6))
def test_six_way_collapses_to_two_way(label6):
    e = ManifestEntry("x.wav", ds.SUBCLASSES[label6], "x")
    assert ds.collapse_label(e.label(6)) == e.label(2)


def test_manifest_round_trip_rebases_paths(tmp_path):
    m = DatasetManifest([ManifestEntry("Park/a.wav", "Park", "Park/a", "train", True)], tmp_path / "data")
    ds.save_manifest(m, tmp_path / "out" / "manifest.jsonl")
    back = ds.load_manifest(tmp_path / "out" / "manifest.jsonl")
    assert back.entries[0].path == "../data/Park/a.wav"
    assert back.resolve(back.entries[0]).resolve() == (tmp_path / "data" / "Park" / "a.wav").resolve()
    rec = json.loads((tmp_path / "out" / "manifest.jsonl").read_text())
    assert set(rec) == {"path", "scene", "subclass", "split", "augmented", "parent_id"}


def test_load_manifest_errors(tmp_path):
    p = tmp_path / "m.jsonl"
    p.write_text('{"path": "a.wav", "subclass": "Park", "parent_id": "a"}\n{"path": "b.wav"}\n')
    with pytest.raises(FormatError, match=":2:"):
        ds.load_manifest(p)
    with pytest.raises(DataError):
        ds.load_manifest(tmp_path / "missing.jsonl")


def test_balance():
    m = full_scale_manifest(per_subclass=3, segments=1, augmented=False)
    assert ds.check_balance(m).balanced
    unbalanced = m.with_entries(m.entries[1:])
    rep = ds.check_balance(unbalanced)
    assert not rep.balanced and rep.deficient == [m.entries[0].subclass]
    assert m.entries[0].subclass in str(rep)
    empty = ds.check_balance(DatasetManifest([]))
    assert empty.balanced and empty.empty


def test_full_scale_balance():
    m = full_scale_manifest(segments=1, augmented=False)
    rep = ds.check_balance(m)
    assert rep.balanced and set(rep.counts.values()) == {1440}


def test_split_full_scale_counts():
    m = ds.split_train_test(full_scale_manifest(), 0.2, seed=7)
    for scene in ds.SCENES:
        test = sum(e.split == "test" and e.scene == scene for e in m)
        train = sum(e.split == "train" and e.scene == scene for e in m)
        assert (test, train) == (3456, 13824)
    assert not ds.leakage(m)


def test_split_groups_halves_and_variants():
    m = ds.split_train_test(full_scale_manifest(per_subclass=5), 0.2, seed=1)
    by_parent = {}
    for e in m:
        by_parent.setdefault(e.parent_id, set()).add(e.split)
    assert all(len(s) == 1 for s in by_parent.values())
    assert all(sum(e.parent_id == p for e in m) == 4 for p in by_parent)


def test_split_deterministic_and_seed_sensitive():
    base = full_scale_manifest(per_subclass=20, segments=1, augmented=False)
    a = [e.split for e in ds.split_train_test(base, 0.2, 3)]
    b = [e.split for e in ds.split_train_test(base, 0.2, 3)]
    c = [e.split for e in ds.split_train_test(base, 0.2, 4)]
    assert a == b and a != c


@pytest.mark.parametrize("frac", [0.0, 1.0, -0.1, 1.5])
def test_split_fraction_range(frac):
    with pytest.raises(ConfigError):
        ds.split_train_test(full_scale_manifest(2), frac)


def test_split_rejects_assigned():
    m = ds.split_train_test(full_scale_manifest(2), 0.5)
    with pytest.raises(ConfigError):
        ds.split_train_test(m, 0.5)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(ds.SUBCLASSES), st.integers(0, 15), st.integers(1, 4)), max_size=40),
       st.floats(0.05, 0.95), st.integers(0, 2 ** 32))
def test_split_leakage_free_and_total(spec, frac, seed):
    entries = []
    for j, (sub, parent, n) in enumerate(spec):
        for k in range(n):
            entries.append(ManifestEntry(f"{sub}/{j}_{k}.wav", sub, f"{sub}/p{parent}"))
    m = ds.split_train_test(DatasetManifest(entries), frac, seed)
    assert all(e.split in ("train", "test") for e in m)
    assert not ds.leakage(m)
    # per subclass the test share of groups is as close as largest remainder allows
    for sub in ds.SUBCLASSES:
        groups = {e.parent_id for e in m if e.subclass == sub}
        test_groups = {e.parent_id for e in m if e.subclass == sub and e.split == "test"}
        assert abs(len(test_groups) - frac * len(groups)) < 1.0 + 1e-9


def test_accounting_full_scale():
    m = ds.split_train_test(full_scale_manifest(), 0.2, seed=0)
    rows = ds.data_accounting(m, 5.0).as_dict()
    assert rows["Files in Dataset (10-sec clips)"] == (8640, 24.0)
    assert rows["Files per subclass"] == (1440, 4.0)
    assert rows["Indoor Scenes (5-sec clips)"] == (8640, 12.0)
    assert rows["Outdoor Scenes (5-sec clips)"] == (8640, 12.0)
    assert rows["Indoor Scenes with Augmentation"] == (17280, 24.0)
    assert rows["Outdoor Scenes with Augmentation"] == (17280, 24.0)
    assert rows["Test Data per Class"] == (3456, 4.8)
    assert rows["Train Data per Class"] == (13824, 19.2)
    assert rows["Total Data (with 2 classes)"] == (34560, 48.0)


def test_accounting_small_cases():
    one = DatasetManifest([ManifestEntry("Park/a.wav", "Park", "Park/a")])
    assert ds.data_accounting(one, 5.0).as_dict()["Total Data (with 2 classes)"][1] == round(1 / 720, 9)
    rep = ds.data_accounting(full_scale_manifest(4), 5.0)
    assert sum(rep.per_scene.values()) == rep.as_dict()["Total Data (with 2 classes)"][0]
    md = rep.to_markdown()
    assert md.splitlines()[0] == "Type of Data | No. of Data Points | Hours of Audio"
