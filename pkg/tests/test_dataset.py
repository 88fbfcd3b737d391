import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from leafscope import LEAF_CLASSES
from leafscope.dataset import (
    DatasetManifest,
    ImageSample,
    encode_labels,
    one_hot,
    scan_dataset,
    stratified_split,
)
from leafscope.errors import ConfigError, DatasetError, LabelError, StateError
from leafscope.synthetic import make_blank_layout


def _manifest(counts):
    names = tuple(sorted(counts))
    samples = tuple(
        ImageSample(f"{n}/{k}.png", cid, n) for cid, n in enumerate(names) for k in range(counts[n])
    )
    return DatasetManifest(Path("/nowhere"), names, samples)


class TestScan:
    def test_published_layout(self, published_layout):
        m = scan_dataset(published_layout)
        assert m.class_names == LEAF_CLASSES
        assert len(m.samples) == 6400
        assert m.class_counts() == [800] * 8
        assert sum(m.class_counts()) == len(m.samples)

    def test_minimal(self, tmp_path):
        make_blank_layout(tmp_path, {"only": 1})
        m = scan_dataset(tmp_path)
        assert m.class_names == ("only",)
        assert [s.class_id for s in m.samples] == [0]
        assert all(s.split == "unassigned" for s in m.samples)

    def test_sort_order(self, tmp_path):
        make_blank_layout(tmp_path, {"b": 3, "a": 2})
        m = scan_dataset(tmp_path)
        assert m.class_names == ("a", "b")
        assert [s.class_id for s in m.samples] == [0, 0, 1, 1, 1]
        assert all(s.class_name == m.class_names[s.class_id] for s in m.samples)

    def test_extension_filter(self, tmp_path):
        make_blank_layout(tmp_path, {"a": 2})
        (tmp_path / "a" / "notes.txt").write_text("x")
        (tmp_path / "a" / "UPPER.JPG").write_bytes((tmp_path / "a" / "00000.png").read_bytes())
        m = scan_dataset(tmp_path)
        assert [s.relative_path for s in m.samples] == ["a/00000.png", "a/00001.png", "a/UPPER.JPG"]

    def test_missing_root(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            scan_dataset(tmp_path / "absent")

    def test_no_classes(self, tmp_path):
        with pytest.raises(DatasetError, match="no class"):
            scan_dataset(tmp_path)

    def test_empty_class_named(self, tmp_path):
        make_blank_layout(tmp_path, {"a": 1})
        (tmp_path / "hollow").mkdir()
        with pytest.raises(DatasetError, match="hollow"):
            scan_dataset(tmp_path)


class TestSplit:
    def test_published_counts(self, published_layout):
        m = scan_dataset(published_layout)
        split = stratified_split(m, 0.8, seed=123)
        assert len(split.train_ids) == 5120 and len(split.test_ids) == 1280
        m2 = m.with_split(split)
        for cid in range(8):
            assert sum(1 for s in m2.samples if s.class_id == cid and s.split == "train") == 640
            assert sum(1 for s in m2.samples if s.class_id == cid and s.split == "test") == 160

    def test_floor_rule(self):
        split = stratified_split(_manifest({"a": 5, "b": 5}), 0.8, seed=0)
        assert len(split.train_ids) == 8 and len(split.test_ids) == 2

    def test_floor_remainder_to_test(self):
        split = stratified_split(_manifest({"a": 7}), 0.5, seed=0)
        assert (len(split.train_ids), len(split.test_ids)) == (3, 4)

    def test_deterministic(self):
        m = _manifest({"a": 30, "b": 17, "c": 4})
        a = stratified_split(m, 0.8, seed=9)
        b = stratified_split(m, 0.8, seed=9)
        assert json.dumps(a.__dict__) == json.dumps(b.__dict__)
        assert stratified_split(m, 0.8, seed=10) != a

    @pytest.mark.parametrize("ratio", [0.0, 1.0, -0.1, 1.5])
    def test_ratio_range(self, ratio):
        with pytest.raises(ConfigError):
            stratified_split(_manifest({"a": 3}), ratio, seed=0)

    def test_three_way(self):
        split = stratified_split(_manifest({"a": 10, "b": 10}), 0.6, seed=0, val_ratio=0.2)
        assert (len(split.train_ids), len(split.val_ids), len(split.test_ids)) == (12, 4, 4)
        assert not set(split.val_ids) & (set(split.train_ids) | set(split.test_ids))

    @settings(max_examples=60, deadline=None)
    @given(counts=st.lists(st.integers(1, 40), min_size=1, max_size=6),
           ratio=st.floats(0.05, 0.95), seed=st.integers(0, 2**32 - 1))
    def test_properties(self, counts, ratio, seed):
        m = _manifest({f"c{i}": n for i, n in enumerate(counts)})
        split = stratified_split(m, ratio, seed)
        train, test = set(split.train_ids), set(split.test_ids)
        assert not train & test
        assert train | test == set(range(len(m.samples)))
        labels = m.labels()
        for cid, n in enumerate(counts):
            n_train = int(np.sum(labels[list(train)] == cid)) if train else 0
            assert abs(n_train / n - ratio) < 1 / n


class TestLabels:
    def test_two(self):
        lm = encode_labels(["AC", "BC"])
        assert (lm.id_of("AC"), lm.id_of("BC")) == (0, 1)
        assert lm.one_hot(1).tolist() == [0, 1]

    def test_class_codes(self):
        lm = encode_labels(sorted(LEAF_CLASSES))
        assert [lm.id_of(n) for n in LEAF_CLASSES] == list(range(8))
        for i in range(8):
            v = one_hot(i, 8)
            assert v.sum() == 1 and v[i] == 1
            assert lm.name_of(i) == LEAF_CLASSES[i]

    def test_unknown(self):
        with pytest.raises(LabelError):
            encode_labels(["AC"]).id_of("ZZ")

    def test_duplicates(self):
        with pytest.raises(ConfigError):
            encode_labels(["AC", "AC"])


class TestManifestFile:
    def test_round_trip(self, tmp_path):
        make_blank_layout(tmp_path / "d", {"x": 4, "y": 3})
        m = scan_dataset(tmp_path / "d")
        m = m.with_split(stratified_split(m, 0.5, 1))
        path = m.save(tmp_path / "manifest.json")
        doc = json.loads(path.read_text())
        assert doc["version"] == 1 and doc["classes"] == ["x", "y"] and doc["ratio"] == 0.5
        assert set(doc["samples"][0]) == {"path", "class_id", "split"}
        back = DatasetManifest.load(path)
        assert back == m
        assert back.split_assignment() == stratified_split(m, 0.5, 1)
        assert back.digest() == m.digest()
        assert (back.root_path / back.samples[0].relative_path).is_file()

    def test_unassigned_split_state(self, tmp_path):
        make_blank_layout(tmp_path, {"x": 2})
        with pytest.raises(StateError):
            scan_dataset(tmp_path).split_assignment()
