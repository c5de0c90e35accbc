import os

import numpy as np
import pytest

from neonbeam import (
    AttackConfig,
    DatasetSpec,
    EvalRecord,
    Image,
    LabelMappingError,
    ScoreVector,
    ToyOracle,
    UndefinedMetricError,
    compute_asr,
    decode_image,
    encode_image,
    generate_dataset,
    misclass_histogram,
    run_attack,
    transfer_matrix,
)
from neonbeam.harness import read_manifest, record_from_dict, record_to_dict
from neonbeam.oracle import Oracle, toy_predict

from .conftest import solid_image


def rec(sample_id, true, clean, pred):
    return EvalRecord(sample_id, true, clean, None, pred)


class TestAsr:
    def test_hand_counted_case(self):
        records = [
            rec("a", 1, True, 2),
            rec("b", 1, True, 3),
            rec("c", 2, True, 0),
            rec("d", 2, True, 2),
        ]
        assert compute_asr(records) == 0.75

    def test_all_fail(self):
        records = [rec(str(i), 1, True, 1) for i in range(5)]
        assert compute_asr(records) == 0.0

    def test_all_succeed(self):
        records = [rec(str(i), 1, True, 0) for i in range(5)]
        assert compute_asr(records) == 1.0

    def test_reorder_invariance(self):
        rng = np.random.default_rng(0)
        records = [
            rec(str(i), int(rng.integers(3)), bool(rng.random() < 0.8),
                int(rng.integers(3)))
            for i in range(40)
        ]
        shuffled = list(records)
        rng.shuffle(shuffled)
        assert compute_asr(records) == compute_asr(shuffled)

    def test_clean_incorrect_excluded(self):
        records = [rec("a", 1, True, 2), rec("b", 1, False, 1)]
        assert compute_asr(records) == compute_asr([records[0]])

    def test_empty_denominator(self):
        with pytest.raises(UndefinedMetricError):
            compute_asr([rec("a", 1, False, 1)])
        with pytest.raises(UndefinedMetricError):
            compute_asr([])


class TestHistogram:
    def test_no_successes(self):
        assert misclass_histogram([rec("a", 1, True, 1)]) == {}

    def test_hand_counted(self):
        records = [
            rec("a", 1, True, 7),
            rec("b", 1, True, 7),
            rec("c", 1, True, 4),
            rec("d", 1, True, 1),   # failed attack, excluded
            rec("e", 1, False, 4),  # clean-incorrect, excluded
        ]
        assert misclass_histogram(records) == {7: 2, 4: 1}

    def test_counts_conserved(self):
        rng = np.random.default_rng(1)
        records = [
            rec(str(i), int(rng.integers(4)), True, int(rng.integers(4)))
            for i in range(60)
        ]
        hist = misclass_histogram(records)
        successes = sum(1 for r in records if r.predicted_label != r.true_label)
        assert sum(hist.values()) == successes

    def test_sorted_descending(self):
        records = [rec(str(i), 0, True, p) for i, p in enumerate([2, 1, 1, 3, 1, 2])]
        hist = misclass_histogram(records)
        assert list(hist.items()) == [(1, 3), (2, 2), (3, 1)]


class _PermutedToy(Oracle):
    """Toy classifier with input channels swapped: scores perm(img)."""

    backend = "toy-permuted"

    def __init__(self, perm=(2, 1, 0)):
        super().__init__()
        self.perm = perm

    def _score(self, img):
        return toy_predict(Image(img.pixels[:, :, self.perm]))


class TestTransfer:
    def successful_attacks(self):
        base = solid_image(16, 16, (0.0, 0.0, 1.0))
        from neonbeam import ParamBounds

        bounds = ParamBounds((0.0, 15.0), (0.0, 15.0), (6.0, 6.0), (0.7, 0.7),
                             ((1.0, 0.0, 0.0),))
        images, labels = [], []
        for seed in range(40):
            cfg = AttackConfig(num_beams=4, max_steps=25, bounds=bounds, seed=seed)
            result = run_attack(base, 2, None, ToyOracle(), cfg)
            if result.success:
                images.append(result.adversarial)
                labels.append("blue")
        assert len(images) >= 3
        return images, labels

    def test_self_transfer_is_one(self):
        images, labels = self.successful_attacks()
        matrix = transfer_matrix(images, labels, [ToyOracle()])
        assert matrix == [1.0]

    def test_permuted_oracle_deterministic(self):
        images, labels = self.successful_attacks()
        a = transfer_matrix(images, labels, [_PermutedToy()])
        b = transfer_matrix(images, labels, [_PermutedToy()])
        assert a == b
        assert 0.0 <= a[0] <= 1.0

    def test_empty_oracle_list(self):
        assert transfer_matrix([], [], []) == []

    def test_label_vocabulary_mismatch(self):
        images = [solid_image(4, 4, (0, 0, 1))]
        with pytest.raises(LabelMappingError):
            transfer_matrix(images, ["cerulean"], [ToyOracle()])

    def test_alias_table(self):
        images = [solid_image(4, 4, (0, 0, 1))]
        matrix = transfer_matrix(
            images, ["cerulean"], [ToyOracle()], aliases={"cerulean": "blue"}
        )
        assert matrix == [0.0]  # still classified as its true label

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            transfer_matrix([solid_image(2, 2, (0, 0, 0))], [], [ToyOracle()])


class TestDatasetSpec:
    def test_validation(self):
        with pytest.raises(ValueError):
            DatasetSpec(colors=())
        with pytest.raises(ValueError):
            DatasetSpec(colors=((1, 0, 0),), beams_per_image=0)
        with pytest.raises(ValueError):
            DatasetSpec(colors=((1, 0, 0),), intensity=1.2)
        with pytest.raises(ValueError):
            DatasetSpec(colors=((1, 0, 0),), radius=0.0)

    def test_planned_output_count(self):
        spec = DatasetSpec(colors=tuple((c / 26, 0, 0) for c in range(27)))
        assert spec.planned_output_count(2) == 54

    def test_per_class_arithmetic(self):
        spec = DatasetSpec(
            colors=tuple((c / 26.0, 0.0, 0.0) for c in range(27)),
            images_per_class=50,
        )
        assert spec.planned_output_count_per_class(1000) == 1_350_000


class TestGenerateDataset:
    @pytest.fixture
    def sources(self, tmp_path):
        paths = []
        for i, color in enumerate([(0.2, 0.5, 0.8), (0.9, 0.1, 0.4)]):
            p = tmp_path / f"img{i}.png"
            p.write_bytes(encode_image(solid_image(24, 24, color)))
            paths.append((f"img{i}", str(p)))
        return paths

    def test_cardinality(self, sources, tmp_path):
        spec = DatasetSpec(colors=((1, 0, 0), (0, 1, 0), (0, 0, 1)),
                           beams_per_image=3, radius=5.0, seed=1)
        rows = generate_dataset(spec, sources, str(tmp_path / "out"))
        assert len(rows) == 6
        assert all("error" not in r for r in rows)
        assert all(os.path.exists(tmp_path / "out" / r["output"]) for r in rows)

    def test_manifest_reproducible(self, sources, tmp_path):
        spec = DatasetSpec(colors=((1, 0, 0), (0, 0, 1)), beams_per_image=2,
                           radius=4.0, seed=9)
        generate_dataset(spec, sources, str(tmp_path / "a"))
        generate_dataset(spec, sources, str(tmp_path / "b"))
        a = (tmp_path / "a" / "manifest.jsonl").read_bytes()
        b = (tmp_path / "b" / "manifest.jsonl").read_bytes()
        assert a == b

    def test_outputs_reproducible(self, sources, tmp_path):
        spec = DatasetSpec(colors=((1, 1, 0),), beams_per_image=2, radius=4.0, seed=3)
        rows_a = generate_dataset(spec, sources, str(tmp_path / "a"))
        generate_dataset(spec, sources, str(tmp_path / "b"))
        for row in rows_a:
            pa = (tmp_path / "a" / row["output"]).read_bytes()
            pb = (tmp_path / "b" / row["output"]).read_bytes()
            assert pa == pb

    def test_unreadable_source_recorded(self, sources, tmp_path):
        bad = sources + [("ghost", str(tmp_path / "missing.png"))]
        spec = DatasetSpec(colors=((1, 0, 0), (0, 1, 0)), beams_per_image=1,
                           radius=3.0)
        rows = generate_dataset(spec, bad, str(tmp_path / "out"))
        errors = [r for r in rows if "error" in r]
        assert len(rows) == 6 and len(errors) == 2
        assert all(r["id"].startswith("ghost") for r in errors)
        # count invariant: outputs = images * colors - errors
        outputs = [r for r in rows if "output" in r]
        assert len(outputs) == 3 * 2 - 2

    def test_workers_preserve_order_and_bytes(self, sources, tmp_path):
        spec = DatasetSpec(colors=((1, 0, 0), (0, 1, 0), (0, 0, 1)),
                           beams_per_image=2, radius=4.0, seed=5)
        generate_dataset(spec, sources, str(tmp_path / "serial"), workers=1)
        generate_dataset(spec, sources, str(tmp_path / "parallel"), workers=4)
        a = (tmp_path / "serial" / "manifest.jsonl").read_bytes()
        b = (tmp_path / "parallel" / "manifest.jsonl").read_bytes()
        assert a == b

    def test_beams_use_spec_parameters(self, sources, tmp_path):
        spec = DatasetSpec(colors=((0.5, 0.0, 1.0),), beams_per_image=4,
                           intensity=0.35, radius=7.0, seed=2)
        rows = generate_dataset(spec, sources, str(tmp_path / "out"))
        for row in rows:
            assert len(row["beams"]) == 4
            for b in row["beams"]:
                assert b["r"] == 7.0
                assert b["i"] == 0.35
                assert b["color"] == [0.5, 0.0, 1.0]

    def test_rendered_output_decodes(self, sources, tmp_path):
        spec = DatasetSpec(colors=((1, 0, 0),), beams_per_image=2, radius=5.0)
        rows = generate_dataset(spec, sources, str(tmp_path / "out"))
        img = decode_image((tmp_path / "out" / rows[0]["output"]).read_bytes())
        assert img.height == 24 and img.width == 24


class TestRecordSerialization:
    def test_roundtrip(self):
        r = rec("s1", 3, True, 5)
        assert record_from_dict(record_to_dict(r)) == r

    def test_manifest_io(self, tmp_path):
        from neonbeam.harness import write_manifest

        rows = [{"a": 1}, {"b": [1, 2]}]
        path = str(tmp_path / "m.jsonl")
        write_manifest(rows, path)
        assert read_manifest(path) == rows
