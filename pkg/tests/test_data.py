import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spellqueue.data import (
    SYNTHETIC_ICD_MAP,
    COHORT_WEIGHTS,
    UNMAPPED,
    SpellRecord,
    SyntheticConfig,
    engineer_features,
    generate_synthetic,
    load_spells,
    planted_mixed_blobs,
    cohort_profiles,
    write_spells,
)
from spellqueue.errors import ConfigError, SchemaError


def write_csv(path, header, rows):
    path.write_text("\n".join([",".join(header)] + [",".join(map(str, r)) for r in rows]) + "\n")
    return path


HEADER = ["patient_id", "spell_id", "admission_time", "discharge_time"]


class TestLoad:
    def test_single_row(self, tmp_path):
        res = load_spells(write_csv(tmp_path / "a.csv", HEADER, [["p1", "s1", 10.0, 12.5]]))
        assert len(res) == 1 and not res.rejected
        assert res.records[0].los == 2.5

    def test_small_negative_los_accepted(self, tmp_path):
        res = load_spells(write_csv(tmp_path / "a.csv", HEADER, [["p1", "s1", 10.0, 9.98]]))
        assert res.records[0].los == pytest.approx(-0.02, abs=1e-9)

    def test_missing_discharge_column(self, tmp_path):
        path = write_csv(tmp_path / "a.csv", HEADER[:3], [["p1", "s1", 10.0]])
        with pytest.raises(SchemaError, match="discharge"):
            load_spells(path)

    def test_row_level_rejections(self, tmp_path):
        rows = [
            ["p1", "s1", 1.0, 2.0],
            ["p1", "s2", "yesterday", 2.0],
            ["p2", "s3", 5.0, 3.5],
            ["p2", "s4", 0.5, 0.6],
        ]
        res = load_spells(write_csv(tmp_path / "a.csv", HEADER, rows))
        assert [r.spell_id for r in res.records] == ["s4", "s1"]
        assert [e.row_index for e in res.rejected] == [1, 2]
        assert "timestamp" in res.rejected[0].reason
        assert len(res.records) == len(rows) - len(res.rejected)

    def test_schema_mapping(self, tmp_path):
        path = write_csv(tmp_path / "a.csv", ["PID", "SPELL", "ADM", "DIS", "ltc_copd"], [["p1", "s1", 1.0, 3.0, 1]])
        res = load_spells(path, {"patient_id": "PID", "spell_id": "SPELL", "admission_time": "ADM", "discharge_time": "DIS"})
        rec = res.records[0]
        assert (rec.patient_id, rec.los, rec.ltc_flags) == ("p1", 2.0, {"copd": True})

    def test_mapped_column_missing(self, tmp_path):
        path = write_csv(tmp_path / "a.csv", HEADER, [["p1", "s1", 1.0, 3.0]])
        with pytest.raises(SchemaError, match="admission_time"):
            load_spells(path, {"admission_time": "ADM"})

    def test_bad_intervention_rejected(self, tmp_path):
        path = write_csv(tmp_path / "a.csv", HEADER + ["intervention"], [["p1", "s1", 1.0, 3.0, "Surgery"]])
        assert len(load_spells(path).rejected) == 1

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_spells(tmp_path / "nope.csv")

    def test_tab_delimited(self, tmp_path):
        path = tmp_path / "a.tsv"
        path.write_text("\t".join(HEADER) + "\np1\ts1\t1\t2\n")
        assert load_spells(path, delimiter="\t").records[0].los == 1.0


def test_round_trip_is_bit_identical(tmp_path, synthetic_spells):
    first = tmp_path / "a.csv"
    write_spells(synthetic_spells, first)
    loaded = load_spells(first)
    assert not loaded.rejected
    assert loaded.records == synthetic_spells
    second = tmp_path / "b.csv"
    write_spells(loaded.records, second)
    assert first.read_bytes() == second.read_bytes()


class TestEngineer:
    def test_twelve_month_window(self):
        spells = [SpellRecord("p", f"s{t}", float(t), float(t) + 1) for t in (0, 100, 400)]
        assert [s.copd_admissions_last_year for s in engineer_features(spells)] == [0, 1, 1]

    def test_window_excludes_exactly_365_days_back(self):
        spells = [SpellRecord("p", "a", 0.0, 1.0), SpellRecord("p", "b", 365.0, 366.0)]
        assert engineer_features(spells)[1].copd_admissions_last_year == 0

    def test_patients_are_separate(self):
        spells = [SpellRecord("p", "a", 0.0, 1.0), SpellRecord("q", "b", 10.0, 11.0)]
        assert [s.copd_admissions_last_year for s in engineer_features(spells)] == [0, 0]

    def test_unsorted_input_keeps_order(self):
        spells = [SpellRecord("p", f"s{t}", float(t), float(t) + 1) for t in (400, 0, 100)]
        assert [s.copd_admissions_last_year for s in engineer_features(spells)] == [1, 0, 1]

    def test_icd_categories(self):
        s = SpellRecord("p", "a", 0.0, 1.0, icd_codes=("A1", "A2", "B1"))
        out = engineer_features([s], {"A1": "X", "A2": "X", "B1": "Y"})[0]
        assert out.icd_category_counts == {"X": 2, "Y": 1}

    def test_unmapped_codes_are_kept(self):
        s = SpellRecord("p", "a", 0.0, 1.0, icd_codes=("A1", "Z9"))
        assert engineer_features([s], {"A1": "X"})[0].icd_category_counts == {"X": 1, UNMAPPED: 1}

    @given(st.lists(st.tuples(st.sampled_from("pqr"), st.floats(0, 2000)), max_size=30))
    @settings(max_examples=50)
    def test_idempotent(self, rows):
        spells = [SpellRecord(pid, f"s{i}", t, t + 1.0, icd_codes=("A1", "Q")) for i, (pid, t) in enumerate(rows)]
        once = engineer_features(spells, {"A1": "X"})
        assert engineer_features(once, {"A1": "X"}) == once

    @given(st.lists(st.floats(0, 3000), min_size=1, max_size=25))
    @settings(max_examples=50)
    def test_matches_brute_force_count(self, times):
        spells = [SpellRecord("p", f"s{i:03d}", t, t + 1.0) for i, t in enumerate(times)]
        out = engineer_features(spells)
        order = sorted(range(len(spells)), key=lambda i: (times[i], spells[i].spell_id))
        rank = {i: r for r, i in enumerate(order)}
        for i, s in enumerate(out):
            expected = sum(1 for j in range(len(times)) if rank[j] < rank[i] and times[i] - 365 < times[j] <= times[i])
            assert s.copd_admissions_last_year == expected


class TestSynthetic:
    def test_empty(self):
        assert generate_synthetic(SyntheticConfig(n_spells=0)) == []

    def test_deterministic(self):
        cfg = SyntheticConfig(n_spells=500, seed=42)
        assert generate_synthetic(cfg) == generate_synthetic(cfg)
        assert generate_synthetic(cfg) != generate_synthetic(SyntheticConfig(n_spells=500, seed=43))

    def test_default_weights_follow_cohort_table(self):
        assert sum(COHORT_WEIGHTS) == pytest.approx(1.0, abs=1e-12)
        assert [round(100 * w, 2) for w in COHORT_WEIGHTS] == [9.91, 19.27, 69.38, 1.44]
        assert SyntheticConfig().mean_los == (25.30, 6.46, 4.11, 75.36)

    def test_cluster_shares(self):
        spells = generate_synthetic(SyntheticConfig(n_spells=10_000, seed=3))
        shares = np.bincount([s.cluster_label for s in spells], minlength=4) / 10_000 * 100
        assert np.all(np.abs(shares - [9.91, 19.27, 69.39, 1.44]) <= 2.0)

    def test_records_are_valid_and_ordered(self, tmp_path, synthetic_spells):
        assert len(synthetic_spells) == 10_861
        times = [s.admission_time for s in synthetic_spells]
        assert times == sorted(times)
        assert min(s.los for s in synthetic_spells) >= 0.0
        write_spells(synthetic_spells, tmp_path / "s.csv")
        assert load_spells(tmp_path / "s.csv").rejected == []

    def test_icd_counts_attached(self, synthetic_spells):
        s = synthetic_spells[0]
        assert sum(s.icd_category_counts.values()) == len(s.icd_codes)
        assert set(s.icd_category_counts) <= set(SYNTHETIC_ICD_MAP.values())

    def test_mean_los_converges(self):
        cfg = SyntheticConfig(
            n_spells=40_000,
            cluster_weights=(0.25, 0.25, 0.25, 0.25),
            mean_interarrival=(1.0, 1.0, 1.0, 1.0),
            seed=9,
        )
        spells = generate_synthetic(cfg)
        labels = np.array([s.cluster_label for s in spells])
        los = np.array([s.los for s in spells])
        for i, target in enumerate(cfg.mean_los):
            assert (labels == i).sum() >= 9_500
            assert abs(los[labels == i].mean() / target - 1) < 0.05

    def test_arrivals_follow_configured_rate(self):
        cfg = SyntheticConfig(n_spells=20_000, seed=2)
        spells = generate_synthetic(cfg)
        for i in range(2):
            t = np.array([s.admission_time for s in spells if s.cluster_label == i])
            assert np.diff(t).mean() == pytest.approx(cfg.mean_interarrival[i], rel=0.05)

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"mean_los": (25.3, 0.0, 4.11, 75.36)},
            {"mean_interarrival": (1.0, -1.0, 1.0, 1.0)},
            {"cluster_weights": (0.5, 0.5, 0.5, -0.5)},
            {"cluster_weights": (0.5, 0.2, 0.2, 0.2)},
            {"n_spells": -1},
        ],
    )
    def test_bad_config(self, kwargs):
        with pytest.raises(ConfigError):
            SyntheticConfig(**kwargs)

    def test_config_json_round_trip(self, tmp_path):
        cfg = SyntheticConfig(n_spells=123, seed=77)
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(cfg.to_dict()))
        assert SyntheticConfig.from_json(path) == cfg

    def test_config_from_partial_dict(self):
        cfg = SyntheticConfig.from_dict({"n_spells": 10, "seed": 1})
        assert cfg.profiles == cohort_profiles()

    def test_unknown_config_key(self):
        with pytest.raises(ConfigError):
            SyntheticConfig.from_dict({"n_spell": 10})


def test_planted_blobs_shape_and_separation():
    num, cat, labels = planted_mixed_blobs(400, 4, separation=5.0, seed=1)
    assert num.shape == (400, 3) and cat.shape == (400, 3)
    centres = np.array([num[labels == j].mean(axis=0) for j in range(4)])
    gaps = [np.linalg.norm(centres[a] - centres[b]) for a in range(4) for b in range(a + 1, 4)]
    assert min(gaps) > 4.5
