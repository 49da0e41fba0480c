import numpy as np
import pytest

from trafficprim import store
from trafficprim.core import GaussianEmission, TimeSeriesBag
from trafficprim.errors import (
    CatalogLockedError,
    IntegrityError,
    NotFoundError,
    ParameterError,
)
from trafficprim.ingest import BehaviorDef, parse_topic_csv, resample_uniform
from trafficprim.store import Catalog, write_session


def make_bag(bag_id="trip", channels=("imu.ax", "imu.ay"), T=3, rate=10.0, seed=0):
    rng = np.random.default_rng(seed)
    data = rng.normal(size=(len(channels), T))
    return TimeSeriesBag(bag_id, channels, rate, 100.0, data)


@pytest.fixture
def catalog(tmp_path):
    return Catalog.create(tmp_path / "cat")


class TestInsertBag:
    def test_row_counts(self, catalog):
        bag = make_bag(T=3)
        store.insert_bag(catalog, bag, dataset="mcity")
        assert len(catalog.tables["Bag"]) == 1
        assert len(catalog.tables["Sensor"]) == 1  # both channels share one topic
        assert len(catalog.tables["Sample"]) == 6
        assert len(catalog.tables["Dataset"]) == 1

    def test_multi_topic_bag_groups_sensors(self, catalog):
        bag = make_bag(channels=("steering.angle", "steering.torque", "vehicle.speed"))
        store.insert_bag(catalog, bag, dataset="d")
        topics = sorted(r["topic_name"] for r in catalog.tables["Sensor"])
        assert topics == ["steering", "vehicle"]

    def test_reinsert_is_idempotent(self, catalog):
        bag = make_bag()
        store.insert_bag(catalog, bag, dataset="d")
        before = {name: len(rows) for name, rows in catalog.tables.items()}
        store.insert_bag(catalog, bag, dataset="d")
        after = {name: len(rows) for name, rows in catalog.tables.items()}
        assert before == after

    def test_conflicting_reinsert_raises(self, catalog):
        store.insert_bag(catalog, make_bag(seed=0), dataset="d")
        with pytest.raises(IntegrityError):
            store.insert_bag(catalog, make_bag(seed=1), dataset="d")

    def test_dataset_autocreated(self, catalog):
        store.insert_bag(catalog, make_bag(), dataset="fresh")
        assert catalog.find_one("Dataset", name="fresh") is not None

    def test_load_bag_roundtrip(self, catalog):
        bag = make_bag(T=7, seed=4)
        store.insert_bag(catalog, bag, dataset="d")
        loaded = store.load_bag(catalog, "trip")
        assert loaded.channels == bag.channels
        assert np.array_equal(loaded.data, bag.data)
        assert loaded.rate_hz == bag.rate_hz
        assert loaded.start_time == bag.start_time

    def test_load_missing_bag(self, catalog):
        with pytest.raises(NotFoundError):
            store.load_bag(catalog, "nope")


class TestPersistence:
    def test_save_and_reopen(self, tmp_path):
        root = tmp_path / "cat"
        catalog = Catalog.create(root)
        bag = make_bag(T=5, seed=2)
        store.insert_bag(catalog, bag, dataset="d")
        catalog.save()
        reopened = Catalog.open(root)
        assert reopened.tables == catalog.tables

    def test_open_non_catalog(self, tmp_path):
        with pytest.raises(NotFoundError):
            Catalog.open(tmp_path / "nowhere")

    def test_float_rendering_shortest_roundtrip(self, tmp_path):
        root = tmp_path / "cat"
        catalog = Catalog.create(root)
        value = 0.1 + 0.2  # 0.30000000000000004
        bag = TimeSeriesBag("b", ("t.v",), 10.0, 0.0, np.array([[value]]))
        store.insert_bag(catalog, bag, dataset="d")
        catalog.save()
        text = (root / "tables" / "Sample.csv").read_text()
        assert "0.30000000000000004" in text
        assert Catalog.open(root).find_one("Sample", channel="t.v")["value"] == value


class TestLocking:
    def test_write_session_excludes_second_writer(self, tmp_path):
        root = tmp_path / "cat"
        Catalog.create(root)
        with write_session(root):
            with pytest.raises(CatalogLockedError):
                with write_session(root):
                    pass

    def test_lock_released_after_session(self, tmp_path):
        root = tmp_path / "cat"
        Catalog.create(root)
        with write_session(root) as cat:
            store.insert_bag(cat, make_bag(), dataset="d")
        with write_session(root) as cat:
            assert len(cat.tables["Bag"]) == 1

    def test_failed_session_discards_changes(self, tmp_path):
        root = tmp_path / "cat"
        Catalog.create(root)
        with pytest.raises(RuntimeError):
            with write_session(root) as cat:
                store.insert_bag(cat, make_bag(), dataset="d")
                raise RuntimeError("boom")
        assert len(Catalog.open(root).tables["Bag"]) == 0
        assert not (root / "lock").exists()


class TestRecordPrimitives:
    def _setup(self, catalog, labels, T=None):
        T = T if T is not None else len(labels)
        bag = make_bag(T=T)
        store.insert_bag(catalog, bag, dataset="d")
        behavior_id = store.ensure_behavior(catalog, "drive", bag.channels, bag.rate_hz)
        emissions = {
            k: GaussianEmission(np.full(2, float(k)), np.eye(2))
            for k in set(np.asarray(labels).tolist())
        }
        return behavior_id, emissions

    def test_run_length_encoding(self, catalog):
        labels = np.array([1, 1, 2, 2, 2])
        behavior_id, emissions = self._setup(catalog, labels)
        store.record_primitives(catalog, "trip", behavior_id, labels, emissions)
        instances = catalog.tables["PrimitiveInstance"]
        assert len(instances) == 2
        assert (instances[0]["start_frame"], instances[0]["end_frame"]) == (0, 1)
        assert (instances[1]["start_frame"], instances[1]["end_frame"]) == (2, 4)
        assert len(catalog.tables["Primitive"]) == 2

    def test_single_run(self, catalog):
        labels = np.array([3, 3, 3, 3])
        behavior_id, emissions = self._setup(catalog, labels)
        store.record_primitives(catalog, "trip", behavior_id, labels, emissions)
        assert len(catalog.tables["PrimitiveInstance"]) == 1
        assert catalog.tables["Primitive"][0]["total_frames"] == 4
        assert catalog.tables["Primitive"][0]["occurrence_count"] == 1

    def test_length_mismatch(self, catalog):
        labels = np.array([1, 1])
        behavior_id, emissions = self._setup(catalog, labels, T=5)
        with pytest.raises(IntegrityError):
            store.record_primitives(catalog, "trip", behavior_id, labels, emissions)

    def test_rerecord_replaces(self, catalog):
        labels = np.array([1, 1, 2, 2, 2])
        behavior_id, emissions = self._setup(catalog, labels)
        store.record_primitives(catalog, "trip", behavior_id, labels, emissions)
        store.record_primitives(catalog, "trip", behavior_id, labels, emissions)
        assert len(catalog.tables["PrimitiveInstance"]) == 2
        assert len(catalog.tables["Primitive"]) == 2
        assert store.check_integrity(catalog) == []

    def test_labels_roundtrip_from_instances(self, catalog):
        labels = np.array([1, 2, 2, 1, 1])
        behavior_id, emissions = self._setup(catalog, labels)
        store.record_primitives(catalog, "trip", behavior_id, labels, emissions)
        per_frame = store.bag_primitive_labels(catalog, "trip", behavior_id)
        runs_expected = [(0, 0), (1, 2), (3, 4)]
        changes = np.nonzero(np.diff(per_frame))[0]
        assert changes.tolist() == [0, 2]
        assert len(np.unique(per_frame)) == 2

    def test_emission_stats_stored(self, catalog):
        labels = np.array([1, 1, 1])
        behavior_id, emissions = self._setup(catalog, labels)
        store.record_primitives(catalog, "trip", behavior_id, labels, emissions)
        row = catalog.tables["Primitive"][0]
        em = store.primitive_emission(row)
        assert np.array_equal(em.mean, emissions[1].mean)
        assert np.array_equal(em.cov, emissions[1].cov)


class TestScenarios:
    def _catalog_with_windows(self, catalog):
        bag = make_bag(T=6)
        store.insert_bag(catalog, bag, dataset="d")
        behavior_id = store.ensure_behavior(catalog, "drive", bag.channels, bag.rate_hz)
        sid = store.ensure_scenario(catalog, behavior_id, (7, 9))
        store.set_scenario_name(catalog, sid, "turning")
        store.replace_scenario_instances(catalog, "trip", behavior_id, [(sid, 0, 2), (sid, 3, 5)])
        return behavior_id, sid

    def test_query_by_name(self, catalog):
        self._catalog_with_windows(catalog)
        windows = store.query_by_scenario(catalog, "turning", ["imu.ax"])
        assert len(windows) == 2
        assert windows[0].start_frame == 0
        assert windows[1].start_frame == 3
        assert windows[0].channels["imu.ax"].shape == (3,)

    def test_query_by_label_sequence(self, catalog):
        self._catalog_with_windows(catalog)
        windows = store.query_by_scenario(catalog, "7,9", ["imu.ay"])
        assert len(windows) == 2

    def test_query_unknown_scenario(self, catalog):
        self._catalog_with_windows(catalog)
        with pytest.raises(NotFoundError):
            store.query_by_scenario(catalog, "parking", ["imu.ax"])

    def test_query_unknown_channel(self, catalog):
        self._catalog_with_windows(catalog)
        with pytest.raises(ParameterError):
            store.query_by_scenario(catalog, "turning", ["imu.nope"])

    def test_query_scenario_with_no_instances(self, catalog):
        behavior_id, _ = self._catalog_with_windows(catalog)
        empty = store.ensure_scenario(catalog, behavior_id, (1, 2, 3))
        store.set_scenario_name(catalog, empty, "rare")
        assert store.query_by_scenario(catalog, "rare", ["imu.ax"]) == []

    def test_two_bags_ordered_by_bag_id(self, catalog):
        behavior_id, sid = self._catalog_with_windows(catalog)
        second = make_bag(bag_id="aaa", T=6, seed=3)
        store.insert_bag(catalog, second, dataset="d")
        store.replace_scenario_instances(catalog, "aaa", behavior_id, [(sid, 1, 4)])
        windows = store.query_by_scenario(catalog, "turning", ["imu.ax"])
        assert [w.bag_id for w in windows] == ["aaa", "trip", "trip"]

    def test_ensure_scenario_reuses_existing(self, catalog):
        behavior_id, sid = self._catalog_with_windows(catalog)
        again = store.ensure_scenario(catalog, behavior_id, (7, 9))
        assert again == sid
        assert len(catalog.find_all("Scenario", behavior_id=behavior_id)) == 1

    def test_duplicate_name_rejected(self, catalog):
        behavior_id, _ = self._catalog_with_windows(catalog)
        other = store.ensure_scenario(catalog, behavior_id, (1,))
        with pytest.raises(IntegrityError):
            store.set_scenario_name(catalog, other, "turning")


class TestExport:
    def test_export_reingest_identical_samples(self, catalog, tmp_path):
        behavior = BehaviorDef(
            name="drive", required_channels=("imu.ax", "imu.ay"), target_rate_hz=10.0
        )
        bag = make_bag(T=40, seed=9)
        store.insert_bag(catalog, bag, dataset="d")
        out = store.export_bag(catalog, "trip", tmp_path / "export")
        topics = [
            parse_topic_csv(tmp_path / "export" / t["file"], topic_name=t["topic_name"])
            for t in __import__("json").loads(out["manifest"].read_text())["topics"]
        ]
        again = resample_uniform(topics, behavior, bag_id="trip")
        fresh = Catalog.create(tmp_path / "cat2")
        store.insert_bag(fresh, again, dataset="d")
        catalog.save()
        fresh.save()
        original = (catalog.root / "tables" / "Sample.csv").read_text()
        rebuilt = (fresh.root / "tables" / "Sample.csv").read_text()
        assert original == rebuilt

    def test_export_preserves_frame_order(self, catalog, tmp_path):
        bag = make_bag(T=5, seed=1)
        store.insert_bag(catalog, bag, dataset="d")
        store.export_bag(catalog, "trip", tmp_path / "e")
        lines = (tmp_path / "e" / "imu.csv").read_text().splitlines()
        times = [float(line.split(",")[0]) for line in lines[1:]]
        assert times == sorted(times)
        assert len(times) == 5

    def test_export_empty_channel_list_rejected(self, catalog, tmp_path):
        store.insert_bag(catalog, make_bag(), dataset="d")
        with pytest.raises(ParameterError):
            store.export_bag(catalog, "trip", tmp_path / "e", channels=[])

    def test_export_unknown_bag(self, catalog, tmp_path):
        with pytest.raises(NotFoundError):
            store.export_bag(catalog, "ghost", tmp_path / "e")


class TestIntegrity:
    def test_clean_catalog_has_no_violations(self, catalog):
        bag = make_bag(T=4)
        store.insert_bag(catalog, bag, dataset="d")
        behavior_id = store.ensure_behavior(catalog, "b", bag.channels, bag.rate_hz)
        labels = np.array([1, 1, 2, 2])
        emissions = {k: GaussianEmission(np.zeros(2), np.eye(2)) for k in (1, 2)}
        store.record_primitives(catalog, "trip", behavior_id, labels, emissions)
        sid = store.ensure_scenario(catalog, behavior_id, (1, 2))
        store.replace_scenario_instances(catalog, "trip", behavior_id, [(sid, 0, 3)])
        assert store.check_integrity(catalog) == []

    def test_detects_dangling_reference(self, catalog):
        catalog.tables["Sensor"].append(
            {"sensor_id": 1, "bag_id": "ghost", "topic_name": "t"}
        )
        assert store.check_integrity(catalog) != []
