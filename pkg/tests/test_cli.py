import json

import pytest

from trafficprim.cli import main
from trafficprim.store import _acquire_lock


@pytest.fixture
def gibbs_config(tmp_path):
    path = tmp_path / "gibbs.json"
    path.write_text(json.dumps({
        "iterations": 60, "burn_in": 20, "seed": 0,
        "hyper": {"truncation_L": 6},
    }))
    return str(path)


@pytest.fixture
def unify_config(tmp_path):
    path = tmp_path / "unify.json"
    path.write_text(json.dumps({
        "min_duration_s": 0.3, "min_occurrences": 1,
        "merge_threshold": 1.0, "window_runs": 1,
    }))
    return str(path)


def run_synth(tmp_path, capsys, seed=4, frames=400):
    out = tmp_path / "bagdir"
    code = main([
        "synth", "--states", "3", "--dims", "2", "--frames", str(frames),
        "--seed", str(seed), "--out", str(out),
    ])
    assert code == 0
    manifest = capsys.readouterr().out.splitlines()[0]
    return manifest


def run_ingest(tmp_path, capsys, manifest):
    code = main([
        "ingest", "--manifest", manifest,
        "--catalog", str(tmp_path / "cat"), "--behavior", "acting",
    ])
    out = capsys.readouterr().out
    assert code == 0
    return out.strip()


class TestExitCodes:
    def test_exit_code_table(self):
        from trafficprim.errors import EXIT_CODE_BY_CLASS

        assert EXIT_CODE_BY_CLASS["usage"] == 2
        assert EXIT_CODE_BY_CLASS["parameter"] == 2
        assert EXIT_CODE_BY_CLASS["parse"] == 3
        assert EXIT_CODE_BY_CLASS["range"] == 3
        assert EXIT_CODE_BY_CLASS["gap"] == 3
        assert EXIT_CODE_BY_CLASS["numeric"] == 4
        assert EXIT_CODE_BY_CLASS["integrity"] == 5
        assert EXIT_CODE_BY_CLASS["not_found"] == 5
        assert EXIT_CODE_BY_CLASS["locked"] == 5

    def test_usage_error_is_2(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["ingest", "--manifest", "x"])  # missing required flags
        assert exc.value.code == 2
        assert capsys.readouterr().err.startswith("usage:")

    def test_parse_error_is_3(self, tmp_path, capsys):
        bad = tmp_path / "t.csv"
        bad.write_text("time,v\n0,1\n")
        manifest = tmp_path / "m.json"
        manifest.write_text(json.dumps({
            "bag_id": "x", "topics": [{"topic_name": "t", "file": "t.csv"}],
            "start_time": 0.0,
        }))
        with pytest.raises(SystemExit) as exc:
            main(["ingest", "--manifest", str(manifest),
                  "--catalog", str(tmp_path / "cat"), "--behavior", "b"])
        assert exc.value.code == 3
        assert capsys.readouterr().err.startswith("parse:")

    def test_unknown_bag_is_5(self, tmp_path, capsys, gibbs_config):
        manifest = run_synth(tmp_path, capsys)
        run_ingest(tmp_path, capsys, manifest)
        with pytest.raises(SystemExit) as exc:
            main(["segment", "--catalog", str(tmp_path / "cat"), "--bag", "ghost",
                  "--behavior", "acting", "--config", gibbs_config, "--seed", "1"])
        assert exc.value.code == 5
        assert capsys.readouterr().err.startswith("not_found:")

    def test_locked_catalog_is_5(self, tmp_path, capsys, gibbs_config):
        manifest = run_synth(tmp_path, capsys)
        bag_id = run_ingest(tmp_path, capsys, manifest)
        lock = _acquire_lock(tmp_path / "cat")
        try:
            with pytest.raises(SystemExit) as exc:
                main(["segment", "--catalog", str(tmp_path / "cat"), "--bag", bag_id,
                      "--behavior", "acting", "--config", gibbs_config, "--seed", "1"])
        finally:
            lock.unlink()
        assert exc.value.code == 5
        assert capsys.readouterr().err.startswith("locked:")


class TestIngestCommand:
    def test_prints_bag_id(self, tmp_path, capsys):
        manifest = run_synth(tmp_path, capsys, seed=7)
        bag_id = run_ingest(tmp_path, capsys, manifest)
        assert bag_id == "maneuver-7"

    def test_reingest_identical_is_exit_zero(self, tmp_path, capsys):
        manifest = run_synth(tmp_path, capsys)
        first = run_ingest(tmp_path, capsys, manifest)
        second = run_ingest(tmp_path, capsys, manifest)
        assert first == second


class TestSegmentCommand:
    def test_reports_states_and_frames(self, tmp_path, capsys, gibbs_config):
        manifest = run_synth(tmp_path, capsys)
        bag_id = run_ingest(tmp_path, capsys, manifest)
        code = main(["segment", "--catalog", str(tmp_path / "cat"), "--bag", bag_id,
                     "--behavior", "acting", "--config", gibbs_config, "--seed", "1"])
        assert code == 0
        out = capsys.readouterr().out.splitlines()
        assert out[0].startswith("used_states ")
        assert any(line.startswith("primitive ") for line in out)
        assert out[-1].startswith("segmentation ")

    def test_same_seed_is_byte_identical(self, tmp_path, capsys, gibbs_config):
        manifest = run_synth(tmp_path, capsys)
        bag_id = run_ingest(tmp_path, capsys, manifest)
        args = ["segment", "--catalog", str(tmp_path / "cat"), "--bag", bag_id,
                "--behavior", "acting", "--config", gibbs_config, "--seed", "3"]
        assert main(args) == 0
        csv_path = capsys.readouterr().out.splitlines()[-1].split(" ", 1)[1]
        first = open(csv_path, "rb").read()
        assert main(args) == 0
        capsys.readouterr()
        second = open(csv_path, "rb").read()
        assert first == second


class TestFullPipeline:
    def test_unify_then_query(self, tmp_path, capsys, gibbs_config, unify_config):
        manifest = run_synth(tmp_path, capsys)
        bag_id = run_ingest(tmp_path, capsys, manifest)
        assert main(["segment", "--catalog", str(tmp_path / "cat"), "--bag", bag_id,
                     "--behavior", "acting", "--config", gibbs_config,
                     "--seed", "2"]) == 0
        capsys.readouterr()
        assert main(["unify", "--catalog", str(tmp_path / "cat"),
                     "--behavior", "acting", "--config", unify_config]) == 0
        out = capsys.readouterr().out
        assert "scenario_instances" in out

        from trafficprim.store import Catalog

        catalog = Catalog.open(tmp_path / "cat")
        scenario = catalog.tables["Scenario"][0]["label_sequence"]
        assert main(["query", "--catalog", str(tmp_path / "cat"),
                     "--scenario", scenario, "--channels", "synth.c0,synth.c1",
                     "--out", str(tmp_path / "hits")]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0].startswith("count ")
        assert int(lines[0].split()[1]) >= 1

    def test_query_empty_scenario_prints_zero(self, tmp_path, capsys, gibbs_config,
                                              unify_config):
        manifest = run_synth(tmp_path, capsys)
        bag_id = run_ingest(tmp_path, capsys, manifest)
        assert main(["segment", "--catalog", str(tmp_path / "cat"), "--bag", bag_id,
                     "--behavior", "acting", "--config", gibbs_config,
                     "--seed", "2"]) == 0
        assert main(["unify", "--catalog", str(tmp_path / "cat"),
                     "--behavior", "acting", "--config", unify_config]) == 0
        capsys.readouterr()

        from trafficprim.store import Catalog, ensure_scenario, set_scenario_name, write_session

        with write_session(tmp_path / "cat") as catalog:
            behavior_id = catalog.tables["Behavior"][0]["behavior_id"]
            sid = ensure_scenario(catalog, behavior_id, (404, 405))
            set_scenario_name(catalog, sid, "never-seen")
        assert main(["query", "--catalog", str(tmp_path / "cat"),
                     "--scenario", "never-seen", "--channels", "synth.c0",
                     "--out", str(tmp_path / "hits2")]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0] == "count 0"
        assert not (tmp_path / "hits2").exists() or not any(
            (tmp_path / "hits2").iterdir()
        )


class TestSynthCommand:
    def test_fixed_seed_reproducible(self, tmp_path, capsys):
        m1 = run_synth(tmp_path / "a", capsys, seed=11)
        m2 = run_synth(tmp_path / "b", capsys, seed=11)
        assert open(m1).read().replace(str(tmp_path / "a"), "X") == \
            open(m2).read().replace(str(tmp_path / "b"), "X")
