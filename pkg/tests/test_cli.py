import json
import socket
import threading

import pytest

from fedcotrain.cli import (
    EXIT_CONFIG,
    EXIT_OK,
    EXIT_PROTOCOL,
    EXIT_RUNTIME,
    canonical_config,
    load_run_config,
    main,
    parse_run_config,
)
from fedcotrain.orchestrator import build_round_data


def base_config(n=3, m=60, seed=2, mode="noniid"):
    return {
        "alpha": 0.3,
        "master_seed": seed,
        "taxonomy": {"n_superclasses": 5, "subclasses_per_superclass": 3,
                      "feature_dim": 2, "instances_per_subclass": 120,
                      "superclass_spread": 2.8, "subclass_spread": 2.2,
                      "instance_noise": 0.3},
        "partition": {"n_participants": n, "superclasses_per_participant": [2, 3],
                       "instances_per_superclass": 8, "mode": mode},
        "unlabeled": {"size": m, "strategy": "uniform_random", "margin": 0.1},
        "test_instances_per_superclass": 20,
        "participants": [
            {"learner": "knn", "config": {"k": 3}},
            {"learner": "knn", "config": {"k": 5}},
            {"learner": "mlp", "config": {"learning_rate": 0.5, "epochs": 150,
                                           "hidden_width": 32}},
        ][:n],
    }


@pytest.fixture
def config_path(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(base_config(), indent=2), encoding="utf-8")
    return path


def free_port():
    sock = socket.create_server(("127.0.0.1", 0))
    port = sock.getsockname()[1]
    sock.close()
    return port


class TestConfigParsing:
    def test_round_trip_through_canonical_form(self):
        rc = parse_run_config(base_config())
        canon = canonical_config(rc)
        rc2 = parse_run_config(canon)
        assert canonical_config(rc2) == canon
        assert rc2.federation == rc.federation

    def test_unknown_key_names_path(self):
        doc = base_config()
        doc["taxonomy"]["bogus"] = 1
        with pytest.raises(Exception, match="taxonomy: unknown key 'bogus'"):
            parse_run_config(doc)

    def test_unknown_top_level_key(self):
        doc = base_config()
        doc["extra"] = True
        with pytest.raises(Exception, match="unknown key 'extra'"):
            parse_run_config(doc)

    def test_missing_learner_names_participant(self):
        doc = base_config()
        del doc["participants"][1]["learner"]
        with pytest.raises(Exception, match="participant 1"):
            parse_run_config(doc)

    def test_unknown_learner_kind(self):
        doc = base_config()
        doc["participants"][0]["learner"] = "transformer"
        with pytest.raises(Exception, match="unknown learner 'transformer'"):
            parse_run_config(doc)

    def test_bad_mode_rejected(self):
        doc = base_config()
        doc["mode"] = "cluster"
        with pytest.raises(Exception, match="mode"):
            parse_run_config(doc)

    def test_weights_parsed(self):
        doc = base_config()
        doc["weights"] = [1.0, 2.0, 1.0]
        rc = parse_run_config(doc)
        assert rc.federation.weights.values == (1.0, 2.0, 1.0)

    def test_seed_override(self, config_path):
        rc = load_run_config(config_path, seed_override=99)
        assert rc.federation.master_seed == 99


class TestExitCodes:
    def test_config_error_exits_2(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        doc = base_config()
        doc["partition"]["surprise"] = 1
        path.write_text(json.dumps(doc), encoding="utf-8")
        code = main(["run", "--config", str(path), "--out", str(tmp_path / "o")])
        assert code == EXIT_CONFIG
        assert "partition: unknown key 'surprise'" in capsys.readouterr().err

    def test_invalid_json_exits_2(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text("{nope", encoding="utf-8")
        code = main(["run", "--config", str(path), "--out", str(tmp_path / "o")])
        assert code == EXIT_CONFIG
        assert "invalid JSON" in capsys.readouterr().err

    def test_runtime_error_exits_3(self, tmp_path, capsys):
        doc = base_config()
        doc["taxonomy"]["instances_per_subclass"] = 4
        doc["partition"]["instances_per_superclass"] = 100
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(doc), encoding="utf-8")
        code = main(["run", "--config", str(path), "--out", str(tmp_path / "o")])
        assert code == EXIT_RUNTIME
        assert "pool exhausted" in capsys.readouterr().err


class TestGenerateData:
    def test_manifest_and_reruns_identical(self, config_path, tmp_path, capsys):
        out1 = tmp_path / "d1"
        out2 = tmp_path / "d2"
        assert main(["generate-data", "--config", str(config_path),
                     "--out", str(out1)]) == EXIT_OK
        assert main(["generate-data", "--config", str(config_path),
                     "--out", str(out2)]) == EXIT_OK
        m1 = json.loads((out1 / "manifest.json").read_text())
        m2 = json.loads((out2 / "manifest.json").read_text())
        assert m1 == m2
        assert len(m1["participants"]) == 3
        for entry in m1["participants"]:
            assert (out1 / entry["train"]["file"]).exists()
            assert (out1 / entry["test"]["file"]).exists()
        assert (out1 / m1["unlabeled"]["file"]).exists()
        assert (out1 / m1["pool"]["file"]).exists()

    def test_noniid_manifest_records_owned_subclasses(self, config_path, tmp_path):
        out = tmp_path / "data"
        assert main(["generate-data", "--config", str(config_path),
                     "--out", str(out)]) == EXIT_OK
        manifest = json.loads((out / "manifest.json").read_text())
        rc = load_run_config(config_path)
        data = build_round_data(rc.federation)
        for entry, shard in zip(manifest["participants"], data.shards):
            recorded = {int(k): tuple(v) for k, v in entry["owned_subclasses"].items()}
            assert recorded == shard.owned_subclasses
            assert entry["label_space"] == [int(c) for c in shard.label_space]

    def test_seed_override_changes_hashes(self, config_path, tmp_path):
        out1 = tmp_path / "d1"
        out2 = tmp_path / "d2"
        main(["generate-data", "--config", str(config_path), "--out", str(out1)])
        main(["generate-data", "--config", str(config_path), "--out", str(out2),
              "--seed", "77"])
        m1 = json.loads((out1 / "manifest.json").read_text())
        m2 = json.loads((out2 / "manifest.json").read_text())
        assert m1["unlabeled"]["sha256"] != m2["unlabeled"]["sha256"]


class TestRun:
    def test_run_twice_byte_identical_reports(self, config_path, tmp_path):
        out1 = tmp_path / "r1"
        out2 = tmp_path / "r2"
        assert main(["run", "--config", str(config_path), "--out", str(out1)]) == EXIT_OK
        assert main(["run", "--config", str(config_path), "--out", str(out2)]) == EXIT_OK
        assert (out1 / "report.jsonl").read_bytes() == (out2 / "report.jsonl").read_bytes()
        assert (out1 / "report.txt").read_bytes() == (out2 / "report.txt").read_bytes()

    def test_records_format_prints_jsonl(self, config_path, tmp_path, capsys):
        main(["run", "--config", str(config_path), "--out", str(tmp_path / "o"),
              "--format", "records"])
        lines = [json.loads(l) for l in capsys.readouterr().out.strip().splitlines()]
        assert any(r["record"] == "summary" for r in lines)

    def test_dump_artifacts_contains_only_ids_and_indices(self, config_path, tmp_path):
        out = tmp_path / "o"
        main(["run", "--config", str(config_path), "--out", str(out),
              "--dump-artifacts"])
        records = [json.loads(l) for l in
                   (out / "artifacts.jsonl").read_text().splitlines()]
        kinds = {r["record"] for r in records}
        assert kinds == {"predictions", "pseudolabel_set", "bundle"}

        def only_ints(obj):
            if isinstance(obj, bool):
                return False
            if isinstance(obj, (int, str)):
                return True
            if isinstance(obj, list):
                return all(only_ints(v) for v in obj)
            if isinstance(obj, dict):
                return all(only_ints(v) for v in obj.values())
            return False

        for record in records:
            assert only_ints(record)

    def test_env_var_out_root(self, config_path, tmp_path, monkeypatch):
        target = tmp_path / "from_env"
        monkeypatch.setenv("FEDCOTRAIN_OUT", str(target))
        assert main(["run", "--config", str(config_path)]) == EXIT_OK
        assert (target / "report.jsonl").exists()


class TestSweeps:
    def test_alpha_sweep_counts_non_increasing(self, config_path, tmp_path, capsys):
        out = tmp_path / "s"
        code = main(["sweep-alpha", "--config", str(config_path), "--out", str(out),
                     "--alphas", "0,0.25,0.5,0.75,1"])
        assert code == EXIT_OK
        records = [json.loads(l) for l in
                   (out / "sweep_alpha.jsonl").read_text().splitlines()]
        assert len(records) == 5
        totals = [r["total_pseudolabels"] for r in records]
        assert totals == sorted(totals, reverse=True)
        assert totals[-1] == 0

    def test_size_sweep_rows(self, config_path, tmp_path):
        out = tmp_path / "s"
        code = main(["sweep-size", "--config", str(config_path), "--out", str(out),
                     "--sizes", "20,60"])
        assert code == EXIT_OK
        records = [json.loads(l) for l in
                   (out / "sweep_size.jsonl").read_text().splitlines()]
        assert [r["unlabeled_size"] for r in records] == [20, 60]

    def test_sweep_without_values_is_config_error(self, config_path, tmp_path, capsys):
        code = main(["sweep-alpha", "--config", str(config_path),
                     "--out", str(tmp_path / "s")])
        assert code == EXIT_CONFIG


class TestAnalyze:
    def test_analysis_written_next_to_report(self, config_path, tmp_path):
        out = tmp_path / "a"
        assert main(["analyze", "--config", str(config_path),
                     "--out", str(out)]) == EXIT_OK
        assert (out / "report.jsonl").exists()
        records = [json.loads(l) for l in
                   (out / "analysis.jsonl").read_text().splitlines()]
        assert sum(1 for r in records if r["record"] == "analysis") == 3
        assert any(r["record"] == "pairwise_disagreement" for r in records)


class TestServeJoin:
    def test_round_trip_over_loopback(self, config_path, tmp_path, capsys):
        data_dir = tmp_path / "data"
        main(["generate-data", "--config", str(config_path), "--out", str(data_dir)])
        port = free_port()
        serve_code = {}

        def serve():
            serve_code["value"] = main([
                "serve", "--config", str(config_path), "--data", str(data_dir),
                "--bind", f"127.0.0.1:{port}", "--timeout", "30",
                "--out", str(tmp_path / "served")])

        server = threading.Thread(target=serve, daemon=True)
        server.start()
        import time
        time.sleep(0.4)
        join_codes = {}

        def client(i):
            join_codes[i] = main([
                "join", "--config", str(config_path), "--data", str(data_dir),
                "--participant", str(i), "--addr", f"127.0.0.1:{port}",
                "--out", str(tmp_path / "joined")])

        clients = [threading.Thread(target=client, args=(i,)) for i in range(3)]
        for t in clients:
            t.start()
        for t in clients:
            t.join(timeout=60)
        server.join(timeout=60)
        assert serve_code["value"] == EXIT_OK
        assert all(code == EXIT_OK for code in join_codes.values())
        for i in range(3):
            frag = tmp_path / "joined" / f"participant_{i:02d}_report.jsonl"
            record = json.loads(frag.read_text())
            assert record["participant"] == i

    def test_join_with_wrong_hash_exits_4(self, config_path, tmp_path, capsys):
        data_dir = tmp_path / "data"
        main(["generate-data", "--config", str(config_path), "--out", str(data_dir)])
        tampered = tmp_path / "tampered"
        tampered.mkdir()
        for item in data_dir.iterdir():
            (tampered / item.name).write_bytes(item.read_bytes())
        unlabeled = tampered / "unlabeled.csv"
        text = unlabeled.read_text().splitlines()
        text[1] = text[1].replace(text[1][0], "9", 1)
        unlabeled.write_text("\n".join(text) + "\n")

        port = free_port()
        serve_code = {}

        def serve():
            serve_code["value"] = main([
                "serve", "--config", str(config_path), "--data", str(data_dir),
                "--bind", f"127.0.0.1:{port}", "--timeout", "5"])

        server = threading.Thread(target=serve, daemon=True)
        server.start()
        import time
        time.sleep(0.4)
        code = main(["join", "--config", str(config_path), "--data", str(tampered),
                     "--participant", "0", "--addr", f"127.0.0.1:{port}"])
        assert code == EXIT_PROTOCOL
        assert "hash mismatch" in capsys.readouterr().err
        server.join(timeout=30)
        assert serve_code["value"] == EXIT_PROTOCOL

    def test_serve_timeout_without_clients_exits_4(self, config_path, tmp_path):
        data_dir = tmp_path / "data"
        main(["generate-data", "--config", str(config_path), "--out", str(data_dir)])
        code = main(["serve", "--config", str(config_path), "--data", str(data_dir),
                     "--bind", "127.0.0.1:0", "--timeout", "1"])
        assert code == EXIT_PROTOCOL
