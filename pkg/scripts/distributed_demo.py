#!/usr/bin/env python3
"""Distributed round demo: coordinator and participants as real processes.

Generates datasets, starts the coordinator on loopback, runs every
participant as a separate `fedcotrain join` process, then reruns the same
config in-process and shows that the wire path reproduced it exactly.
"""

import argparse
import json
import socket
import subprocess
import sys
import tempfile
import time
from pathlib import Path

import fedcotrain as fc
from fedcotrain.cli import canonical_config, load_run_config, parse_run_config


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--participants", type=int, default=3)
    parser.add_argument("--seed", type=int, default=6)
    args = parser.parse_args()

    workdir = Path(tempfile.mkdtemp(prefix="fedcotrain_demo_"))
    config = fc.default_config(n_participants=args.participants, mode="noniid",
                               master_seed=args.seed, unlabeled_size=300)
    rc = parse_run_config(canonical_config_from(config))
    config_path = workdir / "config.json"
    config_path.write_text(json.dumps(canonical_config(rc), indent=2), encoding="utf-8")

    cli = [sys.executable, "-m", "fedcotrain.cli"]
    data_dir = workdir / "data"
    subprocess.run(cli + ["generate-data", "--config", str(config_path),
                          "--out", str(data_dir)], check=True)

    probe = socket.create_server(("127.0.0.1", 0))
    port = probe.getsockname()[1]
    probe.close()
    server = subprocess.Popen(cli + ["serve", "--config", str(config_path),
                                     "--data", str(data_dir),
                                     "--bind", f"127.0.0.1:{port}",
                                     "--timeout", "60",
                                     "--out", str(workdir / "served")])
    time.sleep(1.0)
    clients = [subprocess.Popen(cli + ["join", "--config", str(config_path),
                                       "--data", str(data_dir),
                                       "--participant", str(i),
                                       "--addr", f"127.0.0.1:{port}",
                                       "--out", str(workdir / "joined")])
               for i in range(args.participants)]
    for proc in clients:
        proc.wait(timeout=120)
    server.wait(timeout=120)

    in_process = fc.run_round(load_run_config(config_path).federation)
    matches = 0
    for i, p in enumerate(in_process.report.participants):
        fragment = json.loads((workdir / "joined"
                               / f"participant_{i:02d}_report.jsonl").read_text())
        same = (fragment["local_accuracy"] == p.local_accuracy
                and fragment["federated_accuracy"] == p.federated_accuracy)
        matches += same
        print(f"participant {i}: wire fed accuracy "
              f"{fragment['federated_accuracy']:.4f} "
              f"{'== in-process' if same else '!= in-process'}")
    print(f"\n{matches}/{args.participants} participants identical; "
          f"artifacts left in {workdir}")


def canonical_config_from(config):
    """Serialize a FederationConfig through the CLI's canonical document form."""
    from fedcotrain.cli import RunConfig
    rc = RunConfig(config, "in-process", None, None, None,
                   {"bind": "127.0.0.1:0", "timeout_s": 60.0,
                    "max_line_bytes": 64 * 2 ** 20})
    return canonical_config(rc)


if __name__ == "__main__":
    main()
