"""Command-line entry point: config files, experiment runs, sweeps, serving.

Configs are JSON documents validated strictly: unknown keys are rejected with
the offending field path. All outputs (reports, manifests, sweep tables) are
byte-deterministic functions of the config, so reruns with the same master
seed produce identical files.

Exit codes: 0 success, 2 config error, 3 runtime error, 4 protocol error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

from .aggregation import AggregationError, CredibilityWeights
from .domain import (
    DomainError,
    LabelSpace,
    PartitionSpec,
    TaxonomySpec,
    load_csv,
    save_csv,
)
from .learners import LearnerError, TrainConfig, LEARNER_KINDS
from .netproto import (
    Coordinator,
    CoordinatorSettings,
    DEFAULT_CLIENT_TIMEOUT,
    DEFAULT_COORDINATOR_TIMEOUT,
    DEFAULT_MAX_LINE,
    ProtocolError,
    file_sha256,
    join as netproto_join,
)
from .orchestrator import (
    FederationConfig,
    ParticipantSpec,
    RoundError,
    UnlabeledSpec,
    build_round_data,
    participant_train_config,
    run_round,
    sweep_alpha,
    sweep_unlabeled_size,
)
from .seeding import derive_seed
from .theory import TheoryError, analyze_round

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_PROTOCOL = 4

RUN_MODES = ("in-process", "serve", "join")


class ConfigError(ValueError):
    """Schema violation in a run-config document."""


def _expect_mapping(doc, path):
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: expected a mapping")


def _check_keys(doc, path, required, optional=()):
    _expect_mapping(doc, path)
    allowed = set(required) | set(optional)
    for key in doc:
        if key not in allowed:
            raise ConfigError(f"{path}: unknown key {key!r}")
    for key in required:
        if key not in doc:
            raise ConfigError(f"{path}: missing required key {key!r}")


def _get_number(doc, key, path, kind=float):
    value = doc[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path}.{key}: expected a number")
    if kind is int and int(value) != value:
        raise ConfigError(f"{path}.{key}: expected an integer")
    return kind(value)


def _get_range(doc, key, path):
    value = doc[key]
    if (not isinstance(value, list) or len(value) != 2
            or any(isinstance(v, bool) or not isinstance(v, int) for v in value)):
        raise ConfigError(f"{path}.{key}: expected a two-integer list [lo, hi]")
    return (value[0], value[1])


def _parse_taxonomy(doc):
    path = "taxonomy"
    _check_keys(doc, path,
                required=("n_superclasses", "subclasses_per_superclass", "feature_dim",
                          "instances_per_subclass"),
                optional=("superclass_spread", "subclass_spread", "instance_noise"))
    kwargs = {k: _get_number(doc, k, path, int)
              for k in ("n_superclasses", "subclasses_per_superclass", "feature_dim",
                        "instances_per_subclass")}
    for k in ("superclass_spread", "subclass_spread", "instance_noise"):
        if k in doc:
            kwargs[k] = _get_number(doc, k, path, float)
    try:
        return TaxonomySpec(**kwargs)
    except DomainError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _parse_partition(doc):
    path = "partition"
    _check_keys(doc, path,
                required=("n_participants", "superclasses_per_participant",
                          "instances_per_superclass", "mode"),
                optional=("subclasses_per_superclass_owned",))
    kwargs = dict(
        n_participants=_get_number(doc, "n_participants", path, int),
        superclasses_per_participant=_get_range(doc, "superclasses_per_participant", path),
        instances_per_superclass=_get_number(doc, "instances_per_superclass", path, int),
        mode=doc["mode"],
    )
    if "subclasses_per_superclass_owned" in doc:
        kwargs["subclasses_per_superclass_owned"] = _get_range(
            doc, "subclasses_per_superclass_owned", path)
    try:
        return PartitionSpec(**kwargs)
    except DomainError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _parse_unlabeled(doc):
    path = "unlabeled"
    _check_keys(doc, path, required=("size",), optional=("strategy", "margin"))
    kwargs = {"size": _get_number(doc, "size", path, int)}
    if "strategy" in doc:
        kwargs["strategy"] = doc["strategy"]
    if "margin" in doc:
        kwargs["margin"] = _get_number(doc, "margin", path, float)
    try:
        return UnlabeledSpec(**kwargs)
    except DomainError as exc:
        raise ConfigError(f"{path}: {exc}") from None


TRAIN_CONFIG_KEYS = ("seed", "learning_rate", "epochs", "batch_size",
                     "update_batch_size", "k", "smoothing", "hidden_width")


def _parse_participant(doc, index):
    path = f"participants[{index}]"
    _expect_mapping(doc, path)
    if "learner" not in doc:
        raise ConfigError(f"{path}: missing required key 'learner' for participant {index}")
    _check_keys(doc, path, required=("learner",), optional=("config",))
    kind = doc["learner"]
    if kind not in LEARNER_KINDS:
        raise ConfigError(
            f"{path}: unknown learner {kind!r} for participant {index}; "
            f"choose from {sorted(LEARNER_KINDS)}")
    kwargs = {}
    sub = doc.get("config", {})
    _check_keys(sub, f"{path}.config", required=(), optional=TRAIN_CONFIG_KEYS)
    for key in TRAIN_CONFIG_KEYS:
        if key in sub:
            kind_of = float if key in ("learning_rate", "smoothing") else int
            kwargs[key] = _get_number(sub, key, f"{path}.config", kind_of)
    try:
        return ParticipantSpec(kind, TrainConfig(**kwargs))
    except (LearnerError, DomainError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _parse_netproto(doc):
    path = "netproto"
    _check_keys(doc, path, required=(), optional=("bind", "timeout_s", "max_line_bytes"))
    bind = doc.get("bind", "127.0.0.1:0")
    if not isinstance(bind, str) or ":" not in bind:
        raise ConfigError(f"{path}.bind: expected 'host:port'")
    timeout = _get_number(doc, "timeout_s", path, float) if "timeout_s" in doc \
        else DEFAULT_COORDINATOR_TIMEOUT
    max_line = _get_number(doc, "max_line_bytes", path, int) if "max_line_bytes" in doc \
        else DEFAULT_MAX_LINE
    return {"bind": bind, "timeout_s": timeout, "max_line_bytes": max_line}


TOP_KEYS_REQUIRED = ("alpha", "master_seed", "taxonomy", "partition", "unlabeled",
                     "participants")
TOP_KEYS_OPTIONAL = ("mode", "output_dir", "test_instances_per_superclass", "weights",
                     "global_conflict_removal", "sweep_alphas", "sweep_sizes", "netproto")


class RunConfig:
    """Parsed run-config document: the federation plus CLI-level settings."""

    def __init__(self, federation: FederationConfig, mode: str, output_dir: str | None,
                 sweep_alphas, sweep_sizes, netproto: dict):
        self.federation = federation
        self.mode = mode
        self.output_dir = output_dir
        self.sweep_alphas = sweep_alphas
        self.sweep_sizes = sweep_sizes
        self.netproto = netproto

    def __eq__(self, other):
        return isinstance(other, RunConfig) and canonical_config(self) == canonical_config(other)


def parse_run_config(doc) -> RunConfig:
    _check_keys(doc, "config", required=TOP_KEYS_REQUIRED, optional=TOP_KEYS_OPTIONAL)
    alpha = _get_number(doc, "alpha", "config", float)
    master_seed = _get_number(doc, "master_seed", "config", int)
    taxonomy = _parse_taxonomy(doc["taxonomy"])
    partition = _parse_partition(doc["partition"])
    unlabeled = _parse_unlabeled(doc["unlabeled"])
    if not isinstance(doc["participants"], list) or not doc["participants"]:
        raise ConfigError("participants: expected a non-empty list")
    participants = tuple(_parse_participant(p, i)
                         for i, p in enumerate(doc["participants"]))
    weights = None
    if doc.get("weights") is not None:
        raw = doc["weights"]
        if not isinstance(raw, list) or any(
                isinstance(v, bool) or not isinstance(v, (int, float)) for v in raw):
            raise ConfigError("weights: expected null or a list of numbers")
        try:
            weights = CredibilityWeights(tuple(float(v) for v in raw))
        except AggregationError as exc:
            raise ConfigError(f"weights: {exc}") from None
    test_per = (_get_number(doc, "test_instances_per_superclass", "config", int)
                if "test_instances_per_superclass" in doc else 60)
    global_removal = doc.get("global_conflict_removal", False)
    if not isinstance(global_removal, bool):
        raise ConfigError("global_conflict_removal: expected a boolean")
    mode = doc.get("mode", "in-process")
    if mode not in RUN_MODES:
        raise ConfigError(f"mode: expected one of {RUN_MODES}, got {mode!r}")
    output_dir = doc.get("output_dir")
    if output_dir is not None and not isinstance(output_dir, str):
        raise ConfigError("output_dir: expected a string")
    sweep_alphas = doc.get("sweep_alphas")
    if sweep_alphas is not None:
        if not isinstance(sweep_alphas, list) or not sweep_alphas:
            raise ConfigError("sweep_alphas: expected a non-empty list of numbers")
        sweep_alphas = tuple(float(a) for a in sweep_alphas)
    sweep_sizes = doc.get("sweep_sizes")
    if sweep_sizes is not None:
        if not isinstance(sweep_sizes, list) or not sweep_sizes:
            raise ConfigError("sweep_sizes: expected a non-empty list of integers")
        sweep_sizes = tuple(int(s) for s in sweep_sizes)
    netproto = _parse_netproto(doc.get("netproto", {}))
    try:
        federation = FederationConfig(
            alpha=alpha,
            master_seed=master_seed,
            taxonomy=taxonomy,
            partition=partition,
            unlabeled=unlabeled,
            participants=participants,
            test_instances_per_superclass=test_per,
            weights=weights,
            global_conflict_removal=global_removal,
        )
    except DomainError as exc:
        raise ConfigError(str(exc)) from None
    return RunConfig(federation, mode, output_dir, sweep_alphas, sweep_sizes, netproto)


def canonical_config(rc: RunConfig) -> dict:
    """Fully-expanded canonical form; parsing it reproduces the same config."""
    fed = rc.federation
    doc = {
        "alpha": fed.alpha,
        "master_seed": fed.master_seed,
        "mode": rc.mode,
        "taxonomy": {
            "n_superclasses": fed.taxonomy.n_superclasses,
            "subclasses_per_superclass": fed.taxonomy.subclasses_per_superclass,
            "feature_dim": fed.taxonomy.feature_dim,
            "instances_per_subclass": fed.taxonomy.instances_per_subclass,
            "superclass_spread": fed.taxonomy.superclass_spread,
            "subclass_spread": fed.taxonomy.subclass_spread,
            "instance_noise": fed.taxonomy.instance_noise,
        },
        "partition": {
            "n_participants": fed.partition.n_participants,
            "superclasses_per_participant": list(fed.partition.superclasses_per_participant),
            "instances_per_superclass": fed.partition.instances_per_superclass,
            "mode": fed.partition.mode,
            "subclasses_per_superclass_owned": list(fed.partition.subclasses_per_superclass_owned),
        },
        "unlabeled": {
            "size": fed.unlabeled.size,
            "strategy": fed.unlabeled.strategy,
            "margin": fed.unlabeled.margin,
        },
        "test_instances_per_superclass": fed.test_instances_per_superclass,
        "weights": list(fed.weights.values) if fed.weights is not None else None,
        "global_conflict_removal": fed.global_conflict_removal,
        "participants": [
            {"learner": p.learner, "config": {
                "seed": p.config.seed,
                "learning_rate": p.config.learning_rate,
                "epochs": p.config.epochs,
                "batch_size": p.config.batch_size,
                "update_batch_size": p.config.update_batch_size,
                "k": p.config.k,
                "smoothing": p.config.smoothing,
                "hidden_width": p.config.hidden_width,
            }}
            for p in fed.participants
        ],
        "netproto": {"bind": rc.netproto["bind"], "timeout_s": rc.netproto["timeout_s"],
                     "max_line_bytes": rc.netproto["max_line_bytes"]},
    }
    if rc.output_dir is not None:
        doc["output_dir"] = rc.output_dir
    if rc.sweep_alphas is not None:
        doc["sweep_alphas"] = list(rc.sweep_alphas)
    if rc.sweep_sizes is not None:
        doc["sweep_sizes"] = list(rc.sweep_sizes)
    return doc


def load_run_config(path, seed_override=None) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} line {exc.lineno}: invalid JSON: {exc.msg}") from None
    rc = parse_run_config(doc)
    if seed_override is not None:
        rc.federation = replace(rc.federation, master_seed=int(seed_override))
    return rc


def _resolve_out(flag_value, rc: RunConfig) -> Path:
    out = flag_value or rc.output_dir or os.environ.get("FEDCOTRAIN_OUT") or "runs"
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_jsonl(path: Path, records) -> None:
    path.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in records),
                    encoding="utf-8")


def _save_pool_csv(pool, path: Path) -> None:
    d = pool.features.shape[1]
    lines = [",".join([f"f{j}" for j in range(d)] + ["superclass", "subclass"])]
    for i in range(len(pool)):
        cells = [format(v, ".17g") for v in pool.features[i]]
        cells.append(str(int(pool.superclass_labels[i])))
        cells.append(str(int(pool.subclass_labels[i])))
        lines.append(",".join(cells))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_generate_data(args) -> int:
    rc = load_run_config(args.config, args.seed)
    out = _resolve_out(args.out, rc)
    fed = rc.federation
    data = build_round_data(fed)

    pool_file = out / "pool.csv"
    _save_pool_csv(data.pool, pool_file)
    unlabeled_file = out / "unlabeled.csv"
    save_csv(data.unlabeled, unlabeled_file)

    participants = []
    for i, shard in enumerate(data.shards):
        train_file = out / f"participant_{i:02d}_train.csv"
        test_file = out / f"participant_{i:02d}_test.csv"
        save_csv(shard.train, train_file)
        save_csv(data.test_sets[i], test_file)
        participants.append({
            "id": i,
            "learner": fed.participants[i].learner,
            "label_space": [int(c) for c in shard.label_space],
            "owned_subclasses": {str(s): list(subs)
                                 for s, subs in sorted(shard.owned_subclasses.items())},
            "train": {"file": train_file.name, "sha256": file_sha256(train_file),
                      "rows": len(shard.train)},
            "test": {"file": test_file.name, "sha256": file_sha256(test_file),
                     "rows": len(data.test_sets[i])},
        })

    manifest = {
        "master_seed": fed.master_seed,
        "mode": fed.partition.mode,
        "n_participants": len(data.shards),
        "seeds": {name: derive_seed(fed.master_seed, name)
                  for name in ("taxonomy", "test", "partition", "unlabeled")},
        "pool": {"file": pool_file.name, "sha256": file_sha256(pool_file),
                 "rows": len(data.pool)},
        "unlabeled": {"file": unlabeled_file.name, "sha256": file_sha256(unlabeled_file),
                      "size": len(data.unlabeled)},
        "participants": participants,
        "config": canonical_config(rc),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n",
                                       encoding="utf-8")
    print(f"wrote {2 * len(participants) + 2} dataset files and manifest.json to {out}")
    return EXIT_OK


def _read_manifest(data_dir: Path) -> dict:
    path = data_dir / "manifest.json"
    if not path.exists():
        raise ConfigError(f"no manifest.json in {data_dir}; run generate-data first")
    return json.loads(path.read_text(encoding="utf-8"))


def _dump_artifacts(artifacts, out: Path) -> None:
    records = []
    for i, row in enumerate(artifacts.predictions):
        records.append({"record": "predictions", "participant": i,
                        "labels": [int(v) for v in row]})
    for category, pset in sorted(artifacts.pseudo_sets.items()):
        records.append({"record": "pseudolabel_set", "category": int(category),
                        "indices": list(pset.indices)})
    for bundle in artifacts.bundles:
        records.append({"record": "bundle", "participant": bundle.owner,
                        "entries": [{"category": e.category, "indices": list(e.indices)}
                                    for e in bundle.entries]})
    _write_jsonl(out / "artifacts.jsonl", records)


def _emit_report(report, out: Path, fmt: str) -> None:
    (out / "report.txt").write_text(report.to_table(), encoding="utf-8")
    (out / "report.jsonl").write_text(report.to_jsonl(), encoding="utf-8")
    if fmt == "table":
        print(report.to_table(), end="")
    else:
        print(report.to_jsonl(), end="")


def cmd_run(args) -> int:
    rc = load_run_config(args.config, args.seed)
    out = _resolve_out(args.out, rc)
    result = run_round(rc.federation)
    _emit_report(result.report, out, args.format)
    if args.dump_artifacts:
        _dump_artifacts(result.artifacts, out)
    return EXIT_OK


def cmd_sweep_alpha(args) -> int:
    rc = load_run_config(args.config, args.seed)
    out = _resolve_out(args.out, rc)
    alphas = ([float(a) for a in args.alphas.split(",")] if args.alphas
              else rc.sweep_alphas)
    if not alphas:
        raise ConfigError("no alphas: pass --alphas or set sweep_alphas in the config")
    entries = sweep_alpha(rc.federation, list(alphas))
    records = [{
        "record": "alpha_sweep",
        "alpha": e.alpha,
        "total_pseudolabels": e.total_pseudolabels,
        "mean_local_accuracy": e.report.mean_local_accuracy,
        "mean_federated_accuracy": e.report.mean_federated_accuracy,
        "mean_relative_accuracy": e.report.mean_relative_accuracy,
    } for e in entries]
    _write_jsonl(out / "sweep_alpha.jsonl", records)
    lines = [f"{'alpha':>6} {'pseudolabels':>13} {'mean_local':>11} "
             f"{'mean_fed':>9} {'mean_ratio':>11}"]
    for r in records:
        ratio = r["mean_relative_accuracy"]
        lines.append(f"{r['alpha']:>6.3g} {r['total_pseudolabels']:>13} "
                     f"{r['mean_local_accuracy']:>11.4f} "
                     f"{r['mean_federated_accuracy']:>9.4f} "
                     f"{(f'{ratio:.4f}' if ratio is not None else 'n/a'):>11}")
    table = "\n".join(lines) + "\n"
    (out / "sweep_alpha.txt").write_text(table, encoding="utf-8")
    print(table if args.format == "table"
          else "".join(json.dumps(r, sort_keys=True) + "\n" for r in records), end="")
    return EXIT_OK


def cmd_sweep_size(args) -> int:
    rc = load_run_config(args.config, args.seed)
    out = _resolve_out(args.out, rc)
    sizes = ([int(s) for s in args.sizes.split(",")] if args.sizes else rc.sweep_sizes)
    if not sizes:
        raise ConfigError("no sizes: pass --sizes or set sweep_sizes in the config")
    entries = sweep_unlabeled_size(rc.federation, list(sizes))
    records = [{
        "record": "size_sweep",
        "unlabeled_size": size,
        "total_pseudolabels": report.total_pseudolabels,
        "mean_local_accuracy": report.mean_local_accuracy,
        "mean_federated_accuracy": report.mean_federated_accuracy,
        "mean_relative_accuracy": report.mean_relative_accuracy,
    } for size, report in entries]
    _write_jsonl(out / "sweep_size.jsonl", records)
    lines = [f"{'size':>7} {'pseudolabels':>13} {'mean_local':>11} "
             f"{'mean_fed':>9} {'mean_ratio':>11}"]
    for r in records:
        ratio = r["mean_relative_accuracy"]
        lines.append(f"{r['unlabeled_size']:>7} {r['total_pseudolabels']:>13} "
                     f"{r['mean_local_accuracy']:>11.4f} "
                     f"{r['mean_federated_accuracy']:>9.4f} "
                     f"{(f'{ratio:.4f}' if ratio is not None else 'n/a'):>11}")
    table = "\n".join(lines) + "\n"
    (out / "sweep_size.txt").write_text(table, encoding="utf-8")
    print(table if args.format == "table"
          else "".join(json.dumps(r, sort_keys=True) + "\n" for r in records), end="")
    return EXIT_OK


def cmd_analyze(args) -> int:
    rc = load_run_config(args.config, args.seed)
    out = _resolve_out(args.out, rc)
    result = run_round(rc.federation)
    _emit_report(result.report, out, args.format)
    analysis = analyze_round(result.artifacts, helper_error=args.helper_error)
    _write_jsonl(out / "analysis.jsonl", analysis.to_records())
    print(f"analysis for {len(analysis.participants)} participants written to "
          f"{out / 'analysis.jsonl'}")
    return EXIT_OK


def _parse_bind(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    try:
        return host, int(port)
    except ValueError:
        raise ConfigError(f"invalid address {text!r}; expected host:port") from None


def cmd_serve(args) -> int:
    rc = load_run_config(args.config, args.seed)
    data_dir = Path(args.data)
    manifest = _read_manifest(data_dir)
    unlabeled_file = data_dir / manifest["unlabeled"]["file"]
    if not unlabeled_file.exists():
        raise ConfigError(f"unlabeled dataset {unlabeled_file} is missing")
    settings = CoordinatorSettings(
        n_participants=rc.federation.partition.n_participants,
        alpha=rc.federation.alpha,
        unlabeled_size=manifest["unlabeled"]["size"],
        dataset_sha256=file_sha256(unlabeled_file),
        weights=rc.federation.weights,
        global_conflict_removal=rc.federation.global_conflict_removal,
        timeout_s=args.timeout if args.timeout is not None else rc.netproto["timeout_s"],
        max_line=rc.netproto["max_line_bytes"],
    )
    host, port = _parse_bind(args.bind or rc.netproto["bind"])
    coordinator = Coordinator(settings)
    bound = coordinator.bind(host, port)
    print(f"coordinator listening on {bound[0]}:{bound[1]} "
          f"for {settings.n_participants} participants", flush=True)
    result = coordinator.serve()
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_jsonl(out / "transcript.jsonl", result.transcript)
        bundle_records = [{
            "record": "bundle",
            "participant": owner,
            "entries": [{"category": e.category, "indices": list(e.indices)}
                        for e in bundle.entries],
        } for owner, bundle in sorted(result.bundles.items())]
        _write_jsonl(out / "bundles.jsonl", bundle_records)
    print(f"round {result.status}")
    return EXIT_OK if result.status == "completed" else EXIT_PROTOCOL


def cmd_join(args) -> int:
    rc = load_run_config(args.config, args.seed)
    data_dir = Path(args.data)
    manifest = _read_manifest(data_dir)
    i = args.participant
    if not 0 <= i < len(manifest["participants"]):
        raise ConfigError(f"participant {i} not present in manifest")
    entry = manifest["participants"][i]
    space = LabelSpace(tuple(entry["label_space"]))
    train = load_csv(data_dir / entry["train"]["file"], label_space=space)
    test = load_csv(data_dir / entry["test"]["file"], label_space=space)
    unlabeled_file = data_dir / manifest["unlabeled"]["file"]
    public = load_csv(unlabeled_file)
    spec = rc.federation.participants[i]
    config = participant_train_config(rc.federation, i)
    result = netproto_join(
        _parse_bind(args.addr),
        participant_id=i,
        kind=spec.learner,
        label_space=space,
        train=train,
        test=test,
        public=public,
        public_sha256=file_sha256(unlabeled_file),
        config=config,
        timeout_s=args.timeout if args.timeout is not None else DEFAULT_CLIENT_TIMEOUT,
        max_line=rc.netproto["max_line_bytes"],
    )
    record = result.to_record()
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_jsonl(out / f"participant_{i:02d}_report.jsonl", [record])
        _write_jsonl(out / f"participant_{i:02d}_transcript.jsonl", result.transcript)
    print(json.dumps(record, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedcotrain",
        description="Single-round federated cotraining over a shared public unlabeled dataset",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_out=True):
        p.add_argument("--config", required=True, help="path to a JSON run config")
        p.add_argument("--seed", type=int, default=None, help="override master_seed")
        if needs_out:
            p.add_argument("--out", default=None,
                           help="output directory (default: config output_dir, "
                                "then $FEDCOTRAIN_OUT, then ./runs)")
        p.add_argument("--format", choices=("table", "records"), default="table")

    p = sub.add_parser("generate-data", help="write pool, shards, test sets, unlabeled set")
    common(p)
    p.set_defaults(func=cmd_generate_data)

    p = sub.add_parser("run", help="run one in-process federation round")
    common(p)
    p.add_argument("--dump-artifacts", action="store_true",
                   help="also write votes, admitted sets, and bundles")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep-alpha", help="rerun the round across vote thresholds")
    common(p)
    p.add_argument("--alphas", default=None, help="comma-separated thresholds")
    p.set_defaults(func=cmd_sweep_alpha)

    p = sub.add_parser("sweep-size", help="rerun the round across public dataset sizes")
    common(p)
    p.add_argument("--sizes", default=None, help="comma-separated sizes")
    p.set_defaults(func=cmd_sweep_size)

    p = sub.add_parser("analyze", help="run a round and append the bound analysis")
    common(p)
    p.add_argument("--helper-error", type=float, default=None,
                   help="assumed pseudolabeler error (default: mean measured local error)")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("serve", help="run the coordinator for one distributed round")
    common(p, needs_out=False)
    p.add_argument("--data", required=True, help="directory from generate-data")
    p.add_argument("--bind", default=None, help="host:port to listen on")
    p.add_argument("--timeout", type=float, default=None, help="straggler timeout seconds")
    p.add_argument("--out", default=None, help="write transcript and bundles here")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("join", help="participate in a distributed round")
    common(p, needs_out=False)
    p.add_argument("--data", required=True, help="directory from generate-data")
    p.add_argument("--participant", type=int, required=True)
    p.add_argument("--addr", required=True, help="coordinator host:port")
    p.add_argument("--timeout", type=float, default=None)
    p.add_argument("--out", default=None, help="write the report fragment here")
    p.set_defaults(func=cmd_join)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ProtocolError as exc:
        print(f"protocol error: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    except (DomainError, LearnerError, AggregationError, TheoryError, RoundError,
            OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
