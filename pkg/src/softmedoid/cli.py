"""Batch experiment driver.

Every subcommand reads a JSON experiment configuration, runs the
corresponding pipeline and writes CSV/JSON outputs plus a manifest
(config hash, seeds, versions) into the output directory. Runs are fully
deterministic: re-running a command with the same config reproduces the
outputs byte for byte.

Exit codes: 0 success, 2 configuration error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__, attacks, gnn, robustness, smoothing
from . import graph as graphlib
from .aggregate import AggregatorConfig


class ConfigError(ValueError):
    """Invalid experiment configuration."""


class NumericFailure(RuntimeError):
    """Numeric breakdown during a run (divergence, non-convergence)."""


# ---------------------------------------------------------------------------
# config handling
# ---------------------------------------------------------------------------

_TOP_KEYS = {
    "description", "seed", "seeds", "output_dir", "dataset", "model", "train",
    "smoothing", "attack", "bias_curve", "breakdown", "temperature_sweep",
    "checkpoint",
}
_DATASET_KEYS = {
    "kind", "n", "classes", "p_in", "p_out", "feature_dim", "feature_shift",
    "edge_file", "feature_file", "label_file", "largest_component",
    "normalize_features",
}
_MODEL_KEYS = {"hidden", "message_source", "gdc_alpha", "gdc_k", "aggregator"}
_AGG_KEYS = {"kind", "T", "k"}
_TRAIN_KEYS = {"lr", "weight_decay", "max_epochs", "patience", "per_class"}
_SMOOTHING_KEYS = {"p_plus", "p_minus", "target", "n_samples", "alpha_conf",
                   "max_ra", "max_rd", "degree_bins"}
_ATTACK_KEYS = {"kind", "epsilon", "steps", "step_size", "models", "flips_file"}
_BIAS_KEYS = {"estimators", "n", "d", "p", "eps_grid", "trials"}
_BREAKDOWN_KEYS = {"estimators", "n", "d", "m", "p_schedule"}
_ESTIMATOR_KEYS = {"name", "T"}


def _check_keys(obj, allowed, where):
    if not isinstance(obj, dict):
        raise ConfigError(f"{where} must be a JSON object")
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            config = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from None
    _check_keys(config, _TOP_KEYS, "config")
    for key, allowed in [("dataset", _DATASET_KEYS), ("model", _MODEL_KEYS),
                         ("train", _TRAIN_KEYS), ("smoothing", _SMOOTHING_KEYS),
                         ("attack", _ATTACK_KEYS), ("bias_curve", _BIAS_KEYS),
                         ("breakdown", _BREAKDOWN_KEYS)]:
        if key in config:
            _check_keys(config[key], allowed, key)
    if "model" in config and "aggregator" in config["model"]:
        _check_keys(config["model"]["aggregator"], _AGG_KEYS, "model.aggregator")
    for section in ("bias_curve", "breakdown"):
        for spec in config.get(section, {}).get("estimators", []):
            _check_keys(spec, _ESTIMATOR_KEYS, f"{section}.estimators[]")
    if "attack" in config:
        for spec in config["attack"].get("models", []):
            _check_keys(spec, _AGG_KEYS | {"name"}, "attack.models[]")
    return config


def resolve_seeds(config, args) -> list[int]:
    if args.seeds:
        try:
            return [int(tok) for tok in args.seeds.split(",") if tok.strip() != ""]
        except ValueError:
            raise ConfigError(f"--seeds must be a comma-separated int list, got {args.seeds!r}")
    if "seeds" in config:
        return [int(s) for s in config["seeds"]]
    return [int(config.get("seed", 0))]


def write_manifest(out_dir: Path, command: str, config: dict, seeds, outputs):
    blob = json.dumps(config, sort_keys=True).encode()
    manifest = {
        "command": command,
        "config_sha256": hashlib.sha256(blob).hexdigest(),
        "seeds": list(seeds),
        "outputs": sorted(outputs),
        "versions": {
            "softmedoid": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
    }
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _dump_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# shared pipeline pieces
# ---------------------------------------------------------------------------

def build_dataset(config, seed: int) -> graphlib.SparseGraph:
    spec = config.get("dataset")
    if not spec:
        raise ConfigError("a 'dataset' section is required")
    kind = spec.get("kind")
    if kind == "synthetic":
        required = {"n", "classes", "p_in", "p_out", "feature_dim", "feature_shift"}
        missing = required - set(spec)
        if missing:
            raise ConfigError(f"dataset: missing keys {sorted(missing)}")
        return graphlib.synth_sbm(spec["n"], spec["classes"], spec["p_in"],
                                  spec["p_out"], spec["feature_dim"],
                                  spec["feature_shift"], seed=seed)
    if kind == "files":
        for key in ("edge_file", "feature_file"):
            if key not in spec:
                raise ConfigError(f"dataset: {key} is required for kind 'files'")
        try:
            g = graphlib.load_graph(spec["edge_file"], spec["feature_file"],
                                    spec.get("label_file"))
        except (OSError, graphlib.ParseError) as exc:
            raise ConfigError(str(exc)) from None
        if spec.get("largest_component", True):
            g, _ = graphlib.largest_connected_component(g)
        if spec.get("normalize_features", True):
            g = graphlib.SparseGraph(adjacency=g.adjacency,
                                     features=graphlib.normalize_features_l1(g.features),
                                     labels=g.labels)
        return g
    raise ConfigError(f"dataset.kind must be 'synthetic' or 'files', got {kind!r}")


def build_aggregator(spec) -> AggregatorConfig:
    try:
        return AggregatorConfig(kind=spec.get("kind", "weighted_sum"),
                                T=spec.get("T", 1.0), k=spec.get("k", 0))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def train_one(config, graph, seed: int):
    model_spec = config.get("model", {})
    agg = build_aggregator(model_spec.get("aggregator", {}))
    source = model_spec.get("message_source", "gcn")
    alpha = model_spec.get("gdc_alpha", 0.15)
    k = model_spec.get("gdc_k", 64)
    train_spec = config.get("train", {})
    per_class = train_spec.get("per_class", 20)
    cfg = gnn.TrainConfig(
        lr=train_spec.get("lr", 0.01),
        weight_decay=train_spec.get("weight_decay", 5e-4),
        max_epochs=train_spec.get("max_epochs", 3000),
        patience=train_spec.get("patience", 300),
        seed=seed,
    )
    A = graphlib.build_message_matrix(graph.adjacency, source, alpha, k)
    split = graphlib.split_nodes(graph, per_class=per_class, seed=seed)
    model = gnn.init_model(graph.features.shape[1], model_spec.get("hidden", 64),
                           graph.class_count, agg, seed=seed,
                           message_source=source, gdc_alpha=alpha, gdc_k=k)
    try:
        trained, history = gnn.train(model, graph, A, split, cfg)
    except gnn.TrainingDivergence as exc:
        raise NumericFailure(str(exc)) from None
    return trained, history, A, split


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_bias_curve(config, out_dir: Path, seeds, samples_override) -> list[str]:
    spec = config.get("bias_curve")
    if not spec:
        raise ConfigError("a 'bias_curve' section is required")
    estimators = spec.get("estimators", [])
    if not estimators:
        raise ConfigError("no estimators configured")
    trials = samples_override or spec.get("trials", 20)
    curves = []
    for seed in seeds:
        for est_spec in estimators:
            curves.append(robustness.empirical_bias_curve(
                est_spec["name"], n=spec.get("n", 50), d=spec.get("d", 2),
                p=spec.get("p", 1000.0), T=est_spec.get("T"),
                eps_grid=spec.get("eps_grid", [0.0, 0.1, 0.2, 0.3, 0.4]),
                trials=trials, rng_seed=seed))
    robustness.write_bias_curves(out_dir / "bias_curves.csv", curves)
    return ["bias_curves.csv"]


def cmd_breakdown(config, out_dir: Path, seeds, samples_override) -> list[str]:
    spec = config.get("breakdown")
    if not spec:
        raise ConfigError("a 'breakdown' section is required")
    estimators = spec.get("estimators", [])
    if not estimators:
        raise ConfigError("no estimators configured")
    n = spec.get("n", 50)
    d = spec.get("d", 2)
    sweeps = []
    for seed in seeds:
        rng = np.random.default_rng(seed)
        X = rng.standard_normal((n, d))
        for est_spec in estimators:
            for m in spec.get("m", [n // 2 - 1, n // 2 + 1]):
                sweeps.append(robustness.breakdown_sweep(
                    est_spec["name"], X, m=m,
                    p_schedule=spec.get("p_schedule", [1e3, 1e6, 1e9]),
                    T=est_spec.get("T"), rng_seed=seed))
    robustness.write_breakdown_sweeps(out_dir / "breakdown.csv", sweeps)
    return ["breakdown.csv"]


def _mean_and_sem(values):
    values = np.asarray(values, dtype=np.float64)
    mean = float(values.mean())
    sem = float(values.std(ddof=1) / np.sqrt(len(values))) if len(values) > 1 else 0.0
    return mean, sem


def cmd_train(config, out_dir: Path, seeds, samples_override) -> list[str]:
    sweep_temperatures = config.get("temperature_sweep")
    outputs = []
    accs, epochs = [], []
    for seed in seeds:
        graph = build_dataset(config, seed)
        trained, history, A, split = train_one(config, graph, seed)
        acc = gnn.predict_accuracy(trained, A, graph.features, graph.labels, split.test)
        accs.append(acc)
        epochs.append(len(history))
        prefix = out_dir / f"model_seed{seed}"
        gnn.save_checkpoint(trained, str(prefix))
        outputs += [f"model_seed{seed}.npz", f"model_seed{seed}.json"]
    mean, sem = _mean_and_sem(accs)
    metrics = {
        "seeds": list(seeds),
        "test_accuracy": {"per_seed": accs, "mean": mean, "sem": sem},
        "epochs": epochs,
    }
    _dump_json(out_dir / "metrics.json", metrics)
    outputs.append("metrics.json")
    if sweep_temperatures:
        outputs.append(_temperature_sweep(config, out_dir, seeds[0],
                                          sweep_temperatures, samples_override))
    return outputs


def _temperature_sweep(config, out_dir: Path, seed, temperatures, samples_override):
    """Train and certify one model per temperature; tabulate robustness vs T."""
    smoothing_spec = config.get("smoothing", {})
    rows = []
    for T in temperatures:
        sweep_config = json.loads(json.dumps(config))
        sweep_config.pop("temperature_sweep", None)
        model_spec = sweep_config.setdefault("model", {})
        agg = model_spec.setdefault("aggregator", {})
        agg.setdefault("kind", "soft_medoid")
        agg["T"] = T
        graph = build_dataset(sweep_config, seed)
        trained, _, A, split = train_one(sweep_config, graph, seed)
        acc = gnn.predict_accuracy(trained, A, graph.features, graph.labels, split.test)
        cfg = smoothing.SmoothingConfig(
            p_plus=smoothing_spec.get("p_plus", 0.01),
            p_minus=smoothing_spec.get("p_minus", 0.4),
            target=smoothing_spec.get("target", "edges"),
            n_samples=samples_override or smoothing_spec.get("n_samples", 200),
            alpha_conf=smoothing_spec.get("alpha_conf", 0.05))
        votes = smoothing.sample_votes(trained, graph, cfg, seed=seed)
        grid = smoothing.certification_grid(votes, graph.labels, cfg,
                                            smoothing_spec.get("max_ra", 2),
                                            smoothing_spec.get("max_rd", 10),
                                            index_set=split.test)
        rows.append((T, smoothing.accumulated_certifications(grid), acc))
    path = out_dir / "temperature_sweep.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["T", "accumulated_certifications", "base_accuracy"])
        for T, ac, acc in rows:
            writer.writerow([repr(float(T)), repr(float(ac)), repr(float(acc))])
    return "temperature_sweep.csv"


def cmd_certify(config, out_dir: Path, seeds, samples_override) -> list[str]:
    spec = config.get("smoothing")
    if not spec:
        raise ConfigError("a 'smoothing' section is required")
    seed = seeds[0]
    graph = build_dataset(config, seed)
    if "checkpoint" in config:
        trained = gnn.load_checkpoint(config["checkpoint"])
        A = graphlib.build_message_matrix(graph.adjacency, trained.message_source,
                                          trained.gdc_alpha, trained.gdc_k)
        split = graphlib.split_nodes(graph, per_class=config.get("train", {}).get("per_class", 20),
                                     seed=seed)
    else:
        trained, _, A, split = train_one(config, graph, seed)
    cfg = smoothing.SmoothingConfig(
        p_plus=spec.get("p_plus", 0.001), p_minus=spec.get("p_minus", 0.4),
        target=spec.get("target", "edges"),
        n_samples=samples_override or spec.get("n_samples", 1000),
        alpha_conf=spec.get("alpha_conf", 0.05))
    votes = smoothing.sample_votes(trained, graph, cfg, seed=seed)
    max_ra, max_rd = spec.get("max_ra", 3), spec.get("max_rd", 15)
    grid = smoothing.certification_grid(votes, graph.labels, cfg, max_ra, max_rd,
                                        index_set=split.test)
    acc_base = gnn.predict_accuracy(trained, A, graph.features, graph.labels, split.test)
    metrics = smoothing.certification_metrics(votes, graph.labels, cfg, grid,
                                              acc_base, index_set=split.test)
    smoothing.write_grid_csv(out_dir / "certification_grid.csv", grid)
    smoothing.write_metrics_json(out_dir / "certification_metrics.json", metrics)
    outputs = ["certification_grid.csv", "certification_metrics.json"]
    if spec.get("degree_bins"):
        outputs.append(_degree_binned_report(out_dir, graph, votes, cfg, split,
                                             max_ra, max_rd))
    return outputs


def _degree_binned_report(out_dir: Path, graph, votes, cfg, split, max_ra, max_rd):
    """Accumulated certifications inside five equal-frequency degree bins."""
    degrees = graph.degrees()[split.test]
    order = np.argsort(degrees, kind="stable")
    bins = np.array_split(order, 5)
    path = out_dir / "certification_degree_bins.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin", "min_degree", "max_degree", "n_nodes",
                         "accumulated_certifications"])
        for b, members in enumerate(bins):
            nodes = split.test[members]
            grid = smoothing.certification_grid(votes, graph.labels, cfg,
                                                max_ra, max_rd, index_set=nodes)
            ac = smoothing.accumulated_certifications(grid)
            writer.writerow([b, int(degrees[members].min()), int(degrees[members].max()),
                             len(nodes), repr(float(ac))])
    return "certification_degree_bins.csv"


def cmd_attack(config, out_dir: Path, seeds, samples_override) -> list[str]:
    spec = config.get("attack")
    if not spec:
        raise ConfigError("an 'attack' section is required")
    kind = spec.get("kind", "dice")
    budget = attacks.AttackBudget(spec.get("epsilon", 0.1))
    accuracy_rows = []
    outputs = []
    for seed in seeds:
        graph = build_dataset(config, seed)
        surrogate_config = json.loads(json.dumps(config))
        surrogate_config.setdefault("model", {})["aggregator"] = {"kind": "weighted_sum"}
        surrogate, _, _, split = train_one(surrogate_config, graph, seed)
        if kind == "dice":
            attack = attacks.dice_attack(graph, graph.labels, budget, seed=seed)
        elif kind == "greedy":
            attack = attacks.greedy_flip_attack(surrogate, graph, budget, idx=split.test)
        elif kind == "pgd":
            attack = attacks.pgd_l0_attack(surrogate, graph, budget,
                                           steps=spec.get("steps", 50),
                                           step_size=spec.get("step_size", 0.1),
                                           seed=seed, idx=split.test)
        elif kind == "import":
            if "flips_file" not in spec:
                raise ConfigError("attack.flips_file is required for kind 'import'")
            attack = attacks.read_flips_csv(spec["flips_file"])
        else:
            raise ConfigError(f"unknown attack kind {kind!r}")
        victims = {}
        for victim_spec in spec.get("models", [{"name": "weighted_sum",
                                                "kind": "weighted_sum"}]):
            name = victim_spec.get("name", victim_spec.get("kind", "model"))
            victim_config = json.loads(json.dumps(config))
            victim_config.setdefault("model", {})["aggregator"] = {
                k: v for k, v in victim_spec.items() if k in ("kind", "T", "k")}
            victims[name], _, _, _ = train_one(victim_config, graph, seed)
        clean_attack = attacks.AttackResult(flips=[])
        clean = attacks.evasion_eval(victims, graph, clean_attack, split)
        perturbed = attacks.evasion_eval(victims, graph, attack, split)
        for name in victims:
            accuracy_rows.append((seed, name, clean[name], perturbed[name]))
        flips_name = f"flips_seed{seed}.csv"
        attacks.write_flips_csv(out_dir / flips_name, attack)
        outputs.append(flips_name)
    with open(out_dir / "attack_accuracy.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["seed", "model", "clean_accuracy", "perturbed_accuracy"])
        for seed, name, clean_acc, pert_acc in accuracy_rows:
            writer.writerow([seed, name, repr(float(clean_acc)), repr(float(pert_acc))])
    outputs.append("attack_accuracy.csv")
    return outputs


_COMMANDS = {
    "bias-curve": cmd_bias_curve,
    "breakdown": cmd_breakdown,
    "train": cmd_train,
    "certify": cmd_certify,
    "attack": cmd_attack,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="softmedoid",
        description="robust-aggregation experiments: bias curves, breakdown "
                    "sweeps, training, certification and attacks")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", required=True, help="experiment JSON")
        cmd.add_argument("--out", default=None, help="output directory")
        cmd.add_argument("--seeds", default=None, help="comma-separated seed list")
        cmd.add_argument("--samples", type=int, default=None,
                         help="override Monte-Carlo sample/trial counts")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
        seeds = resolve_seeds(config, args)
        out_dir = Path(args.out or config.get("output_dir", "out"))
        out_dir.mkdir(parents=True, exist_ok=True)
        outputs = _COMMANDS[args.command](config, out_dir, seeds, args.samples)
        write_manifest(out_dir, args.command, config, seeds, outputs)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (NumericFailure, gnn.TrainingDivergence, RuntimeError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
