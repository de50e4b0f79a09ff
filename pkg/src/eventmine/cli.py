"""Command-line pipeline: synth, train, cluster, evaluate, rank-names,
rank-frames, report.

Configuration comes from a TOML file; command-line flags override config
values, and the EVENTMINE_OUTPUT_DIR environment variable overrides the
configured output directory (flags still win). Relative paths in the
config resolve against the config file's directory. Outputs carry no
timestamps, so identical inputs give byte-identical artifacts.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import clustering as cl
from . import dataio, evaluation, training
from .clusterer import forward, load_checkpoint, save_checkpoint
from .errors import (
    ConfigError,
    ContractError,
    DataError,
    DegenerateBatchError,
    EventmineError,
    FormatError,
    NumericsError,
)

OUTPUT_DIR_ENV = "EVENTMINE_OUTPUT_DIR"


# ---------------------------------------------------------------------------
# Config plumbing


def _load_config(path: str | None) -> tuple[dict, Path]:
    if path is None:
        return {}, Path.cwd()
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file does not exist: {p}")
    try:
        with open(p, "rb") as fh:
            return tomllib.load(fh), p.parent
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{p}: invalid TOML: {exc}") from exc


def _cfg(config: dict, section: str, key: str, default=None):
    return config.get(section, {}).get(key, default)


def _path_from(config: dict, base: Path, key: str, required: bool = False) -> Path | None:
    value = _cfg(config, "paths", key)
    if value is None:
        if required:
            raise ConfigError(f"config is missing required path: paths.{key}")
        return None
    p = Path(value)
    if not p.is_absolute():
        p = base / p
    return p


def _require_exists(p: Path, what: str) -> Path:
    if not p.exists():
        raise ConfigError(f"{what} path does not exist: {p}")
    return p


def _output_dir(args: argparse.Namespace, config: dict, base: Path) -> Path:
    if getattr(args, "out", None):
        out = Path(args.out)
    elif os.environ.get(OUTPUT_DIR_ENV):
        out = Path(os.environ[OUTPUT_DIR_ENV])
    else:
        value = _cfg(config, "paths", "output_dir", ".")
        out = Path(value)
        if not out.is_absolute():
            out = base / out
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_dataset(config: dict, base: Path) -> dataio.EmbeddingDataset:
    emb = _require_exists(_path_from(config, base, "embeddings", required=True), "embeddings")
    labels = _require_exists(_path_from(config, base, "labels", required=True), "labels")
    augmented = _path_from(config, base, "augmented")
    if augmented is not None:
        _require_exists(augmented, "augmented embeddings")
    return dataio.load_dataset(emb, labels, augmented)


def _load_names(config: dict, base: Path) -> dataio.NameCorpus | None:
    emb = _path_from(config, base, "names_embeddings")
    labels = _path_from(config, base, "names_labels")
    if emb is None or labels is None:
        return None
    _require_exists(emb, "name corpus embeddings")
    _require_exists(labels, "name corpus labels")
    return dataio.load_name_corpus(emb, labels, kind="type_names")


def _load_frames(
    config: dict, base: Path
) -> tuple[dataio.FrameHierarchy, dataio.NameCorpus] | None:
    keys = ("frames_embeddings", "frames_labels", "frames_list", "frame_edges", "frame_mapping")
    paths = {k: _path_from(config, base, k) for k in keys}
    if any(v is None for v in paths.values()):
        return None
    for k, v in paths.items():
        _require_exists(v, k)
    corpus = dataio.load_name_corpus(
        paths["frames_embeddings"], paths["frames_labels"], kind="frame_definitions"
    )
    hierarchy = dataio.load_frame_hierarchy(
        paths["frames_list"], paths["frame_edges"], paths["frame_mapping"]
    )
    return hierarchy, corpus


def _train_config(config: dict, seed: int | None = None) -> training.TrainConfig:
    section = dict(config.get("train", {}))
    if seed is not None:
        section["seed"] = seed
    known = {f.name for f in training.TrainConfig.__dataclass_fields__.values()}
    unknown = set(section) - known
    if unknown:
        raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
    return training.TrainConfig(**section)


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


# ---------------------------------------------------------------------------
# synth


def cmd_synth(args: argparse.Namespace) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset = dataio.generate_synthetic(
        seed=args.seed,
        n_seen_types=args.seen,
        n_unseen_types=args.unseen,
        per_type=args.per_type,
        d=args.dim,
        noise_sigma=args.noise,
        aug_sigma=args.aug_noise,
    )
    dataio.save_dataset(
        dataset, out / "embeddings.emb", out / "labels.jsonl", out / "augmented.emb"
    )
    names = dataio.synthetic_name_corpus(args.seed, args.seen, args.unseen, args.dim)
    dataio.save_name_corpus(names, out / "names.emb", out / "names.txt")
    hierarchy, frame_corpus = dataio.synthetic_frame_package(
        args.seed, args.seen, args.unseen, args.dim
    )
    dataio.save_name_corpus(frame_corpus, out / "frames.emb", out / "frames.txt")
    dataio.save_frame_hierarchy(
        hierarchy,
        {label: f"definition of {label}" for label in sorted(hierarchy.frames)},
        out / "frames.tsv",
        out / "frame_edges.tsv",
        out / "frame_mapping.tsv",
    )

    config_text = (
        "[paths]\n"
        'embeddings = "embeddings.emb"\n'
        'labels = "labels.jsonl"\n'
        'augmented = "augmented.emb"\n'
        'names_embeddings = "names.emb"\n'
        'names_labels = "names.txt"\n'
        'frames_embeddings = "frames.emb"\n'
        'frames_labels = "frames.txt"\n'
        'frames_list = "frames.tsv"\n'
        'frame_edges = "frame_edges.tsv"\n'
        'frame_mapping = "frame_mapping.tsv"\n'
        'output_dir = "."\n'
        "\n"
        "[train]\n"
        f"seed = {args.seed}\n"
        f"n_clusters_for_stopping = {args.unseen}\n"
        "\n"
        "[clustering]\n"
        'backend = "agglomerative"\n'
        'variant = "dot"\n'
        f"k = {args.unseen}\n"
        "\n"
        "[evaluation]\n"
        f"total_unseen_types = {args.unseen}\n"
    )
    (out / "config.toml").write_text(config_text, encoding="utf-8")
    print(f"wrote synthetic dataset ({dataset.n} rows, d={dataset.d}) to {out}")
    return 0


# ---------------------------------------------------------------------------
# train


def _seeds_for_run(args: argparse.Namespace, config: dict) -> list[int]:
    if getattr(args, "seed", None) is not None:
        return [args.seed]
    seeds = _cfg(config, "ensemble", "seeds")
    if seeds:
        return [int(s) for s in seeds]
    return [int(_cfg(config, "train", "seed", 0))]


def cmd_train(args: argparse.Namespace) -> int:
    config, base = _load_config(args.config)
    out = _output_dir(args, config, base)
    dataset = _load_dataset(config, base)
    names = _load_names(config, base)

    for seed in _seeds_for_run(args, config):
        train_cfg = _train_config(config, seed=seed)
        params, trace = training.train(dataset, train_cfg, names)
        save_checkpoint(params, out / f"checkpoint_seed{seed}.ckpt")
        training.write_trace_json(trace, out / f"trace_seed{seed}.json")
        training.write_silhouette_csv(
            trace, out / f"silhouettes_seed{seed}.csv", train_cfg.window_size
        )
        print(
            f"seed {seed}: selected epoch {trace.selected_epoch} "
            f"(silhouette {trace.epochs[trace.selected_epoch]['silhouette']:.4f})"
        )
    return 0


# ---------------------------------------------------------------------------
# cluster


def _distances_for_checkpoints(
    checkpoints: list[Path], X: np.ndarray, variant: str
) -> list[cl.DistanceMatrix]:
    out = []
    for ckpt in checkpoints:
        params = load_checkpoint(_require_exists(ckpt, "checkpoint"))
        fwd = forward(params, X, training=False)
        out.append(cl.distance_from_attention(fwd.Q, fwd.K, variant))
    return out


def cmd_cluster(args: argparse.Namespace) -> int:
    config, base = _load_config(args.config)
    out = _output_dir(args, config, base)
    dataset = _load_dataset(config, base)
    unseen = dataset.unseen_indices
    if unseen.size < 2:
        raise DataError("clustering needs at least 2 unseen rows")
    X = dataset.embeddings[unseen]

    variant = args.variant or _cfg(config, "clustering", "variant", "dot")
    backend = args.backend or _cfg(config, "clustering", "backend", "agglomerative")

    if variant == "embedding":
        distance = cl.cosine_distances(X)
        n_runs = 1
    elif variant in ("dot", "cosine"):
        if args.checkpoint:
            checkpoints = [Path(c) for c in args.checkpoint]
        else:
            checkpoints = [
                out / f"checkpoint_seed{s}.ckpt" for s in _seeds_for_run(args, config)
            ]
        distances = _distances_for_checkpoints(checkpoints, X, variant)
        distance = distances[0] if len(distances) == 1 else cl.ensemble(distances)
        n_runs = len(distances)
    else:
        raise ConfigError(f"unknown clustering variant {variant!r}")

    use_manifold = args.manifold or bool(_cfg(config, "clustering", "manifold", False))
    if use_manifold:
        k_neighbors = args.k_neighbors or _cfg(config, "clustering", "k_neighbors") or None
        distance = cl.manifold_weights(distance, k_neighbors)

    if backend == "agglomerative":
        k = args.k or _cfg(config, "clustering", "k")
        if not k:
            raise ConfigError("agglomerative backend requires clustering.k")
        result = cl.agglomerative(distance, int(k))
    elif backend == "affinity":
        result = cl.affinity_propagation(
            -distance.D,
            damping=float(_cfg(config, "clustering", "damping", 0.9)),
            max_iter=int(_cfg(config, "clustering", "max_iter", 1000)),
            convergence_iter=int(_cfg(config, "clustering", "convergence_iter", 50)),
        )
    else:
        raise ConfigError(f"unknown clustering backend {backend!r}")

    clusters_path = out / (args.clusters_name or "clusters.jsonl")
    dataio.save_assignments(clusters_path, unseen.tolist(), result.assignment.tolist())
    _write_json(
        out / "clusters_meta.json",
        {
            "backend": backend,
            "variant": variant,
            "manifold": use_manifold,
            "n_runs": n_runs,
            "k": result.k,
            "converged": result.converged,
        },
    )
    print(f"wrote {result.k} clusters over {unseen.size} rows to {clusters_path}")
    return 0


# ---------------------------------------------------------------------------
# evaluate and ranking


def _load_clustering(
    args: argparse.Namespace, config: dict, out: Path, dataset: dataio.EmbeddingDataset
) -> tuple[np.ndarray, cl.Clustering]:
    path = Path(args.clusters) if getattr(args, "clusters", None) else out / "clusters.jsonl"
    indices, raw = dataio.load_assignments(_require_exists(path, "clusters"))
    if indices.size and (indices.min() < 0 or indices.max() >= dataset.n):
        raise DataError(f"{path}: row index out of range for dataset of {dataset.n}")
    _, contiguous = np.unique(raw, return_inverse=True)
    clustering = cl.Clustering(assignment=contiguous, k=int(contiguous.max()) + 1)
    return indices, clustering


def _gold_for(indices: np.ndarray, dataset: dataio.EmbeddingDataset) -> np.ndarray:
    gold = dataset.gold_type_ids[indices]
    if (gold < 0).any():
        missing = indices[gold < 0][:5].tolist()
        raise DataError(f"clustered rows lack gold type labels (e.g. rows {missing})")
    return gold


def _centroids(
    indices: np.ndarray, clustering: cl.Clustering, dataset: dataio.EmbeddingDataset
) -> np.ndarray:
    return cl.cluster_centroids(clustering, dataset.embeddings[indices])


def _write_ranking(out: Path, stem: str, report: evaluation.RankingReport) -> None:
    _write_json(out / f"{stem}.json", report.to_dict())
    payload = report.to_dict()
    del payload["ranks"]
    keys = list(payload)
    with open(out / f"{stem}.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(keys)
        writer.writerow([f"{payload[k]:.6f}" for k in keys])


def _metrics_csv(path: Path, report: evaluation.MetricReport) -> None:
    payload = report.to_dict()
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(evaluation.METRIC_COLUMNS)
        writer.writerow(
            [
                payload[k] if k == "n_clusters" else f"{payload[k]:.6f}"
                for k in evaluation.METRIC_COLUMNS
            ]
        )


def cmd_evaluate(args: argparse.Namespace) -> int:
    config, base = _load_config(args.config)
    out = _output_dir(args, config, base)
    dataset = _load_dataset(config, base)
    indices, clustering = _load_clustering(args, config, out, dataset)
    gold = _gold_for(indices, dataset)

    total_types = _cfg(config, "evaluation", "total_unseen_types")
    report = evaluation.clustering_metrics(
        gold, clustering, int(total_types) if total_types else None
    )
    _write_json(out / "metrics.json", report.to_dict())
    _metrics_csv(out / "metrics.csv", report)
    print(
        f"n_clusters={report.n_clusters} geometric_nmi={report.geometric_nmi:.4f} "
        f"v_measure={report.v_measure:.4f} ari={report.ari:.4f}"
    )

    names = _load_names(config, base)
    frames = _load_frames(config, base)
    if names is not None or frames is not None:
        centroids = _centroids(indices, clustering, dataset)
        labels = evaluation.majority_gold_labels(gold, clustering, dataset.gold_type_names)
        if names is not None:
            _write_ranking(out, "names_ranking", evaluation.rank_names(centroids, names, labels))
        if frames is not None:
            hierarchy, frame_corpus = frames
            transitive = args.transitive or bool(
                _cfg(config, "evaluation", "expand_descendants", False)
            )
            _write_ranking(
                out,
                "frames_ranking",
                evaluation.rank_frames(centroids, frame_corpus, hierarchy, labels, transitive),
            )
    return 0


def cmd_rank_names(args: argparse.Namespace) -> int:
    config, base = _load_config(args.config)
    out = _output_dir(args, config, base)
    dataset = _load_dataset(config, base)
    names = _load_names(config, base)
    if names is None:
        raise ConfigError("config is missing paths.names_embeddings / paths.names_labels")
    indices, clustering = _load_clustering(args, config, out, dataset)
    gold = _gold_for(indices, dataset)
    centroids = _centroids(indices, clustering, dataset)
    labels = evaluation.majority_gold_labels(gold, clustering, dataset.gold_type_names)
    report = evaluation.rank_names(centroids, names, labels)
    _write_ranking(out, "names_ranking", report)
    print(f"names: mean_rank={report.mean_rank:.3f} mrr={report.mrr:.4f}")
    return 0


def cmd_rank_frames(args: argparse.Namespace) -> int:
    config, base = _load_config(args.config)
    out = _output_dir(args, config, base)
    dataset = _load_dataset(config, base)
    frames = _load_frames(config, base)
    if frames is None:
        raise ConfigError("config is missing the frame corpus/hierarchy paths")
    hierarchy, frame_corpus = frames
    indices, clustering = _load_clustering(args, config, out, dataset)
    gold = _gold_for(indices, dataset)
    centroids = _centroids(indices, clustering, dataset)
    labels = evaluation.majority_gold_labels(gold, clustering, dataset.gold_type_names)
    transitive = args.transitive or bool(_cfg(config, "evaluation", "expand_descendants", False))
    report = evaluation.rank_frames(centroids, frame_corpus, hierarchy, labels, transitive)
    _write_ranking(out, "frames_ranking", report)
    print(f"frames: mean_rank={report.mean_rank:.3f} mrr={report.mrr:.4f}")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    config, base = _load_config(args.config)
    out = _output_dir(args, config, base)
    rows = []
    for run_dir in args.runs:
        metrics_path = Path(run_dir) / "metrics.json"
        if not metrics_path.is_file():
            raise ConfigError(f"no metrics.json under run directory: {run_dir}")
        with open(metrics_path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
        rows.append((Path(run_dir).name, payload))

    report_path = out / "report.csv"
    with open(report_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["run", *evaluation.METRIC_COLUMNS])
        for name, payload in rows:
            writer.writerow(
                [name]
                + [
                    payload[k] if k == "n_clusters" else f"{float(payload[k]):.6f}"
                    for k in evaluation.METRIC_COLUMNS
                ]
            )
    print(f"wrote {len(rows)} run(s) to {report_path}")
    return 0


# ---------------------------------------------------------------------------
# Argument parsing


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eventmine",
        description="Semi-supervised event-type induction over embedded mentions",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset plus config")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--seen", type=int, default=10, help="number of seen types")
    p.add_argument("--unseen", type=int, default=23, help="number of unseen types")
    p.add_argument("--per-type", type=int, default=30, dest="per_type")
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--noise", type=float, default=0.1, help="embedding noise sigma")
    p.add_argument("--aug-noise", type=float, default=0.05, dest="aug_noise")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train one run per configured seed")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None, help="train only this seed")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("cluster", help="cluster unseen rows from checkpoints")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", action="append", default=None)
    p.add_argument("--backend", choices=["agglomerative", "affinity"], default=None)
    p.add_argument("--variant", choices=["dot", "cosine", "embedding"], default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--manifold", action="store_true")
    p.add_argument("--k-neighbors", type=int, default=None, dest="k_neighbors")
    p.add_argument("--seed", type=int, default=None, help="use this seed's checkpoint")
    p.add_argument("--clusters-name", default=None, dest="clusters_name")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("evaluate", help="score a clustering against gold types")
    p.add_argument("--config", required=True)
    p.add_argument("--clusters", default=None)
    p.add_argument("--transitive", action="store_true", help="frame validity uses descendants")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("rank-names", help="type-name retrieval for cluster centroids")
    p.add_argument("--config", required=True)
    p.add_argument("--clusters", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_rank_names)

    p = sub.add_parser("rank-frames", help="frame linking for cluster centroids")
    p.add_argument("--config", required=True)
    p.add_argument("--clusters", default=None)
    p.add_argument("--transitive", action="store_true")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_rank_frames)

    p = sub.add_parser("report", help="aggregate run metrics into one CSV")
    p.add_argument("--config", default=None)
    p.add_argument("--runs", nargs="+", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NumericsError as exc:
        print(f"numerics error: {exc}", file=sys.stderr)
        return 3
    except (FormatError, DataError, ConfigError, ContractError, DegenerateBatchError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except EventmineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
