"""
End-to-end run orchestration.

A run directory holds one artifact per stage:

    data/train.tsv, data/test.tsv          train-sparse (with id maps)
    sparse/similarity.bin                  train-sparse
    align/r_hat.tsv                        align-s2d
    dense/embeddings.bin                   train-dense
    align/r_prime.tsv                      align-d2s
    sparse/similarity_refined.bin          align-d2s
    metrics.yaml, buckets.csv              fuse-eval
    snr.yaml, snr.csv                      snr-report
    manifest.yaml                          every stage

Each stage reads its inputs from disk (or from the in-memory cache of the
current process), so any stage can be rerun on its own.
"""

import itertools
import json
import logging
import shutil
import time
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import pandas as pd
from rich.progress import Progress

from utils.artifact_utils import (
    read_embeddings,
    read_id_map,
    read_interactions,
    read_similarity,
    read_yaml,
    sha256_file,
    write_embeddings,
    write_id_map,
    write_interactions,
    write_similarity,
    write_yaml,
)
from utils.param_utils import config_hash, parse_override
from utils.response_formatter import bucket_table, optimize_for_yaml, snr_table

from .alignment import (
    augment_dense_input,
    choose_k_for_ratio,
    d2s_augment,
    pseudo_stats,
    realign_sparse,
    s2d_pseudo_positives,
)
from .dataset import Dataset, degrees, load_dataset, popularity_buckets
from .evaluation import beta_search, evaluate, fused_scorer, snr_estimate
from .matrix import EmbeddingTable, InteractionMatrix, SimilarityMatrix
from .mf import TrainingHistory, dense_scorer, train_mf
from .models import (
    ArtifactMissing,
    ConfigError,
    DataError,
    MetricsReport,
    PipelineConfig,
    SadError,
    SnrReport,
    StageFailed,
)
from .slim import fit_slim, sparse_scorer

logger = logging.getLogger(__name__)

STAGES = ("train-sparse", "align-s2d", "train-dense", "align-d2s", "fuse-eval", "snr-report")

ID_MAPS = {"user_ids": "data/user_ids.tsv", "item_ids": "data/item_ids.tsv"}


@dataclass(frozen=True)
class Artifact:
    path: str
    producer: str


ARTIFACTS = {
    "train": Artifact("data/train.tsv", "train-sparse"),
    "test": Artifact("data/test.tsv", "train-sparse"),
    "similarity": Artifact("sparse/similarity.bin", "train-sparse"),
    "r_hat": Artifact("align/r_hat.tsv", "align-s2d"),
    "embeddings": Artifact("dense/embeddings.bin", "train-dense"),
    "r_prime": Artifact("align/r_prime.tsv", "align-d2s"),
    "similarity_refined": Artifact("sparse/similarity_refined.bin", "align-d2s"),
    "metrics": Artifact("metrics.yaml", "fuse-eval"),
    "buckets": Artifact("buckets.csv", "fuse-eval"),
    "snr": Artifact("snr.yaml", "snr-report"),
    "snr_table": Artifact("snr.csv", "snr-report"),
}

_READERS: Dict[str, Callable[[Path], Any]] = {
    "train": read_interactions,
    "test": read_interactions,
    "similarity": read_similarity,
    "r_hat": read_interactions,
    "embeddings": read_embeddings,
    "r_prime": read_interactions,
    "similarity_refined": read_similarity,
    "metrics": read_yaml,
}


@dataclass
class PipelineResult:
    """Reports produced by a full run"""
    metrics: Dict[str, MetricsReport]
    snr: Optional[SnrReport]
    beta: float
    out_dir: Path

    @property
    def fused(self) -> MetricsReport:
        return self.metrics["fused"]


class Pipeline:
    """
    Stage runner bound to one configuration and run directory.

    Args:
        cfg: Validated run configuration
        dataset: Preloaded dataset (loaded from cfg.data on first use otherwise)
        show_progress: Render rich progress bars for long loops
    """

    def __init__(self, cfg: PipelineConfig, dataset: Optional[Dataset] = None, show_progress: bool = False):
        self.cfg = cfg
        self.out_dir = Path(cfg.out_dir)
        self.show_progress = show_progress
        self._dataset = dataset
        self._cache: Dict[str, Any] = {}
        self._ids_checked = False

    # -------------------------------------------------------------------------
    # Inputs and artifacts
    # -------------------------------------------------------------------------

    @property
    def dataset(self) -> Dataset:
        if self._dataset is None:
            data = self.cfg.data
            self._dataset = load_dataset(data.train_path, data.test_path, data.format, data.validation_path,
                                         data.rating_threshold, data.name)
        return self._dataset

    def path(self, key: str) -> Path:
        return self.out_dir / ARTIFACTS[key].path

    def load(self, key: str) -> Any:
        """
        Artifact by key, from memory when this process produced it.

        Raises:
            ArtifactMissing: If the file does not exist yet
        """
        if key in self._cache:
            return self._cache[key]
        path = self.path(key)
        if not path.exists():
            raise ArtifactMissing(str(path), ARTIFACTS[key].producer)
        value = _READERS[key](path)
        self._cache[key] = value
        return value

    def save(self, key: str, value: Any, record: Dict[str, Any]) -> Path:
        path = self.path(key)
        if isinstance(value, InteractionMatrix):
            write_interactions(path, value)
        elif isinstance(value, SimilarityMatrix):
            write_similarity(path, value)
        elif isinstance(value, EmbeddingTable):
            write_embeddings(path, value)
        elif isinstance(value, pd.DataFrame):
            path.parent.mkdir(parents=True, exist_ok=True)
            value.to_csv(path, index=False, float_format="%.10g", lineterminator="\n")
        else:
            write_yaml(path, optimize_for_yaml(value))
        self._cache[key] = value
        record.setdefault("artifacts", {})[ARTIFACTS[key].path] = sha256_file(path)
        return path

    # -------------------------------------------------------------------------
    # Manifest and stage bookkeeping
    # -------------------------------------------------------------------------

    @property
    def manifest_path(self) -> Path:
        return self.out_dir / "manifest.yaml"

    def _check_id_maps(self) -> None:
        """
        Resumed stages must index users and items the way train-sparse did.

        Raises:
            DataError: If a saved id map disagrees with the loaded dataset
        """
        if self._ids_checked:
            return
        dataset = self.dataset
        for name, relative in ID_MAPS.items():
            path = self.out_dir / relative
            if path.exists() and read_id_map(path) != getattr(dataset, name):
                raise DataError(f"{path} does not match dataset '{dataset.name}'. "
                                f"The input files changed since train-sparse; rerun it.")
        self._ids_checked = True

    def _update_manifest(self, stage: str, record: Dict[str, Any]) -> None:
        manifest = read_yaml(self.manifest_path)
        manifest["config_hash"] = config_hash(self.cfg)
        manifest["seed"] = self.cfg.seed
        manifest["config"] = self.cfg.model_dump(mode="json")
        stages = manifest.setdefault("stages", {})
        stages[stage] = optimize_for_yaml(record)
        manifest["stages"] = {name: stages[name] for name in STAGES if name in stages}
        write_yaml(self.manifest_path, manifest)

    @contextmanager
    def stage(self, name: str) -> Iterator[Dict[str, Any]]:
        """
        Time a stage, record it in the manifest and wrap failures in
        StageFailed. Artifacts saved before a failure stay on disk.
        """
        logger.info(f"Stage {name} started")
        started = time.time()
        record: Dict[str, Any] = {}
        try:
            if name != "train-sparse":
                self._check_id_maps()
            yield record
        except StageFailed:
            raise
        except SadError as e:
            logger.error(f"Stage {name} failed: {e}")
            raise StageFailed(name, e) from e
        except Exception as e:
            logger.exception(f"Stage {name} failed unexpectedly")
            raise StageFailed(name, e) from e
        record["seconds"] = round(time.time() - started, 3)
        self._update_manifest(name, record)
        logger.info(f"Stage {name} finished in {record['seconds']:.1f}s")

    @contextmanager
    def _progress(self, description: str, total: int) -> Iterator[Optional[Callable[[int], None]]]:
        if not self.show_progress:
            yield None
            return
        with Progress(transient=True) as progress:
            task = progress.add_task(description, total=total)
            yield lambda done: progress.update(task, completed=done)

    # -------------------------------------------------------------------------
    # Stages
    # -------------------------------------------------------------------------

    def train_sparse(self) -> SimilarityMatrix:
        with self.stage("train-sparse") as record:
            dataset = self.dataset
            self.save("train", dataset.train, record)
            self.save("test", dataset.test, record)
            if dataset.user_ids:
                for name, relative in ID_MAPS.items():
                    write_id_map(self.out_dir / relative, getattr(dataset, name))
            record["dataset"] = dataset.statistics()

            slim_cfg = self.cfg.slim
            threads = self.cfg.threads
            with self._progress("Item-item columns", dataset.n_items) as progress:
                S = fit_slim(dataset.train, slim_cfg, threads=threads, progress=progress)
            self.save("similarity", S, record)
            record["similarity_nnz"] = S.nnz
        return S

    def align_s2d(self) -> InteractionMatrix:
        with self.stage("align-s2d") as record:
            train = self.dataset.train
            align_cfg = self.cfg.align.model_copy()
            if not self.cfg.stages.s2d:
                R_hat = train
                record["enabled"] = False
            else:
                S = self.load("similarity")
                scorer = sparse_scorer(train, S)
                if align_cfg.target_pseudo_ratio is not None:
                    k, ratio = choose_k_for_ratio(scorer, train, align_cfg.k_search,
                                                  align_cfg.target_pseudo_ratio, self.cfg.threads)
                    align_cfg.k_user = align_cfg.k_item = k
                    record["target_pseudo_ratio"] = align_cfg.target_pseudo_ratio
                R_star = s2d_pseudo_positives(scorer, train, align_cfg, self.cfg.threads)
                R_hat = augment_dense_input(train, R_star, align_cfg.lambda_conf)
                record.update({"enabled": True, "k_user": align_cfg.k_user, "k_item": align_cfg.k_item,
                               "lambda_conf": align_cfg.lambda_conf})
            stats = pseudo_stats(R_hat)
            record["pseudo"] = stats
            logger.info(f"R_hat: {stats['entries']} entries, pseudo fraction {stats['pseudo_fraction']:.4f}")
            self.save("r_hat", R_hat, record)
        return R_hat

    def train_dense(self) -> EmbeddingTable:
        with self.stage("train-dense") as record:
            R_hat = self.load("r_hat")
            dataset = self.dataset
            D = degrees(R_hat)

            validate = None
            if dataset.validation is not None:
                tune_k = self.cfg.eval.tune_k

                def validate(table: EmbeddingTable) -> float:
                    report = evaluate(dataset, dense_scorer(table), None, [tune_k], "validation", "dense")
                    return report.recall[tune_k]

            history = TrainingHistory([], [], 0)
            E = train_mf(R_hat, self.cfg.mf, D, validate=validate, history=history)
            self.save("embeddings", E, record)
            record.update({"epochs": len(history.losses), "best_epoch": history.best_epoch,
                           "final_loss": history.losses[-1] if history.losses else None})
        return E

    def align_d2s(self) -> Tuple[InteractionMatrix, SimilarityMatrix]:
        with self.stage("align-d2s") as record:
            train = self.dataset.train
            if not self.cfg.stages.d2s:
                R_prime = train
                S_prime = self.load("similarity")
                record["enabled"] = False
            else:
                E = self.load("embeddings")
                k = self.cfg.align.k_d2s
                R_prime = d2s_augment(dense_scorer(E), train, k, self.cfg.threads)
                S_prime, _ = realign_sparse(R_prime, self.cfg.slim, self.cfg.threads)
                record.update({"enabled": True, "k_d2s": k})
            record["pseudo"] = pseudo_stats(R_prime)
            self.save("r_prime", R_prime, record)
            self.save("similarity_refined", S_prime, record)
        return R_prime, S_prime

    def _view_labels(self) -> Tuple[str, str]:
        """Names of the dense and sparse views that enter the fusion"""
        dense = "dense_refined" if self.cfg.stages.s2d else "dense"
        sparse = "sparse_refined" if self.cfg.stages.d2s else "sparse"
        return dense, sparse

    def _scorers(self) -> Dict[str, Callable]:
        train = self.dataset.train
        E = self.load("embeddings")
        R_prime = self.load("r_prime")
        S_prime = self.load("similarity_refined")
        return {
            "dense": dense_scorer(E),
            "sparse": sparse_scorer(train, self.load("similarity")),
            "sparse_refined": sparse_scorer(R_prime, S_prime),
        }

    def fuse_eval(self) -> Tuple[float, Dict[str, MetricsReport]]:
        with self.stage("fuse-eval") as record:
            dataset = self.dataset
            buckets = popularity_buckets(dataset.train)
            ks = self.cfg.eval.ks
            scorers = self._scorers()
            dense_label, _ = self._view_labels()

            reports = {
                dense_label: evaluate(dataset, scorers["dense"], buckets, ks, label=dense_label),
                "sparse": evaluate(dataset, scorers["sparse"], buckets, ks, label="sparse"),
            }
            if self.cfg.stages.d2s:
                reports["sparse_refined"] = evaluate(dataset, scorers["sparse_refined"], buckets, ks,
                                                     label="sparse_refined")
            if not self.cfg.stages.s2d and not self.cfg.stages.d2s:
                ensemble = evaluate(dataset, fused_scorer(scorers["dense"], scorers["sparse"], 1.0), buckets, ks,
                                    label="ensemble")
                ensemble.beta = 1.0
                reports["ensemble"] = ensemble

            beta, fused = beta_search(dataset, scorers["dense"], scorers["sparse_refined"],
                                      self.cfg.fusion.beta_search, self.cfg.eval.tune_k, buckets, ks, "fused")
            reports["fused"] = fused
            for report in reports.values():
                report.config = {"config_hash": config_hash(self.cfg)}

            self.save("metrics", {"beta": beta, "bucket_sizes": buckets.sizes(),
                                  "views": {label: r.model_dump(mode="json", exclude={"runtime_seconds"})
                                            for label, r in reports.items()}},
                      record)
            self.save("buckets", bucket_table(reports.values()), record)
            record["beta"] = beta
            record["recall"] = {label: r.recall for label, r in reports.items()}
        return beta, reports

    def snr_report(self, beta: Optional[float] = None) -> SnrReport:
        with self.stage("snr-report") as record:
            if beta is None:
                try:
                    beta = float(self.load("metrics")["beta"])
                except ArtifactMissing:
                    beta = self.cfg.fusion.beta
                    logger.warning(f"No fuse-eval results; SNR of the fused view uses beta={beta:g}")
            scorers = self._scorers()
            dense_label, sparse_label = self._view_labels()
            views = {
                dense_label: scorers["dense"],
                sparse_label: scorers["sparse_refined"],
                "fused": fused_scorer(scorers["dense"], scorers["sparse_refined"], beta),
            }
            buckets = popularity_buckets(self.dataset.train)
            report = snr_estimate(views, self.dataset, buckets, self.cfg.eval.k_neg, self.cfg.seed,
                                  rho_views=(dense_label, sparse_label), beta=beta)
            self.save("snr", report.model_dump(), record)
            self.save("snr_table", snr_table(report), record)
            record["rho"] = report.rho
        return report

    def run(self, start: Optional[str] = None) -> PipelineResult:
        """
        Run every stage in order, or resume from `start` using the
        artifacts already on disk.
        """
        if start is not None and start not in STAGES:
            raise ConfigError(f"Unknown stage '{start}'. Stages: {', '.join(STAGES)}")
        first = STAGES.index(start) if start else 0
        logger.info(f"Running {', '.join(STAGES[first:])} into {self.out_dir}")

        steps = {
            "train-sparse": self.train_sparse,
            "align-s2d": self.align_s2d,
            "train-dense": self.train_dense,
            "align-d2s": self.align_d2s,
        }
        for name in STAGES[first:4]:
            steps[name]()

        if first <= STAGES.index("fuse-eval"):
            beta, reports = self.fuse_eval()
        else:
            beta = float(self.load("metrics")["beta"])
            reports = {}
        snr = self.snr_report(beta) if self.cfg.eval.snr else None
        return PipelineResult(reports, snr, beta, self.out_dir)


def run_pipeline(cfg: PipelineConfig, dataset: Optional[Dataset] = None, show_progress: bool = False,
                 start: Optional[str] = None) -> PipelineResult:
    """Execute the full alignment pipeline for one configuration"""
    return Pipeline(cfg, dataset, show_progress).run(start)


# =============================================================================
# Sweeps
# =============================================================================

def parse_grid(specs: Sequence[str]) -> Dict[str, List[Any]]:
    """
    "align.k=0,5,10" -> {"align.k": [0, 5, 10]}

    Raises:
        ConfigError: If an entry is malformed or lists no values
    """
    grid: Dict[str, List[Any]] = {}
    for entry in specs:
        keys, value = parse_override(entry)
        values = value if isinstance(value, list) else [value]
        if not values:
            raise ConfigError(f"Grid entry '{entry}' has no values")
        grid[".".join(keys)] = values
    return grid


def _set_dotted(data: Dict[str, Any], values: Dict[str, Any]) -> Dict[str, Any]:
    result = json.loads(json.dumps(data))
    for key, value in values.items():
        node = result
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    return result


def sweep(cfg: PipelineConfig, grid: Dict[str, List[Any]], dataset: Optional[Dataset] = None) -> pd.DataFrame:
    """
    Run the pipeline once per grid point into <out_dir>/sweep/<index>.

    The item-item model does not depend on alignment or fusion settings, so
    when the grid leaves `slim` and `data` untouched it is fitted once and
    copied into every run.

    Returns:
        One row per grid point with the fused recall/ndcg at every cutoff
        and the chosen beta; also written to sweep.csv with a YAML summary
    """
    if not grid:
        raise ConfigError("Sweep grid is empty")
    root = Path(cfg.out_dir)
    base = cfg.model_dump(mode="json")
    keys = list(grid)
    points = list(itertools.product(*(grid[k] for k in keys)))
    shared_sparse = not any(k.split(".")[0] in ("slim", "data", "seed") for k in keys)

    pipeline = Pipeline(cfg, dataset)
    dataset = pipeline.dataset
    if shared_sparse:
        shared = Pipeline(cfg.model_copy(update={"out_dir": str(root / "sweep" / "shared")}), dataset)
        shared.train_sparse()

    rows = []
    for index, values in enumerate(points):
        overrides = [f"{k}={v}" for k, v in zip(keys, values)]
        data = _set_dotted(base, dict(zip(keys, values)))
        data["out_dir"] = str(root / "sweep" / f"{index:03d}")
        point_cfg = PipelineConfig.model_validate(data)
        logger.info(f"Sweep point {index + 1}/{len(points)}: {', '.join(overrides)}")

        start = None
        if shared_sparse:
            for key in ("train", "test", "similarity"):
                target = Path(point_cfg.out_dir) / ARTIFACTS[key].path
                target.parent.mkdir(parents=True, exist_ok=True)
                shutil.copyfile(shared.path(key), target)
            start = "align-s2d"
        result = run_pipeline(point_cfg.model_copy(update={"eval": point_cfg.eval.model_copy(update={"snr": False})}),
                              dataset, start=start)

        row: Dict[str, Any] = dict(zip(keys, values))
        row["run"] = f"{index:03d}"
        row["beta"] = result.beta
        for k in point_cfg.eval.ks:
            row[f"recall@{k}"] = result.fused.recall[k]
            row[f"ndcg@{k}"] = result.fused.ndcg[k]
        rows.append(row)

    table = pd.DataFrame(rows)
    table.to_csv(root / "sweep.csv", index=False, float_format="%.10g", lineterminator="\n")
    metric = f"recall@{cfg.eval.tune_k}" if f"recall@{cfg.eval.tune_k}" in table else f"recall@{cfg.eval.ks[0]}"
    best = table.loc[table[metric].idxmax()].to_dict()
    write_yaml(root / "sweep_summary.yaml", optimize_for_yaml({"metric": metric, "points": len(rows), "best": best}))
    logger.info(f"Best sweep point by {metric}: {best}")
    return table
