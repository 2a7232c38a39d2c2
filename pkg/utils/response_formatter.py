"""
Response formatting utilities for command output.

Reports are emitted as YAML for reading and as flat tables (pandas) for
plotting. Field names are documented in README.md.
"""

import math
from typing import Any, Dict, Iterable, List

import numpy as np
import pandas as pd
import yaml
from pydantic import BaseModel

import sys
import os
sys.path.append(os.path.dirname(os.path.dirname(__file__)))
from src.models import MetricsReport, SnrReport, TheoryReport


def optimize_for_yaml(data: Any) -> Any:
    """
    Prepare a structure for YAML output: drop null and empty values, unwrap
    pydantic models and numpy scalars, stringify non-string keys.

    Args:
        data: Dictionary, list or model to optimize

    Returns:
        Plain Python structure safe for yaml.safe_dump
    """
    def clean(obj):
        if isinstance(obj, BaseModel):
            return clean(obj.model_dump())
        if isinstance(obj, dict):
            cleaned = {}
            for key, value in obj.items():
                cleaned_value = clean(value)
                if cleaned_value is not None and cleaned_value != [] and cleaned_value != {}:
                    cleaned[key if isinstance(key, str) else str(key)] = cleaned_value
            return cleaned
        if isinstance(obj, (list, tuple)):
            return [clean(item) for item in obj if item is not None]
        if isinstance(obj, np.generic):
            return obj.item()
        if isinstance(obj, np.ndarray):
            return obj.tolist()
        return obj

    return clean(data)


def to_yaml(data: Any) -> str:
    """Dump a report or dictionary as block-style YAML"""
    return yaml.safe_dump(
        optimize_for_yaml(data),
        default_flow_style=False,
        sort_keys=False,
        width=120,
        allow_unicode=True,
    )


def metrics_summary(reports: Iterable[MetricsReport]) -> Dict[str, Any]:
    """Compact view -> {recall@k, ndcg@k} mapping for console output"""
    summary = {}
    for report in reports:
        entry = {}
        for k, value in report.recall.items():
            entry[f"recall@{k}"] = round(value, 6)
            entry[f"ndcg@{k}"] = round(report.ndcg.get(k, 0.0), 6)
        if report.beta is not None:
            entry["beta"] = report.beta
        summary[report.label] = entry
    return summary


def bucket_table(reports: Iterable[MetricsReport]) -> pd.DataFrame:
    """
    One row per (view, bucket, k) with recall, ndcg, hits, test_items,
    users and share_of_recommendations. The bucket "overall" carries the
    unrestricted metrics.
    """
    rows: List[Dict[str, Any]] = []
    for report in reports:
        for k in sorted(report.recall):
            rows.append({
                "view": report.label,
                "bucket": "overall",
                "k": k,
                "recall": report.recall[k],
                "ndcg": report.ndcg.get(k, 0.0),
                "hits": report.hits.get(k, 0),
                "test_items": report.test_items,
                "users": report.users,
                "share_of_recommendations": 1.0,
            })
            for bucket, metrics in report.per_bucket.items():
                rows.append({
                    "view": report.label,
                    "bucket": bucket,
                    "k": k,
                    "recall": metrics.recall.get(k, 0.0),
                    "ndcg": metrics.ndcg.get(k, 0.0),
                    "hits": metrics.hits.get(k, 0),
                    "test_items": metrics.test_items,
                    "users": metrics.users,
                    "share_of_recommendations": metrics.share_of_recommendations.get(k, 0.0),
                })
    columns = ["view", "bucket", "k", "recall", "ndcg", "hits", "test_items", "users", "share_of_recommendations"]
    return pd.DataFrame(rows, columns=columns)


def snr_table(report: SnrReport) -> pd.DataFrame:
    """One row per (view, bucket) with snr, mean, std, count and zero_variance"""
    rows = [
        {"view": view, "bucket": bucket, **stats.model_dump()}
        for view, by_bucket in report.views.items()
        for bucket, stats in by_bucket.items()
    ]
    return pd.DataFrame(rows, columns=["view", "bucket", "snr", "mean", "std", "count", "zero_variance"])


def snr_summary(report: SnrReport) -> Dict[str, Any]:
    summary: Dict[str, Any] = {
        view: {bucket: (round(s.snr, 4) if math.isfinite(s.snr) else "inf") for bucket, s in by_bucket.items()}
        for view, by_bucket in report.views.items()
    }
    if report.rho is not None:
        summary["rho"] = round(report.rho, 4)
    if report.beta is not None:
        summary["beta"] = report.beta
    return summary


def theory_summary(report: TheoryReport) -> Dict[str, Any]:
    """Pass/fail per check plus totals"""
    return {
        "passed": report.passed,
        "checks": {check.name: "pass" if check.passed else "FAIL" for check in report.checks},
        "runtime_seconds": round(report.runtime_seconds, 2),
    }
