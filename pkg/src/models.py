"""
Data models, configuration classes and the error hierarchy for the SaD engine.
"""

from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, Field, field_validator, model_validator


# =============================================================================
# Errors
# =============================================================================

class SadError(Exception):
    """Base error with context and the process exit code it maps to"""
    exit_code = 1

    def __init__(self, message: str, stage: str = None):
        super().__init__(message)
        self.stage = stage


class ConfigError(SadError):
    """Invalid configuration, override or search set"""
    exit_code = 1


class DataError(SadError):
    """Input data or artifact problem"""
    exit_code = 2


class ParseError(DataError):
    """Malformed line in an input file"""

    def __init__(self, message: str, path: str = None, line_number: int = None):
        location = f"{path}:{line_number}: " if path and line_number else ""
        super().__init__(f"{location}{message}")
        self.path = path
        self.line_number = line_number


class SplitError(DataError):
    """Train/test split violates the dataset invariants"""


class DuplicateEntry(DataError, ValueError):
    """The same (user, item) pair was given twice"""


class ShapeError(DataError, ValueError):
    """Operands have incompatible dimensions"""


class DisjointnessError(DataError):
    """Pseudo-positives overlap observed interactions"""


class EmptyInput(DataError):
    """An operation received an empty matrix it cannot work with"""


class DegreeError(DataError):
    """An observed pair has a zero user or item degree"""


class ArtifactMissing(DataError):
    """A stage input is not on disk yet"""

    def __init__(self, path: str, producer: str):
        super().__init__(f"Missing artifact '{path}'. Run the '{producer}' subcommand first.")
        self.path = path
        self.producer = producer


class DownloadError(DataError):
    """Fetching a published split failed"""


class NumericError(SadError):
    """Non-finite values or a diverging optimizer"""
    exit_code = 3


class CorrelationUndefined(NumericError):
    """Pearson correlation of a constant series"""


class DegenerateBlend(NumericError):
    """Fused margin variance is zero"""


class SingularCorrelation(NumericError):
    """Fusion envelope requested at |rho| = 1"""


class PreconditionError(NumericError):
    """Arguments outside the domain of a closed-form expression"""


class VerificationFailed(SadError):
    """One or more theory checks failed"""
    exit_code = 4


class StageFailed(SadError):
    """A pipeline stage aborted; wraps the underlying error"""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"Stage '{stage}' failed: {cause}", stage=stage)
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)


# =============================================================================
# Stage configuration
# =============================================================================

class SlimConfig(BaseModel):
    """Elastic-net item-item model settings"""
    l1: float = Field(1e-3, ge=0, description="L1 penalty (lambda_1)")
    l2: float = Field(1e-3, ge=0, description="L2 penalty (lambda_2)")
    max_iters: int = Field(100, ge=1, description="Coordinate-descent sweeps per column")
    tol: float = Field(1e-4, gt=0, description="Stop when max |delta s| falls below this")
    nonnegative: bool = Field(False, description="Clip coefficients at zero")
    topk_cap: Optional[int] = Field(100, ge=1, description="Largest-magnitude entries kept per column")
    gram_budget_mb: float = Field(1024.0, gt=0, description="Precompute R^T R when it fits")

    @model_validator(mode="after")
    def _require_regularization(self) -> "SlimConfig":
        if self.l1 + self.l2 <= 0:
            raise ValueError("l1 + l2 must be positive")
        return self


class MfConfig(BaseModel):
    """Matrix factorization trainer settings"""
    dim: int = Field(64, gt=0, description="Embedding size")
    lr: float = Field(1e-3, gt=0, description="Learning rate")
    batch_size: int = Field(1024, gt=0)
    l2_reg: float = Field(1e-4, ge=0)
    epochs: int = Field(50, ge=1)
    neg_per_pos: int = Field(1, ge=1)
    alpha: float = Field(1.0, ge=0, description="Additive term of the degree weight")
    seed: int = 2024
    optimizer: Literal["sgd", "adam"] = "sgd"
    patience: int = Field(10, ge=1, description="Early-stopping patience in epochs")


class AlignConfig(BaseModel):
    """Cross-view alignment settings"""
    k: Optional[int] = Field(None, ge=0, description="Shorthand that sets k_user, k_item and k_d2s")
    k_user: int = Field(10, ge=0)
    k_item: int = Field(10, ge=0)
    k_d2s: int = Field(10, ge=0)
    lambda_conf: float = Field(0.5, ge=0, le=1, description="Confidence weight of pseudo-positives")
    target_pseudo_ratio: Optional[float] = Field(None, gt=0, lt=1)
    k_search: List[int] = Field(default_factory=lambda: [0, 5, 10, 15, 20, 25, 30, 50])

    @model_validator(mode="after")
    def _apply_shorthand(self) -> "AlignConfig":
        if self.k is not None:
            self.k_user = self.k_item = self.k_d2s = self.k
        return self

    @field_validator("k_search")
    @classmethod
    def _nonnegative_search(cls, values: List[int]) -> List[int]:
        if any(v < 0 for v in values):
            raise ValueError("k_search values must be >= 0")
        return sorted(set(values))


class FusionConfig(BaseModel):
    """Late fusion weight and its search set"""
    beta: float = Field(10.0, ge=0, description="Weight on the sparse score")
    beta_search: List[float] = Field(
        default_factory=lambda: [1, 3, 5, 10, 15, 20, 50, 100, 200, 1e3, 1e4]
    )

    @field_validator("beta_search")
    @classmethod
    def _nonnegative_betas(cls, values: List[float]) -> List[float]:
        if any(v < 0 for v in values):
            raise ValueError("beta_search values must be >= 0")
        return values


class EvalConfig(BaseModel):
    """Ranking and SNR evaluation settings"""
    ks: List[int] = Field(default_factory=lambda: [20])
    tune_k: int = Field(20, gt=0, description="Cutoff used to pick beta")
    k_neg: int = Field(100, ge=2, description="Negatives sampled per test positive")
    snr: bool = True


class DataConfig(BaseModel):
    """Dataset location and format"""
    name: str = "dataset"
    train_path: str
    test_path: str
    validation_path: Optional[str] = None
    format: Literal["adjacency", "triplet"] = "adjacency"
    rating_threshold: Optional[float] = None


class StageToggles(BaseModel):
    """Alignment switches used for the ablation variants"""
    s2d: bool = True
    d2s: bool = True


class PipelineConfig(BaseModel):
    """Full run configuration, one section per stage"""
    data: DataConfig
    slim: SlimConfig = Field(default_factory=SlimConfig)
    mf: MfConfig = Field(default_factory=MfConfig)
    align: AlignConfig = Field(default_factory=AlignConfig)
    fusion: FusionConfig = Field(default_factory=FusionConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)
    stages: StageToggles = Field(default_factory=StageToggles)
    out_dir: str = "runs/default"
    seed: int = 2024
    threads: int = Field(1, ge=1)


# =============================================================================
# Reports
# =============================================================================

class BucketMetrics(BaseModel):
    """Ranking metrics restricted to the test items of one popularity bucket"""
    recall: Dict[int, float] = Field(default_factory=dict)
    ndcg: Dict[int, float] = Field(default_factory=dict)
    hits: Dict[int, int] = Field(default_factory=dict)
    test_items: int = 0
    users: int = 0
    share_of_recommendations: Dict[int, float] = Field(default_factory=dict)


class MetricsReport(BaseModel):
    """All-items ranking metrics for one scorer"""
    label: str = "model"
    split: str = "test"
    recall: Dict[int, float] = Field(default_factory=dict)
    ndcg: Dict[int, float] = Field(default_factory=dict)
    hits: Dict[int, int] = Field(default_factory=dict)
    test_items: int = 0
    users: int = 0
    per_bucket: Dict[str, BucketMetrics] = Field(default_factory=dict)
    beta: Optional[float] = None
    config: Dict[str, Any] = Field(default_factory=dict)
    runtime_seconds: float = 0.0


class ViewSnr(BaseModel):
    """Margin statistics of one view within one bucket"""
    snr: float
    mean: float
    std: float
    count: int
    zero_variance: bool = False


class SnrReport(BaseModel):
    """Per-bucket SNR per view plus cross-view margin correlation"""
    views: Dict[str, Dict[str, ViewSnr]] = Field(default_factory=dict)
    rho: Optional[float] = None
    rho_views: Optional[List[str]] = None
    k_neg: int = 100
    seed: int = 0
    beta: Optional[float] = None


class CheckResult(BaseModel):
    """Outcome of one theory verification"""
    name: str
    passed: bool
    details: Dict[str, Any] = Field(default_factory=dict)


class TheoryReport(BaseModel):
    """Collection of theory verifications"""
    checks: List[CheckResult] = Field(default_factory=list)
    seed: int = 0
    runtime_seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)
