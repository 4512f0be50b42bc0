"""Forward-pass-only structured pruning for small decoder transformers.

Prunes whole attention heads and FFN intermediate dimensions: sample
masked sub-models around a prior, score each with plain forward passes,
regress utility onto mask bits, and greedily keep the most relevant
modules under a parameter budget. The pruned model is physically sliced,
so it is genuinely smaller and faster, not just masked.
"""

from .catalog import (
    FFN,
    HEAD,
    ModuleCatalog,
    ModuleId,
    SubModelMask,
    budget,
    enumerate_modules,
    mask_complement,
)
from .checkpoint import load, save
from .errors import (
    BonsaiError,
    ConfigError,
    FormatError,
    InputError,
    NumericError,
    StructuralError,
)
from .harness import (
    Corpus,
    LatencyReport,
    UtilityReport,
    bench,
    corpus_load,
    corpus_save,
    corpus_synthesize,
    utility,
)
from .model import (
    ActivationTrace,
    LayerWeights,
    ModelBundle,
    ModelConfig,
    forward,
    random_model,
    slice_model,
)
from .priors import (
    METRIC_ACT_MAGNITUDE,
    METRIC_UNIFORM,
    METRIC_WANDA,
    PriorScores,
    compute_priors,
    prior_act_magnitude,
    prior_uniform,
    prior_wanda,
)
from .pruner import (
    IterationRecord,
    PruneConfig,
    bonsai_run,
    final_keep_original,
    greedy_select,
    schedule,
)
from .regression import (
    EvalDataset,
    RegressionGrid,
    RelevanceScores,
    cross_validate,
    fit,
    kendall_tau,
)
from .reports import build_manifest, manifest_to_json, report_emit, scrub_timing
from .sampler import (
    CandidatePlan,
    build_batch,
    plan_candidates,
    sample_mask,
)

__version__ = "0.1.0"

__all__ = [
    "ActivationTrace", "BonsaiError", "CandidatePlan", "ConfigError", "Corpus",
    "EvalDataset", "FFN", "FormatError", "HEAD", "InputError", "IterationRecord",
    "LatencyReport", "LayerWeights", "METRIC_ACT_MAGNITUDE", "METRIC_UNIFORM",
    "METRIC_WANDA", "ModelBundle", "ModelConfig", "ModuleCatalog", "ModuleId",
    "NumericError", "PriorScores", "PruneConfig", "RegressionGrid",
    "RelevanceScores", "StructuralError", "SubModelMask", "UtilityReport",
    "bench", "bonsai_run", "budget", "build_batch", "build_manifest",
    "compute_priors", "corpus_load", "corpus_save", "corpus_synthesize",
    "cross_validate", "enumerate_modules", "final_keep_original", "fit",
    "forward", "greedy_select", "kendall_tau", "load", "manifest_to_json",
    "mask_complement", "plan_candidates", "prior_act_magnitude",
    "prior_uniform", "prior_wanda", "random_model", "report_emit",
    "sample_mask", "save", "schedule", "scrub_timing", "slice_model",
    "utility",
]
