"""Pipeline orchestration, metrics and ablation runners."""
from .ablation import LOSS_ARMS, ablate_losses, ablate_pipeline, compare_relaxation, per_attribute_dominance
from . import contracts
from .frechet import MIN_IMAGES, feature_stats, frechet_distance, stats_distance
from .metrics import recovery_metrics
from .pipeline import STAGES, PipelineEntry, PipelineReport, evaluate, run_pipeline, run_pipeline_batch, summarize
from .sheets import contact_sheet, write_stage_sheet
from .system import ArtifactCache, Builder, System, build_system, default_cache_dir
