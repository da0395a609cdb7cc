from .catalog import AssetCatalog, build_catalog
from .render import (
    LABEL_NAMES,
    N_LABELS,
    NEUTRAL_EXPRESSION,
    NEUTRAL_POSE,
    Engine,
    Expression,
    Label,
    Layer,
    Pose,
    RenderOutput,
    canonical_vector,
)
from .dataset import Dataset, generate_dataset
from .selfie import N_BACKGROUNDS, SelfieCorruption, background_texture, synth_selfie
