from .identity import (
    REGION_NAMES,
    REGION_PALETTE,
    SyntheticIdentity,
    generate_identity,
    region_map_for_head,
)
from .views import LitView, builtin_rigs, render_lit_views
from .dataset import Dataset, export_dataset, load_dataset

__all__ = [
    "REGION_NAMES",
    "REGION_PALETTE",
    "SyntheticIdentity",
    "generate_identity",
    "region_map_for_head",
    "LitView",
    "builtin_rigs",
    "render_lit_views",
    "Dataset",
    "export_dataset",
    "load_dataset",
]
