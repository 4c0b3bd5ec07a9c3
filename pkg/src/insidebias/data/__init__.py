"""Datasets: IDX ingestion, colour-biased MNIST, grouped protocols, manifests."""
from .colored import COLORS, ColorBiasConfig, assign_colors, colorize
from .dataset import GroupedDataset, assert_disjoint, concat, partition
from .idx import load_idx, load_idx_images, load_idx_labels, write_idx
from .manifest import read_manifest, write_manifest
from .protocol import BIASED_FRACTIONS, build_group_protocol, group_counts
from .synthetic import SyntheticConfig, generate_grouped, subject_id

__all__ = [
    "BIASED_FRACTIONS", "COLORS", "ColorBiasConfig", "GroupedDataset", "SyntheticConfig", "assert_disjoint",
    "assign_colors", "build_group_protocol", "colorize", "concat", "generate_grouped", "group_counts",
    "load_idx", "load_idx_images", "load_idx_labels", "partition", "read_manifest", "subject_id", "write_idx",
    "write_manifest",
]
