"""Files, datasets, synthetic data and rendering."""

from .manifest import Entry, Manifest, assign_splits, compute_normalization, load_manifest, split_counts
from .normalize import denormalize, normalize
from .smf import read_smf, write_smf
from .synth import roughness, synth_dataset, synth_map
from .viz import project_png, render

__all__ = [
    "Entry",
    "Manifest",
    "assign_splits",
    "compute_normalization",
    "denormalize",
    "load_manifest",
    "normalize",
    "project_png",
    "read_smf",
    "render",
    "roughness",
    "split_counts",
    "synth_dataset",
    "synth_map",
    "write_smf",
]
