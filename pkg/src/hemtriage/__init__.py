"""Desk-scale head-CT hemorrhage triage pipeline."""

from .volume import (CtVolume, DEFAULT_WINDOWS, HEMORRHAGE_TYPES, ManifestRow, ScanLabels,
                     WindowSpec, apply_window, load_volume, stack_channels, store_volume)

__version__ = "0.1.0"

__all__ = [
    "CtVolume", "DEFAULT_WINDOWS", "HEMORRHAGE_TYPES", "ManifestRow", "ScanLabels",
    "WindowSpec", "apply_window", "load_volume", "stack_channels", "store_volume",
    "__version__",
]
