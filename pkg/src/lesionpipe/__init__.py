"""Post-processing, ensembling and lesion-wise evaluation for 3D tumor segmentation."""

__version__ = "0.1.0"

CHANNELS = ("TC", "WT", "ET")
