"""Time-of-flight PET list-mode simulation, MLAP histo-imaging and 3-D U-Net reconstruction."""

__version__ = "0.1.0"
