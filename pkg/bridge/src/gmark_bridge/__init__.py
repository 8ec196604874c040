"""Latent-file bridge between the gmark codec and a diffusion pipeline."""

__version__ = "0.1.0"

from .gmlt import LatentFormatError, read_latent, write_latent
from .pipelines import BridgeConfig, DiffusionPipeline, MockPipeline, make_pipeline
