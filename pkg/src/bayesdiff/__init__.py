"""Bayesian detection of differential probes with a Sticky PDP mixture."""
from .model import Dataset, ModelHyperParams, PriorSettings
from .mcmc import Sampler, SamplerConfig, Trace, run_chain

__version__ = "0.1.0"

__all__ = ["Dataset", "ModelHyperParams", "PriorSettings", "Sampler", "SamplerConfig", "Trace", "run_chain"]
