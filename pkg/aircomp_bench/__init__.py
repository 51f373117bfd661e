"""
Receive beamforming benchmark for over-the-air computation.
"""
from .algorithms import direct_sca, direct_sdr, reduce, sca_opt, sdr_opt
from .channel import ChannelSet, sample_channel

__version__ = "1.0.0"

__all__ = ["ChannelSet", "sample_channel", "reduce", "direct_sdr", "direct_sca", "sdr_opt", "sca_opt"]
