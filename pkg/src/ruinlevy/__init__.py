"""Ruin asymptotics for compound Poisson surplus processes with convolution-equivalent claims."""
__version__ = "0.1.0"
