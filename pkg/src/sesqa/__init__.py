"""Speech quality assessment toolkit: degradation synthesis, multi-task
training on raw 48 kHz audio, and evaluation."""

__version__ = "0.1.0"
