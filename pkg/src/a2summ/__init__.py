"""Align-and-attend multimodal summarization on a small numpy autodiff core."""

__version__ = "0.1.0"
