"""Parallel sentence mining from the context vectors of a multilingual NMT encoder."""

from . import classify, config, corpus, features, nmt, numkit, simspace, textproc
from ._kernels import backend
from .errors import CtxmineError

__version__ = "0.1.0"

__all__ = ["classify", "config", "corpus", "features", "nmt", "numkit", "simspace", "textproc", "backend",
           "CtxmineError"]
