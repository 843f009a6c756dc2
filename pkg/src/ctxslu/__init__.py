"""Contextual spoken language understanding with role-split history encoders
and content/time-aware attention, on a from-scratch autograd engine."""

from . import autograd, context, corpus, encoder, evaluation, model, training

__all__ = ["autograd", "context", "corpus", "encoder", "evaluation",
           "model", "training"]
__version__ = "0.1.0"
