"""Minimal dense layers with hand-written backward passes, plus Adam and BCE."""

from .attention import AttentionConfig, AttentionModule
from .gradcheck import grad_check
from .losses import bce_with_logits
from .model import MiniResNet, ModelConfig, insert_attention, load_checkpoint, save_checkpoint
from .optim import Adam

__all__ = [
    "Adam",
    "AttentionConfig",
    "AttentionModule",
    "MiniResNet",
    "ModelConfig",
    "bce_with_logits",
    "grad_check",
    "insert_attention",
    "load_checkpoint",
    "save_checkpoint",
]
