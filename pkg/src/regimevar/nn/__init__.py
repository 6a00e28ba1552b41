"""Reverse-mode gradients, layers, losses and the AdaMax optimizer."""

from .autodiff import Tensor
from .layers import (causal_dilated_conv_forward, dense_forward, lstm_sequence, lstm_step,
                     regime_head)
from .losses import balance_regularizer, regularized_loss, sequence_loss
from .optim import adamax_step
from .params import GmmHeadParams, ParamStore

__all__ = [
    "GmmHeadParams", "ParamStore", "Tensor", "adamax_step", "balance_regularizer",
    "causal_dilated_conv_forward", "dense_forward", "lstm_sequence", "lstm_step",
    "regime_head", "regularized_loss", "sequence_loss",
]
