"""Numpy neural-network core: layers, MLP/TCN models, optimizers and schedules."""

from .checkpoint import load_checkpoint, save_checkpoint
from .layers import (
    EPS,
    CausalConv1d,
    Dense,
    Dropout,
    Embedding,
    ReLU,
    Sigmoid,
    bce_logit_grad,
    bce_loss,
    causal_taps,
    sigmoid,
)
from .models import MLP, TCN, InputSpec, MLPConfig, TCNConfig, build_model, embedding_dim
from .optim import (
    SWA,
    Adam,
    CyclicLR,
    ReduceOnPlateau,
    RMSprop,
    inverse_loss_weights,
    make_optimizer,
    parameter_average,
    swa_accumulate,
    swa_finalize,
)

__all__ = [
    "EPS", "CausalConv1d", "Dense", "Dropout", "Embedding", "ReLU", "Sigmoid",
    "bce_logit_grad", "bce_loss", "causal_taps", "sigmoid",
    "MLP", "TCN", "InputSpec", "MLPConfig", "TCNConfig", "build_model", "embedding_dim",
    "SWA", "Adam", "CyclicLR", "ReduceOnPlateau", "RMSprop", "inverse_loss_weights",
    "make_optimizer", "parameter_average", "swa_accumulate", "swa_finalize",
    "load_checkpoint", "save_checkpoint",
]
