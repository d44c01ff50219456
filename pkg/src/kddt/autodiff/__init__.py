"""Minimal reverse-mode differentiable array engine."""
from .tensor import Tensor, as_tensor, add, sub, mul, div, matmul, sum_, mean, reshape, transpose, concat, stack, exp, log, square, sqrt
from .ops import (
    linear,
    embedding,
    relu,
    sigmoid,
    tanh,
    activation,
    lstm,
    bilstm,
    conv1d,
    maxpool1d,
    softmax,
    cross_entropy,
    gaussian_kl,
    reparameterize,
    cosine_similarity,
    masked_mean,
)
from .params import ParameterStore, uniform_init, zeros, write_checkpoint, read_checkpoint, load_into
from .optim import AdamW, AdamWState, adamw_step
from .gradcheck import gradcheck, GradcheckReport
