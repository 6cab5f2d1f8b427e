"""Minimal differentiable substrate: autodiff, MLPs, Adam and checkpoints."""
from . import autodiff
from .adam import AdamState, adam_init, adam_step
from .autodiff import Var, gaussian_log_pdf, grad, kl_diag_gaussians, reparameterize, value_and_grad
from .mlp import MLPSpec, init_mlp, mlp_forward
from .params import ParamStore

__all__ = [
    "AdamState", "MLPSpec", "ParamStore", "Var", "adam_init", "adam_step", "autodiff",
    "gaussian_log_pdf", "grad", "init_mlp", "kl_diag_gaussians", "mlp_forward",
    "reparameterize", "value_and_grad",
]
