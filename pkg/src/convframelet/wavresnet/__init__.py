"""Small residual denoising network on directional subbands, trained with a hand-written backward pass."""
from .network import ArchConfig, NetworkParams, forward, init_params, loss_and_grad

__all__ = ["ArchConfig", "NetworkParams", "forward", "init_params", "loss_and_grad"]
