"""Hand-rolled tensor layers with analytic backward passes."""
from . import backend, tree
from .layers import (BlockParams, CbamParams, ConvParams, LayerGrads,
                     NormParams, RdnParams, block_backward, block_forward,
                     block_run, cbam_backward, cbam_forward, cbam_run,
                     conv2d_backward, conv2d_forward, init_cbam, init_conv,
                     init_norm, init_rdn, norm_backward, norm_forward,
                     rdn_backward, rdn_forward, rdn_run, relu_backward,
                     relu_forward, residual_block_backward,
                     residual_block_forward, softmax_backward,
                     softmax_forward)

__all__ = [
    "backend", "tree",
    "ConvParams", "LayerGrads", "NormParams", "BlockParams", "RdnParams",
    "CbamParams",
    "conv2d_forward", "conv2d_backward", "relu_forward", "relu_backward",
    "softmax_forward", "softmax_backward", "norm_forward", "norm_backward",
    "residual_block_forward", "residual_block_backward",
    "block_forward", "block_backward", "block_run",
    "rdn_forward", "rdn_backward", "rdn_run",
    "cbam_forward", "cbam_backward", "cbam_run",
    "init_conv", "init_norm", "init_rdn", "init_cbam",
]
