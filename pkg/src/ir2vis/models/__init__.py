"""Network architectures over the autograd core."""
from .checkpoint import load_checkpoint, read_sidecar, save_checkpoint
from .layers import BatchNorm2d, Conv2d, ConvBlock, Dropout, Module
from .networks import (
    ModelSpec,
    PatchGAN,
    UNet,
    UNetPlusPlus,
    build_generator,
    build_model,
    build_patchgan,
    build_unet,
    build_unetpp,
    check_input_size,
    default_spec,
    discriminate,
    patch_map_size,
    predict,
)

__all__ = [
    "BatchNorm2d", "Conv2d", "ConvBlock", "Dropout", "ModelSpec", "Module", "PatchGAN", "UNet", "UNetPlusPlus",
    "build_generator", "build_model", "build_patchgan", "build_unet", "build_unetpp", "check_input_size",
    "default_spec", "discriminate", "load_checkpoint", "patch_map_size", "predict", "read_sidecar",
    "save_checkpoint",
]
