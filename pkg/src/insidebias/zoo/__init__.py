"""Stock architectures and their weight files."""
from .builders import ARCHS, build_model, build_resnet, build_vgg, model_from_config
from .weights import file_digest, load_weights, save_weights

__all__ = ["ARCHS", "build_model", "build_resnet", "build_vgg", "file_digest", "load_weights",
           "model_from_config", "save_weights"]
