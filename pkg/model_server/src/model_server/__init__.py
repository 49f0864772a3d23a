"""Reference prediction server speaking the codofuzz oracle wire
protocol: newline-delimited JSON requests in, probability vectors out.
"""

from .models import ModelLoadError, ServedModel, load_linear_softmax, load_model, load_torchscript
from .server import ModelServer, serve_stdio, serve_tcp

__version__ = "0.1.0"

__all__ = [
    "ModelLoadError",
    "ModelServer",
    "ServedModel",
    "load_linear_softmax",
    "load_model",
    "load_torchscript",
    "serve_stdio",
    "serve_tcp",
]
