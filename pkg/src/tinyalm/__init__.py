"""tinyalm: a desk-scale audio-language model trained end to end on a
from-scratch reverse-mode autodiff tape, with synthetic tasks and a
verification harness."""

__version__ = "0.1.0"

from .autodiff import Tape, Tensor
from .config import Config, load_config, parse_config
from .params import ParamStore
