"""Dual-stream multimodal aspect sentiment classifier on a small numpy autodiff engine."""

from .adsa import AdsaConfig, adsa_forward
from .autodiff import Tensor, backward, finite_diff_check
from .data import Sample, SynthSpec, generate_synthetic, read_jsonl, split, write_jsonl
from .mamba import MambaConfig, mamba_forward, selective_scan
from .model import DualKanbaFormer, ModelConfig, model_forward
from .trainer import TrainConfig, evaluate, train_loop

__all__ = [
    "AdsaConfig", "DualKanbaFormer", "MambaConfig", "ModelConfig", "Sample", "SynthSpec",
    "Tensor", "TrainConfig", "adsa_forward", "backward", "evaluate", "finite_diff_check",
    "generate_synthetic", "mamba_forward", "model_forward", "read_jsonl", "selective_scan",
    "split", "train_loop", "write_jsonl",
]
__version__ = "0.1.0"
