from .backbone import BackboneExtractor, SyntheticTransformerBackbone, make_backbone_extractor
from .checkpoint import load_probe, save_probe
from .lora import LoraConfig, LoRALinear, apply_lora, lora_parameter_count, parameter_checksums
from .losses import loss_ce, loss_ce_logits, loss_mae
from .model import Probe, ProbeConfig, count_parameters, forward_sequence, forward_vector, fuse_layers
from .train import (
    ExampleSet,
    MeanBaseline,
    Pipeline,
    TrainConfig,
    TrainedProbe,
    build_probe,
    collate,
    fit,
    poly_lr,
    predict,
)
