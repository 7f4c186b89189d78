"""Desk-scale lab for training-data exfiltration attacks on exported models and their mitigations."""

__version__ = "0.1.0"

from .errors import (
    ArgumentError,
    CapacityError,
    ConfigError,
    DataValidationError,
    ExfilLabError,
    MalformedPayloadError,
    NumericError,
    ParseError,
    ShapeError,
    UndefinedAUCError,
    UnsupportedLayerError,
)
from .nn import DenseLayer, Network, backward, forward, grad_check, init_network, transpose_network
from .optim import ScheduleSpec, adamw_step, lwlrd_rate, sgd_step, superft_rate
from .weights_io import WeightArchive, read_archive, write_archive
from .stego import QuantizerConfig, StegoPayload, capacity, dequantize, embed, extract, quantize
from .metrics import bit_error_rate, macro_auc, psnr, ssim
from .data import Dataset, SynthSpec, load_dataset, save_dataset, synth_generate
from .sanitize import MitigationMethod, mitigate
from .attacks import DecCodec, TransposeConfig, dec_attack_export, transpose_train
