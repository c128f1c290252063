"""Deep joint source-channel coding of images over a half-duplex relay channel."""
from .channel import (
    LinkConfig,
    RelayLinks,
    SnrTriple,
    af_beta,
    af_scale,
    awgn_link,
    effective_af_noise_var,
    mrc_combine,
    mrc_weights,
    normalize_power,
    snr_db_to_linear,
    snr_linear_to_db,
)
from .models import EncoderConfig
from .protocols import Protocol, ProtocolSpec, RelaySystem
from .training import PlateauSchedule, TrainConfig, restore, save_checkpoint, train

__version__ = "0.1.0"
