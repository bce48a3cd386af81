"""Global filter networks: FFT token mixing with learnable frequency-domain filters."""

from .errors import CorruptCheckpointError, InvalidArgumentError, InvalidStateError, NonFiniteError
from .fourier import SpectrumHalf, fft_1d, fft_2d, ifft_1d, ifft_2d, irfft_2d, rfft_2d
from .gfilter import (
    GlobalFilter,
    circular_conv_oracle,
    global_filter_backward,
    global_filter_forward,
    interpolate_filter,
    spatial_filter_of,
)
from .model import ModelConfig, adapt_resolution, flops_count, mixer_flops, param_count, preset

__version__ = "0.1.0"
