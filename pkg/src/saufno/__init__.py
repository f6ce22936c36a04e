"""Numpy surrogate for steady-state chip temperatures: a finite-volume oracle,
a from-scratch autodiff core and a Fourier neural operator with U-Net and
self-attention extensions."""
from . import functional, tensor
from .bench import BenchmarkReport, benchmark
from .dataset import Normalizer, ThermalDataset, generate_dataset, read_thrm, write_thrm
from .errors import *  # noqa: F401,F403
from .heatmap import render_heatmap
from .metrics import MetricsReport, compute_metrics
from .model import (SAUFNO, ModelConfig, attention_block, build_model, fourier_layer, sau_fno_forward,
                    spectral_conv, u_fourier_layer, unet_forward)
from .tensor import Tensor, no_grad
from .thermal import (BoundarySpec, ChipStack, PowerMap, TemperatureField, analytic_slab, build_stack,
                      energy_balance, sample_power_map, slab_stack, solve_steady)
from .training import Checkpoint, TrainConfig, finetune, l2_loss, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"
