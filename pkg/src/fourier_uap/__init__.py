"""Fourier analysis of convolution operators and single-frequency universal
adversarial perturbations.

Submodules
----------
spectral  : DFT conventions, Fourier basis, conjugate symmetry
conv      : circular convolution layers/stacks and their dense matrices
spectra   : exact singular values via per-frequency channel blocks
perturb   : single Fourier attack patterns and spectrum analysis
oracle    : label-only toy classifiers, synthetic data, fool ratio
protocol  : binary wire protocol for remote oracles
search    : fool-ratio heatmaps, budgeted frequency search, kernel responses
formats   : tensor, image, network and CSV files
cli       : command-line entry point
"""

__version__ = "0.1.0"

from .conv import ConvLayer, Network, apply_conv, apply_network, materialize_network
from .oracle import ToyModelSpec, LayerSpec, build_oracle, make_toy_cnn, make_toy_mlp, synthetic_batch, fool_ratio
from .perturb import Perturbation, sfa_pattern, ssfa_pattern, make_pattern, apply_perturbation, perturbation_spectrum
from .protocol import connect_remote_oracle, start_server
from .search import brute_force_search, fool_heatmap, kernel_response_map, local_search, matched_kernel
from .spectra import decompose, full_spectrum, disturbance_map
from .spectral import Frequency, dft2, idft2, dft_matrix, fourier_basis, check_conjugate_symmetry
