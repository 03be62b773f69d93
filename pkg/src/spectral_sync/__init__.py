"""Spectral consistency checks between onboard and server pose graphs.

Robots compare the server's broadcast proxy graph against their own estimate
with spectral graph wavelets and turn scale-wise discrepancies into sparse
relative pose constraints for their onboard optimizer.
"""
from .discrepancy import BandThresholds, DetectionConfig, detect, generate_constraints, upsert_constraints
from .errors import SpectralSyncError, ValidationError
from .io import parse_graph, read_graph, serialize_graph, write_graph
from .monitor import BroadcastPayload, MonitorConfig, make_broadcast, synchronize
from .optimizer import OptimizationProblem, OptimizerSettings, chi2, optimize
from .posegraph import Pose, PoseGraph, PoseNode, RelativeConstraint, compose, inverse, relative_pose, rmse_ate
from .proxy import ProxyGraph, build_proxy, kron_reduce, kron_select, laplacian
from .spectral import FilterBank, eigendecompose, gft, igft, meyer_kernel, wavelet_coefficients

__version__ = "0.1.0"
