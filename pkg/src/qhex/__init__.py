"""HemiHex angular upsampling of diffusion MRI q-space data."""
from .geometry import (DirectionSet, SphericalTriangulation, angular_distance, build_triangulation,
                       canonicalize, containing_triangle, generate_candidates, min_pairwise_angle,
                       unit_vector)
from .scheme import NestedScheme, build_nested, greedy_construct, load_scheme, one_opt_refine, save_scheme
from .hemihex import HemiHexNeighborhood, alternation_report, baseline_weights, decompose
from .phantom import (PhantomSpec, Tensor3, Volume4D, add_rician_noise, desk_phantom, make_phantom,
                      mixture_signal, tensor_signal)
from .dataset import DataSplit, Sample, Samples, extract_samples, interior_mask, shuffle_batches, split_by_region
from .mlp import MLPParams, TrainConfig, TrainLog, init_params, forward, backward, mse_loss, train
from .upsample import predict_volume, predict_volume_baseline
from .dti import EvalReport, TensorField, evaluate, fa, fit_dti, md

__version__ = "0.1.0"
