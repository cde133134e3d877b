"""Multi-modal correspondence state-space model for 3D hand keypoint
regression, with a synthetic-data training and evaluation harness."""

from .blocks import CorrespondenceBlock, CorrespondenceMap, update_tokens
from .dataio import SampleRecord, read_dataset, read_sample, write_sample
from .encoder import (FeatureMap2D, ImageAutoencoder2D, PointEncoder3D,
                      SuperPointSet, fuse_superpoints,
                      fuse_superpoints_depth_only)
from .model import ForwardResult, ModelConfig, PoseModel, ablation_config
from .points import (CameraIntrinsics, NeighborIndex, PointCloud, SetConv,
                     depth_to_points, farthest_point_sample, knn,
                     lift_2d_features)
from .ssm import (ContinuousSSM, DiscreteSSM, SSMKernel, SSMLayer,
                  apply_kernel, build_kernel, discretize, scan_recurrent)
from .synth import JOINT_NAMES, SyntheticHandConfig, generate_synthetic
from .tensor import (Module, Parameter, Tensor, finite_diff_check, gelu,
                     layer_norm, matmul, no_grad, sigmoid)
from .tokens import BILLayer, GlobalEncoder, KeypointState, TokenInitializer
from .training import (AugmentationConfig, EvalReport, OptimizerState,
                       TrainConfig, augment_sample, evaluate,
                       mean_keypoint_error, smooth_l1, total_loss, train)

__version__ = "0.1.0"
