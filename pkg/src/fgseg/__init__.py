"""Force-sensing guided artery-vein segmentation at desk scale.

The package pairs a minimal reverse-mode tensor engine with a tiny U-shaped
segmentation network whose encoder-decoder gap hosts a force-guided attention
module: probe-force extremes pick two key frames per sequence, force-based
weights scale their contribution, and attention retrieval fuses their memory
with the current frame. A synthetic force-coupled vessel phantom provides
ground truth for training and for the ablation benchmarks.
"""

from .dataio import (AlignmentError, AugmentConfig, ForceRecord, ForceTrace,
                     FrameSequence, ParseError, Sample, Video, align, augment,
                     downsample, load_dataset, load_force_csv, save_force_csv)
from .forcekeys import (DynamicWeights, KeyFrameSelection, dynamic_weights,
                        select_key_frames, select_preceding_frames)
from .metrics import ConfusionMatrix, MetricsReport, flops_estimate, iou_and_dice
from .neck import NeckConfig, neck_forward
from .network import (UNetTinyConfig, forward_baseline, forward_fg, init_params,
                      predict_mask, weighted_ce_loss)
from .phantom import GeometryError, PhantomConfig, force_profile, generate_dataset, render_frame
from .tensor import (GradCheckReport, NonFiniteError, ShapeError, Tensor,
                     grad_check, load_checkpoint, save_checkpoint)
from .training import TrainConfig, TrainResult, evaluate, train

__version__ = "0.1.0"
