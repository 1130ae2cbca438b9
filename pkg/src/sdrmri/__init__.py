"""Semantically diverse, data-consistent reconstructions for accelerated MRI."""

from .detect import (AutoProposalConfig, BoundingBox, Detection, LesionTemplate,
                     MergedDetection, iou, jitter_boxes, map_at_iou,
                     matched_filter_detect, merge_detections, nms, propose_boxes_auto,
                     recall_at_iou)
from .encoder import (BoxFeatures, EncoderModel, RobustTrainConfig, distance_gradient,
                      encode_boxes, estimate_feature_sensitivity, feature_distance,
                      make_encoder, robust_finetune, roi_align)
from .errors import CalibrationFailure, NumericFailure
from .mri import (AcquisitionData, CoilSensitivities, Ellipse, Lesion, PhantomSpec,
                  SamplingMask, adjoint_op, dft2, forward_op, lesion_template,
                  make_coil_sensitivities, make_phantom, make_sampling_mask,
                  random_phantom_spec, simulate_acquisition)
from .recon import (BallConstraint, DcConfig, cg_least_squares, consistency_residual,
                    data_consistency, project_ball, zero_filled_recon)
from .sdr import ReconstructionSet, SdrParams, diversity_matrix, sdr_generate

__version__ = "0.1.0"
