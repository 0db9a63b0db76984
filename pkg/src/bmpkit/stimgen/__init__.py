"""Synthetic actions and point-light stimulus rendering."""
from .benchmark import (VideoPlan, build_benchmark, load_manifest, load_pose_json, plan_videos, read_video,
                        write_video)
from .conditions import (ALL_CONDITIONS, ConditionSpec, downsample_indices, frame_order, replication_counts,
                         temporal_transform)
from .render import (JOINT_SUBSETS, Camera, PointLightVideo, joint_positions, render_condition, render_joint,
                     render_rgblike, render_sp, separate_points, sp_parameters)
from .rng import derive_seed, philox
from .skeleton import ACTIONS, EDGES, JOINTS, LIMB_EDGES, PoseSequence, synth_pose
