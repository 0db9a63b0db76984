"""Two-pathway action classifier: model, losses, data and training."""
from .config import ModelConfig, TrainConfig
from .data import FlowDataset, augment_order, collate, permute_transitions, video_inputs
from .model import LossDivergence, MotionPerceiver, Output, total_loss
from .train import TrainingDiverged, TrainResult, evaluate, forward_logits, load_model, predict, save_model, train
