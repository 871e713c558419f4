from .conditioning import Condition, build_condition, collate, forward_tokens, stack_targets
from .flow import (FlowState, NoiseScheduler, augment_preceding, euler_sample,
                   expected_sq_deviation, fm_loss, interpolate, sample_clip,
                   sample_logit_normal)
from .model import (GenerationNaNError, LoRALinear, ModelConfig, SceneVideoModel,
                    TokenBatch)
from .tokenizer import PatchTokenizer
from .training import (TrainingDivergedError, TrainResult, TrainSchedule,
                       load_checkpoint, load_model, save_checkpoint, train)

__all__ = [
    "Condition", "build_condition", "collate", "forward_tokens", "stack_targets",
    "FlowState", "NoiseScheduler", "augment_preceding", "euler_sample",
    "expected_sq_deviation", "fm_loss", "interpolate", "sample_clip",
    "sample_logit_normal", "GenerationNaNError", "LoRALinear", "ModelConfig",
    "SceneVideoModel", "TokenBatch", "PatchTokenizer", "TrainingDivergedError",
    "TrainResult", "TrainSchedule", "load_checkpoint", "load_model",
    "save_checkpoint", "train",
]
