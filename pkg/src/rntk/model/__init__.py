"""Streaming transducer network, parameter layout and checkpoint container."""

from .checkpoint import Checkpoint, from_bytes, load_checkpoint, save_checkpoint, to_bytes
from .config import EP_BRANCH_KINDS, EP_CLASSES, PREDICTOR_KINDS, ModelConfig
from .inference import Joint, Predictor, PredictorCache
from .network import Transducer
from .params import count_parameters, eou_joint_shapes, init_params, parameter_shapes
from .streaming import EncoderStream, StepOutput


def init_eou_from_recognition(ckpt):
    """New checkpoint whose EOU joint is initialised from the recognition joint."""
    model = Transducer(ckpt.config, ckpt.tensors)
    model.init_eou_joint()
    tensors = dict(ckpt.tensors)
    for name in eou_joint_shapes(ckpt.config):
        tensors[name] = model.params[name].data.copy()
    return Checkpoint(tensors, ckpt.config, ckpt.stats, dict(ckpt.meta), ckpt.version)


__all__ = [
    "Checkpoint",
    "EP_BRANCH_KINDS",
    "EP_CLASSES",
    "EncoderStream",
    "Joint",
    "ModelConfig",
    "PREDICTOR_KINDS",
    "Predictor",
    "PredictorCache",
    "StepOutput",
    "Transducer",
    "count_parameters",
    "eou_joint_shapes",
    "from_bytes",
    "init_eou_from_recognition",
    "init_params",
    "load_checkpoint",
    "parameter_shapes",
    "save_checkpoint",
    "to_bytes",
]
