from .model import (
    LstmHyper,
    LstmParams,
    forward,
    init_params,
    loss_and_grad,
    param_count,
    param_shapes,
    predict_proba,
    zero_params,
)
from .optim import AdamState, adam_step, clip_by_global_norm, global_norm
from .serialize import deserialize_params, load_model, save_model, serialize_params
from .train import EpochRecord, history_csv, stack_windows, stratified_split, train
from .infer import LstmClassifier
