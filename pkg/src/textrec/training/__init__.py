from .losses import bpr_loss, contrastive_loss, info_nce_symmetric, mlm_loss
from .optim import Adam, clip_by_global_norm, global_norm
from .sampling import TripletBatch, mlm_mask, sample_batch, sample_negative, sample_profile
from .trainer import TrainConfig, Trainer, TrainingBatchReport, TrainingDiverged, TrainResult, train

__all__ = [
    "Adam", "TrainConfig", "Trainer", "TrainingBatchReport", "TrainingDiverged", "TrainResult",
    "TripletBatch", "bpr_loss", "clip_by_global_norm", "contrastive_loss", "global_norm",
    "info_nce_symmetric", "mlm_loss", "mlm_mask", "sample_batch", "sample_negative",
    "sample_profile", "train",
]
