from .losses import loss_generative, loss_heads
from .loop import DivergenceError, TrainConfig, TrainTrace, train, validation_scores
from .schedule import cosine_lr, scheduler_lr
