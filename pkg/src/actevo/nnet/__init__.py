"""Dense classifiers used to score activation functions."""

from .activation import Activation
from .data import KINDS, Dataset, load_csv, make_dataset
from .fim import FimSpectrum, fim_spectrum
from .mlp import (INITS, MlpSpec, Model, TrainConfig, TrainingEvaluator, TrainResult,
                  evaluate_model, fitness, init_model, load_checkpoint, loss_and_grad,
                  predict_logits, save_checkpoint, train)
