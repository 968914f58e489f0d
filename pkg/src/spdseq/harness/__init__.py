"""Sequences, rebalancing, training, evaluation, metrics and ablations."""
from .ablation import ablation_suite
from .data import (FoldSpec, RecordingTokens, SequenceSet, build_sequences, load_recording_tokens,
                   make_folds, oversample, target_indices)
from .metrics import MetricsReport, aggregate, confusion_matrix, f1_from_confusion, format_table
from .training import (Adam, CrossValidation, TrainConfig, TrainResult, cross_validate, evaluate,
                       load_model, predict, train)
