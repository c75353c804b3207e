"""
Training Package
Schedules, the training loop, evaluation, curricula and curve exports.
"""

from training.trainer import (
    TrainSchedule, EvalEntry, RunRecord, DataMix, TrainingMix, eval_points, train, evaluate, evaluate_by_family,
)
from training.curriculum import CurriculumSpec, StageSpec, run_curriculum, MIX_PRESETS, CURRICULUM_PRESETS
from training.metrics import emit_metrics, merge_curves

__all__ = ['TrainSchedule', 'EvalEntry', 'RunRecord', 'DataMix', 'TrainingMix', 'eval_points', 'train',
           'evaluate', 'evaluate_by_family', 'CurriculumSpec', 'StageSpec', 'run_curriculum',
           'MIX_PRESETS', 'CURRICULUM_PRESETS', 'emit_metrics', 'merge_curves']
