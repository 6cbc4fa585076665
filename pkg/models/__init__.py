"""
Domain types: intervals, transform chains, interpolation grids, datasets and run records.
"""

from .interval import Interval, IntervalTensor
from .transforms import Pixelwise, Rotate, Scale, Shear, TransformChain, Translate
from .grid import PaddingPlan, PaddingStrategy, SparseInterpGrid
from .dataset import Dataset
from .verdict import CertVerdict, ImageVerdict, RegressionBound, RegressionReport, SplitPlan
from .training import TrainingResult, TrainLogEntry, TuneReport

__all__ = [
    'Interval',
    'IntervalTensor',
    'Rotate',
    'Translate',
    'Scale',
    'Shear',
    'Pixelwise',
    'TransformChain',
    'SparseInterpGrid',
    'PaddingStrategy',
    'PaddingPlan',
    'Dataset',
    'SplitPlan',
    'ImageVerdict',
    'CertVerdict',
    'RegressionBound',
    'RegressionReport',
    'TrainLogEntry',
    'TuneReport',
    'TrainingResult',
]
