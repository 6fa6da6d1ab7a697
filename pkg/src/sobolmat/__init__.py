"""Sobol' matrices of multi-output models from Gaussian-process surrogates.

The typical flow is ``sample -> fit -> gsa``::

    from sobolmat import SobolMatrices, benchmark_design

    design = benchmark_design(512, 5, noise=0.01, seed=0)
    est = SobolMatrices(subsets=[(0,), (0, 1)]).fit(design.inputs, design.outputs)
    est.report((0,)).S, est.report((0,)).T
"""

from .axes import AxisSet, prefix
from .bench import BenchmarkGrid, CellResult, aggregate, run_cell, run_grid
from .exceptions import (
    DomainError,
    FactorizationFailure,
    HadamardDivisionError,
    IntegrationFailure,
    NegativeQError,
    NonFiniteLikelihood,
    OddRowCountError,
    SobolMatError,
    ZeroVarianceError,
)
from .gsa import (
    SobolMatrices,
    SobolReport,
    closed_sobol_matrix,
    compute_reports,
    filter_reports,
    oracle_sobol_matrix,
    total_sobol_matrix,
)
from .moments import MomentEngine
from .sampling import DesignMatrix, benchmark_design, latin_hypercube, split_two_fold
from .surrogate import GaussianProcessSurrogate, RbfKernelParams
from .testfuncs import mnu9, truth_table

__version__ = "0.1.0"

__all__ = [
    "AxisSet",
    "prefix",
    "BenchmarkGrid",
    "CellResult",
    "aggregate",
    "run_cell",
    "run_grid",
    "DomainError",
    "FactorizationFailure",
    "HadamardDivisionError",
    "IntegrationFailure",
    "NegativeQError",
    "NonFiniteLikelihood",
    "OddRowCountError",
    "SobolMatError",
    "ZeroVarianceError",
    "SobolMatrices",
    "SobolReport",
    "closed_sobol_matrix",
    "compute_reports",
    "filter_reports",
    "oracle_sobol_matrix",
    "total_sobol_matrix",
    "MomentEngine",
    "DesignMatrix",
    "benchmark_design",
    "latin_hypercube",
    "split_two_fold",
    "GaussianProcessSurrogate",
    "RbfKernelParams",
    "mnu9",
    "truth_table",
]
