"""Quantum backflow states: construction, certification and bounds."""

from .errors import AccuracyError, BackflowError, DegenerateStateError, NotApplicableError, SolverError
from .states import (
    BrackenMelloy,
    BrackenMelloyReduced,
    EvesonTruncated,
    ExpPoly,
    GaussianF,
    GridSampled,
    HalfLineGrid,
    MomentTriple,
    MomentumState,
    UnitsContext,
    build_grid,
    moments,
    normalize,
)
from .dynamics import C_BM

__version__ = "0.1.0"
