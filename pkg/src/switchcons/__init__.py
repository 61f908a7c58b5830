"""Consensus of identical linear agents over switching communication graphs.

Modules: ``numkit`` (dense linear algebra), ``netgraph`` (graphs and
Laplacians), ``synth`` (modal form and gain design), ``switchsim`` (switched
propagation), ``verify`` (numerical certificates), ``config`` and ``cli``.
"""
from .errors import (ConfigError, ConsensusError, DefectiveMatrixError, DimensionError,
                     DivergenceError, InfeasibleGainError, ModalFormError, NotApplicableError,
                     NumericFailure, ScheduleError, SingularMatrixError)

__version__ = "0.1.0"
