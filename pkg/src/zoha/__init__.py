"""Hessian-aware zeroth-order optimization."""
from .oracle import ObjectiveSpec, ObjectiveMetadata, QueryLedger, evaluate, evaluate_batch, hvp_fd
from .hessian import IdentityModel, DiagonalModel, LowRankPlusShift, PowerMethodConfig
from .optimizer import (
    AdagradBackend,
    AdamBackend,
    BoxConstraint,
    DescentCheck,
    GaussBackend,
    IdentityBackend,
    PowerBackend,
    SolverConfig,
    run,
    run_dc,
)
from .attack import AttackSpec, ClassifierModel, attack_suite, load_classifier, run_attack

__version__ = "0.1.0"
