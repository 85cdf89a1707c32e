"""List of all unlearning methods supported by MUBench."""

from enum import Enum

from ..domain import UnknownMethodError
from .base import Unlearner
from .boundary import BoundaryExpand, BoundaryShrink
from .distillation import BadTeacher, Scrub
from .fcs import Fcs
from .fisher import Fisher, Ssd
from .influence import FirstOrder, SecondOrder
from .noise import Gkt, Unsir
from .pgu import Pgu
from .reinit import Ct, Msg, Niu
from .retrain import Retrain
from .sisa import Sisa
from .sparsity import L1Sparse, SalUn
from .training_log import Amnesiac, Unrolling


class UnlearningMethods(Enum):
    """Method registry."""

    RETRAIN = Retrain()
    SISA = Sisa()
    UNROLLING = Unrolling()
    AMNESIAC = Amnesiac()
    FIRST_ORDER = FirstOrder()
    SECOND_ORDER = SecondOrder()
    FISHER = Fisher()
    SSD = Ssd()
    BAD_TEACHER = BadTeacher()
    SCRUB = Scrub()
    BOUNDARY_SHRINK = BoundaryShrink()
    BOUNDARY_EXPAND = BoundaryExpand()
    SALUN = SalUn()
    L1_SPARSE = L1Sparse()
    PGU = Pgu()
    UNSIR = Unsir()
    GKT = Gkt()
    FCS = Fcs()
    MSG = Msg()
    CT = Ct()
    NIU = Niu()


def get_method(method_id: str) -> Unlearner:
    """Registered method by id.

    Raises:
        UnknownMethodError: no method has this id.
    """
    for member in UnlearningMethods:
        if member.value.method_id == method_id:
            return member.value
    raise UnknownMethodError(f"unknown unlearning method '{method_id}'")


def list_methods(approximate_only: bool = False) -> list[Unlearner]:
    """Registered methods in registry order. `approximate_only` leaves out the exact ones (retrain, SISA)."""
    return [m.value for m in UnlearningMethods if not (approximate_only and m.value.exact)]


def method_ids(approximate_only: bool = False) -> list[str]:
    """Ids of `list_methods()`."""
    return [m.method_id for m in list_methods(approximate_only)]
