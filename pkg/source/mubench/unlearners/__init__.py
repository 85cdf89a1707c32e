"""Unlearning methods behind one contract: (θ_o, D, plan, hyperparameters) -> UnlearnResult."""

from .base import Unlearner, unlearn
from .list import UnlearningMethods, get_method, list_methods, method_ids

__all__ = ["Unlearner", "UnlearningMethods", "get_method", "list_methods", "method_ids", "unlearn"]
