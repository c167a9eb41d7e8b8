"""Manufactured cases and stored baseline tables."""
from .cases import CASES, ManufacturedSolution, cases_table, get_case, list_cases

__all__ = [
    'CASES',
    'ManufacturedSolution',
    'cases_table',
    'get_case',
    'list_cases',
]
