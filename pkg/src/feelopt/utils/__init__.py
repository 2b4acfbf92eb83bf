"""
Utility package for writing run artifacts.
"""

from .report import emit_report

__all__ = ['emit_report']
