"""
Terminal presentation of results.
"""

from .console import print_json, print_summary, render_json

__all__ = ['print_json', 'print_summary', 'render_json']
