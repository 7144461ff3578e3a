"""
Output module for CVID

Formatters for rich, JSON and Markdown output.
"""

from .formatters import JSONFormatter, MarkdownFormatter, RichFormatter

__all__ = ["JSONFormatter", "MarkdownFormatter", "RichFormatter"]
