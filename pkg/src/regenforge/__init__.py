"""Regenerative code generation from data, patterns and working prototypes."""

from .errors import RegenError
from .nanovc import ChangeSet, Commit, ContentArea, Repo
from .patterns import PatternRule, compile_rules, derive_template, verify_prototype
from .templating import fuse, parse_template, render

__version__ = "0.1.0"

__all__ = [
    "ChangeSet",
    "Commit",
    "ContentArea",
    "PatternRule",
    "RegenError",
    "Repo",
    "compile_rules",
    "derive_template",
    "fuse",
    "parse_template",
    "render",
    "verify_prototype",
]
