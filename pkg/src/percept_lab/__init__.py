"""percept-lab: a desk-scale laboratory for studying how an autonomous
cyber agent's perception layer shapes its world representation."""

__version__ = "0.1.0"

from .messages import LAYOUT_VERSION, default_layout  # noqa: F401
