"""Echo index estimation for input-driven switching between finitely many maps."""

__version__ = "0.1.0"
