"""Physics-informed neural networks trained with Adam or a meta-learned optimizer."""

__version__ = "0.1.0"
