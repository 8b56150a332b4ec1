"""Simulator and analysis toolkit for hybrid optical-fiber frequency-comparison links."""

__version__ = "0.1.0"
