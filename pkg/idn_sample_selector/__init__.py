"""
IDN Sample Selector - two-stage clean-sample identification for learning
with instance-dependent label noise, at desk scale
"""

__version__ = "0.1.0"
