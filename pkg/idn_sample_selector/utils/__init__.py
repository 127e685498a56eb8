"""
Utility functions for the IDN Sample Selector
"""
