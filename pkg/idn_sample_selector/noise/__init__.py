"""
Synthetic datasets and label-noise injectors
"""
