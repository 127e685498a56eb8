"""
Experiment presets, ablation and sweep grids
"""
