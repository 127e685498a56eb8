"""
Warm-up, semi-supervised training and the per-epoch selection loop
"""
