"""
Dense neural core: feature extractor, dual classifier heads, losses and SGD
"""
