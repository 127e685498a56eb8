"""
Clean-sample identification: GMM partitioning, stage 1, stage 2 and metrics
"""
