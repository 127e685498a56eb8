"""
Report generation modules for the IDN Sample Selector
"""
