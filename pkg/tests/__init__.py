"""
Unit tests for the IDN Sample Selector
""" 