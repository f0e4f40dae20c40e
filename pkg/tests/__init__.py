"""Tests package for sumix.

This package contains all test modules using pytest.
"""
