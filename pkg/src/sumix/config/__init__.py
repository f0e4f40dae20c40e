"""
Configuration module package.

This package contains run configuration models and the preset registry.
"""
