"""
Infrastructure layer package.

This package contains modules for interacting with the outside world:
- CIFAR record files and corruption manifests
- Checkpoints
- Metrics streams, tables and images
- Logging configuration
- Path utilities
"""
