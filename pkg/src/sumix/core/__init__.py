"""
Core domain logic package.

This package contains the mixers, encoder, loss, training and evaluation logic.
Modules here must not import the command line (argparse, tqdm). File access
goes through sumix.infrastructure; only training.py places files inside a
run directory, using the layout from infrastructure.paths.
"""
