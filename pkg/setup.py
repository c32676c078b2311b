#!/usr/bin/env python
"""Setup shim for tools that still call setup.py; metadata lives in pyproject.toml."""
from setuptools import setup

# Prefer pip install -e ".[test]" for local development, python -m build for releases.

if __name__ == "__main__":
    setup()
