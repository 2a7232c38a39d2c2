"""
Utilities for configuration, artifacts and report formatting.
"""
