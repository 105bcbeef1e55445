# spde-holder Test Suite
"""Test package for spde-holder."""
