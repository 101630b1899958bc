"""Test package for ufcl-core."""
