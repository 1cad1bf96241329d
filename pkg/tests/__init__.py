"""
Tests package for sketchwrap
"""
