"""
CLI Package
Command-line entry point for gridgnn
"""
