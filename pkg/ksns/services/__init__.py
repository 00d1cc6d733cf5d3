"""
Diagnostics, experiments and verification services
"""
