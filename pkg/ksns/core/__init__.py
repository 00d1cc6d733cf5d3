"""
KSNS Core Components
"""
