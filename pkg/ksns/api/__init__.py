"""
Configuration files, storage formats and the command line
"""
