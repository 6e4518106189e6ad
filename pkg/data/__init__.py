"""
Data directory for sample run configurations.
"""
