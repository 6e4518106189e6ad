"""
Application modules for erft-lab.
"""
