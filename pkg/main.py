"""
Main entry point for erft-lab.
Run this to use the command-line interface.
"""
import os
import sys

# Add the project root to the path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

if __name__ == "__main__":
    from app.cli import main

    sys.exit(main())
