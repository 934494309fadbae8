#!/usr/bin/env python3
"""
Main entry point for fbm-polymer.
"""

from . import main

if __name__ == "__main__":
    main()
