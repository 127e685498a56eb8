"""
Command-line entry point for the IDN Sample Selector
"""
import sys

from idn_sample_selector.main import main

if __name__ == "__main__":
    sys.exit(main())
