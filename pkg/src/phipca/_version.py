__version__ = "0.1.0"
# Version of the on-disk CSV/manifest layout.
FORMAT_VERSION = "1"
