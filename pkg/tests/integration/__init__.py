"""Integration tests: desk-scale runs of the whole matrix."""
import logging

logging.disable(logging.INFO)
