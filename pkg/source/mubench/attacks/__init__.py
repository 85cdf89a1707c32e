"""Poisoning attacks used by the depoisoning scenario."""
