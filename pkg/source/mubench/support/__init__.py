"""Support utilities shared by the MUBench modules."""
