"""Forgetting scenario builders."""
