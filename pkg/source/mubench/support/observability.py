"""Observability utilities."""


def cell_attributes(method_id: str, scenario: str, budget: int, seed: int) -> dict[str, str | int]:
    """Span attributes identifying a matrix cell."""
    return {
        "mubench.method_id": method_id,
        "mubench.scenario": scenario,
        "mubench.budget": budget,
        "mubench.seed": seed,
    }
