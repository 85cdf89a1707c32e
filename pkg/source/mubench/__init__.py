"""MUBench module."""
import importlib.metadata as __metadata__

if __package__ is not None:
    try:
        _pkg_metadata = __metadata__.metadata(__package__).json
    except __metadata__.PackageNotFoundError:  # pragma: no cover - running from a source checkout
        _pkg_metadata = {"version": "0.0.0+source", "summary": "", "project_url": []}
    project_urls = {}
    for item in _pkg_metadata.get("project_url", []):
        key, value = item.split(", ")
        project_urls[key] = value

    # data from pyproject.toml
    __version__ = _pkg_metadata["version"]  # version field
    __version_str__ = str(__version__)
    __summary__ = _pkg_metadata.get("summary", "")  # description field
    __repository_url__ = project_urls.get("Repository")  # repository field
else:
    raise ValueError("Package name is not defined")

__all__ = [
    "config",
    "domain",
    "substrate",
    "scenarios",
    "attacks",
    "unlearners",
    "metrics",
    "harness",
    "setup",
]
