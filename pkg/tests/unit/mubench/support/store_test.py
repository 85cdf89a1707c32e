"""Store module unit tests."""
from pathlib import Path
from typing import TypeVar

import pytest
from mubench.config import ENV_VAR_MUBENCH_DATA
from mubench.support.store import (
    cell_dirname,
    dir_size_bytes,
    get_artifact_dir,
    get_manifest_file,
    get_models_dir,
    get_plots_dir,
    get_results_csv,
    resolve_output_dir,
    safe_name,
)

Self = TypeVar("Self", bound="TestGetPath")


class TestGetPath:
    """Test get path."""

    @pytest.fixture(autouse=True)
    def _env(self: Self, tmp_path: Path, monkeypatch: pytest.MonkeyPatch) -> None:
        self.root = tmp_path / "runs"
        monkeypatch.setenv(ENV_VAR_MUBENCH_DATA, str(self.root))

    def test_resolve_output_dir_prefers_explicit(self: Self, tmp_path: Path) -> None:
        """Test that an explicit directory wins over the environment."""
        assert resolve_output_dir(tmp_path / "explicit") == tmp_path / "explicit"
        assert (tmp_path / "explicit").is_dir()

    def test_resolve_output_dir_from_env(self: Self) -> None:
        """Test the environment fallback."""
        assert resolve_output_dir() == self.root
        assert self.root.is_dir()

    def test_root_files(self: Self) -> None:
        """Test the files at the output root."""
        root = resolve_output_dir()
        assert get_manifest_file(root) == self.root / "manifest.json"
        assert get_results_csv(root) == self.root / "results.csv"

    def test_directories(self: Self) -> None:
        """Test the directory layout."""
        root = resolve_output_dir()
        assert get_plots_dir(root) == self.root / "plots"
        assert get_models_dir(root) == self.root / "artifacts" / "_models"
        artifacts = get_artifact_dir(root, "amnesiac", cell_dirname("one_class:c0", 5, 1))
        assert artifacts == self.root / "artifacts" / "amnesiac" / "one_class_c0-b5-s1"
        assert artifacts.is_dir()


@pytest.mark.parametrize(
    ("text", "expected"),
    [
        ("one_class:c0", "one_class_c0"),
        ("depoison:c0:backdoor", "depoison_c0_backdoor"),
        ("all_classes", "all_classes"),
        ("::", "_"),
    ],
)
def test_safe_name(text: str, expected: str) -> None:
    """Test filesystem safe names."""
    assert safe_name(text) == expected


def test_dir_size_bytes(tmp_path: Path) -> None:
    """Test recursive size accounting."""
    assert dir_size_bytes(tmp_path / "missing") == 0
    (tmp_path / "a.bin").write_bytes(b"x" * 10)
    (tmp_path / "nested").mkdir()
    (tmp_path / "nested" / "b.bin").write_bytes(b"y" * 5)
    assert dir_size_bytes(tmp_path) == 15
    assert dir_size_bytes(tmp_path / "a.bin") == 10
