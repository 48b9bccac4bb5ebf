from pathlib import Path

import pytest

from app.api.codec import load_problem

SUITE = Path(__file__).resolve().parent.parent / "data" / "suite"


@pytest.fixture
def suite_dir() -> Path:
    return SUITE


@pytest.fixture
def suite():
    """Loader for the bundled problem files by stem."""
    def _load(name: str):
        return load_problem(SUITE / f"{name}.json")
    return _load
