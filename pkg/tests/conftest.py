import pytest
from pathlib import Path

from climcheck.domain import load_manifest

FIXTURES = Path(__file__).resolve().parent / "fixtures"


@pytest.fixture(scope="session")
def golden12_dir() -> Path:
    return FIXTURES / "golden12"


@pytest.fixture(scope="session")
def samples12(golden12_dir):
    return load_manifest(golden12_dir / "manifest.jsonl")
