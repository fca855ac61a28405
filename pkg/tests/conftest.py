import pytest

from superatom_lab import params


@pytest.fixture(scope="session")
def ref():
    """Reference parameter set shared across tests (immutable)."""
    return params.default_params()
