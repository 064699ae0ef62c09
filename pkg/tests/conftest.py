import pytest

from helpers import build_miniworld


@pytest.fixture(scope="session")
def miniworld(tmp_path_factory):
    """Shared read-only end-to-end fixture; see helpers.build_miniworld."""
    return build_miniworld(tmp_path_factory.mktemp("miniworld"))
