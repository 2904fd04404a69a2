import pytest

from ckptbench.engine import direct_io_supported


@pytest.fixture(scope="session")
def direct_supported(tmp_path_factory) -> bool:
    return direct_io_supported(tmp_path_factory.mktemp("direct-probe"))


@pytest.fixture(scope="session")
def require_direct(direct_supported):
    if not direct_supported:
        pytest.skip("filesystem does not support O_DIRECT")
    return True
