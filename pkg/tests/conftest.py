import pytest


@pytest.fixture(scope="session", autouse=True)
def hermetic_data():
    """Tests always run on the built-in synthetic set, never on a real
    CIFAR-10 directory a developer happens to have configured."""
    mp = pytest.MonkeyPatch()
    mp.delenv("HASHLEARN_CIFAR10", raising=False)
    yield
    mp.undo()
