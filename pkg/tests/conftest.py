import pytest

from gridrisk import cases


@pytest.fixture(scope="session")
def two_bus():
    return cases.two_bus()


@pytest.fixture(scope="session")
def triangle():
    return cases.triangle()


@pytest.fixture(scope="session")
def toy6():
    return cases.toy6()


@pytest.fixture(scope="session")
def rts96():
    return cases.rts96()
