import pytest

from scenegan.data import SynthConfig, generate_dataset


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """64 clevr-2 images at 16x16; returns the dataset directory."""
    root = tmp_path_factory.mktemp("data")
    generate_dataset(SynthConfig.preset("clevr-2", resolution=16), 64, seed=0, root=root)
    return root / "clevr-2"


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE
    if ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
