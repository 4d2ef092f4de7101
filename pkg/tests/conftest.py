import os
import struct

import numpy as np
import pytest

from l0asso.data import MNIST_FILES, default_data_dir


def idx_images(pixels):
    """Reference IDX3 layout: magic, count, rows, cols (big-endian u32), then u8 pixels."""
    pixels = np.asarray(pixels, dtype=np.uint8)
    n, rows, cols = pixels.shape
    return struct.pack(">IIII", 0x803, n, rows, cols) + pixels.tobytes()


def idx_labels(labels):
    labels = np.asarray(labels, dtype=np.uint8)
    return struct.pack(">II", 0x801, len(labels)) + labels.tobytes()


def mnist_available(directory=None):
    directory = directory or default_data_dir()
    return all(os.path.isfile(os.path.join(directory, f)) for pair in MNIST_FILES.values() for f in pair)


@pytest.fixture(scope="session")
def mnist_dir():
    directory = default_data_dir()
    if not mnist_available(directory):
        pytest.skip(f"MNIST IDX files not found in {directory}")
    return directory


# -- acceptance summary -------------------------------------------------------

ACCEPTANCE_LINES = {}


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""

    def record(number, name, passed, detail):
        ACCEPTANCE_LINES[number] = f"criterion {number} ({name}): {'PASS' if passed else 'FAIL'} - {detail}"
        assert passed, detail

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])
