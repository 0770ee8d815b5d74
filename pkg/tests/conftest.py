import struct

import numpy as np
import pytest


def raw_nifti(data, datatype, endian="<", slope=0.0, inter=0.0, spacing=(1.0, 1.0, 1.0), magic=b"n+1\x00", vox_offset=352.0, sizeof_hdr=348, bitpix=None):
    """Hand-assembled single-file NIfTI-1 stream, independent of the package writer."""
    codes = {2: ("u1", 8), 4: ("i2", 16), 16: ("f4", 32)}
    data = np.asarray(data)
    nx, ny, nz = data.shape
    hdr = bytearray(int(vox_offset))
    struct.pack_into(endian + "i", hdr, 0, sizeof_hdr)
    struct.pack_into(endian + "8h", hdr, 40, 3, nx, ny, nz, 1, 1, 1, 1)
    struct.pack_into(endian + "h", hdr, 70, datatype)
    struct.pack_into(endian + "h", hdr, 72, bitpix if bitpix is not None else codes.get(datatype, ("u1", 8))[1])
    struct.pack_into(endian + "8f", hdr, 76, 1.0, *spacing, 0, 0, 0, 0)
    struct.pack_into(endian + "f", hdr, 108, vox_offset)
    struct.pack_into(endian + "ff", hdr, 112, slope, inter)
    hdr[344:348] = magic
    code = codes.get(datatype, ("u1", 8))[0]
    return bytes(hdr) + data.astype(endian + code).tobytes(order="F")


ACCEPTANCE_RESULTS = []


def report_criterion(number, title, passed, detail=""):
    """Record one acceptance verdict; the terminal summary prints them all."""
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'} - {title}" + (f" ({detail})" if detail else "")
    ACCEPTANCE_RESULTS.append((number, line))
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_RESULTS):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def tiny_experiment(**overrides):
    """A grid small enough to run in a second or two per cell."""
    from xaugseg.experiment import ExperimentConfig
    from xaugseg.model import NetworkConfig
    from xaugseg.patching import TilingConfig
    from xaugseg.phantom import PhantomConfig

    kwargs = dict(
        training_sizes=[1, 2],
        aug_levels=[0, 2],
        epochs=1,
        validation_size=2,
        batch_size=4,
        phantom=PhantomConfig(dims=(16, 16, 2), n_discs=1, semi_axis_x=(3, 5), semi_axis_y=(1.5, 2.5), semi_axis_z=(1, 2)),
        tiling=TilingConfig(8, 8),
        network=NetworkConfig(1, 2, 8),
    )
    kwargs.update(overrides)
    return ExperimentConfig(**kwargs)
