import pytest

from takd import synth


@pytest.fixture(scope="session")
def micro_ds():
    """12 windows, 3 subjects, one speed; enough to drive training loops."""
    return synth.generate_dataset(3, speeds=("SW",), windows_per_trial=4,
                                  window=100, seed=7, noise_sigma=0.15)


@pytest.fixture(scope="session")
def tiny_widths():
    """Teacher-shaped but small: keeps unit-test training runs to seconds."""
    return {"enc_widths": (4, 6, 8, 8), "dec_widths": (16, 16, 16, 16)}
