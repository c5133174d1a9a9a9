import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))  # for reference_pf

from gridsigma import builtin_ieee14, build_dataset, default_layout, synth_load_profile
from gridsigma import detectors

GOLDEN_DIR = Path(__file__).parent / "golden_prompts" / "v1"


def pytest_addoption(parser):
    parser.addoption(
        "--update-golden",
        action="store_true",
        default=False,
        help="rewrite golden prompt snapshots instead of comparing",
    )


@pytest.fixture(scope="session")
def update_golden(request):
    return request.config.getoption("--update-golden")


@pytest.fixture(scope="session")
def ieee14():
    return builtin_ieee14()


@pytest.fixture(scope="session")
def layout68(ieee14):
    return default_layout(ieee14)


@pytest.fixture(scope="session")
def dataset42(ieee14, layout68):
    """The default benchmark dataset: 1600 samples, seed 42."""
    profile = synth_load_profile(800, len(ieee14.buses), seed=42)
    return build_dataset(ieee14, profile, layout68, seed=42)


@pytest.fixture(scope="session")
def model42(dataset42):
    """Trained and calibrated detector on the seed-42 dataset."""
    train_normals = [s for s in dataset42.split_samples("train") if s.label == "normal"]
    val_normals = [
        s for s in dataset42.split_samples("validation") if s.label == "normal"
    ]
    model = detectors.train_autoencoder(
        train_normals, seed=42, val_normals=val_normals, stats=dataset42.stats
    )
    return detectors.calibrate(model, dataset42.split_samples("validation"))
