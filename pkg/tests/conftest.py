import numpy as np
import pytest

from gscaec.gsc_core import build_gsc
from gscaec.harness import PlantConfig
from gscaec.signal_model import FarEndModel, NearEndModel


def rand_spd(rng, n, scale=1.0):
    a = rng.standard_normal((n, n))
    return scale * (a @ a.T / n + 0.1 * np.eye(n))


@pytest.fixture
def rng():
    return np.random.default_rng(20240801)


@pytest.fixture
def small_setup():
    """Small GSC problem shared by engine/model tests."""
    plant_cfg = PlantConfig(M=2, N_h=12, fs=8000.0, T_R60=0.0015, F=4, mic_spacing=1, seed=7)
    gsc = build_gsc(2, 3, 3, "allpass", 8)
    far = FarEndModel("ar1", a1=-0.6)
    near = NearEndModel(noise_var=0.02)
    return plant_cfg, gsc, far, near
