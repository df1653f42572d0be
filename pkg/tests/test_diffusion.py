import math

import numpy as np
import pytest

from ilseg.diffusion import DiffusionParams, diffuse, tukey_flux
from ilseg.volgrid import Volume


def test_params_validation():
    with pytest.raises(ValueError):
        DiffusionParams(step=0.2)
    with pytest.raises(ValueError):
        DiffusionParams(iterations=0)
    with pytest.raises(ValueError):
        DiffusionParams(scale_sigma=0)
    assert DiffusionParams().step == pytest.approx(1 / 7)


@pytest.mark.parametrize("params", [DiffusionParams(), DiffusionParams(iterations=3, step=1 / 6, scale_sigma=5)])
def test_constant_volume_is_fixed_point(params):
    v = Volume(np.full((6, 5, 4), 42.5))
    assert diffuse(v, params).data.tobytes() == v.data.tobytes()


def test_tukey_flux_cutoff():
    sigma = 10.0
    cutoff = sigma * math.sqrt(5)
    assert tukey_flux(np.array(cutoff + 1e-9), sigma) == 0.0
    x = 7.0
    assert tukey_flux(np.array(x), sigma) == pytest.approx(x * (1 - (x / cutoff) ** 2) ** 2)


def test_strong_edge_blocks_flux():
    params = DiffusionParams(iterations=1, step=1 / 6, scale_sigma=10.0)
    a = 10.0 * math.sqrt(5) * 1.01
    v = Volume(np.array([[[0.0, a]]]))
    assert diffuse(v, params).data.tobytes() == v.data.tobytes()


def test_weak_edge_diffuses():
    params = DiffusionParams(iterations=1, step=1 / 6, scale_sigma=10.0)
    v = Volume(np.array([[[0.0, 6.0]]]))
    out = diffuse(v, params).data.ravel()
    g = (1 - (6.0 / (10.0 * math.sqrt(5))) ** 2) ** 2
    assert out[0] == pytest.approx(6.0 * g / 6, rel=1e-6)
    assert out[0] + out[1] == pytest.approx(6.0, rel=1e-6)


@pytest.mark.parametrize("seed", range(3))
def test_conservation_and_maximum_principle(seed):
    rng = np.random.default_rng(seed)
    v = Volume(rng.normal(50, 40, size=(16, 16, 16)))
    out = diffuse(v, DiffusionParams(iterations=10, step=1 / 6, scale_sigma=30.0))
    before = v.data.sum(dtype=np.float64)
    after = out.data.sum(dtype=np.float64)
    assert abs(after - before) <= 1e-3 * abs(before)
    assert out.data.min() >= v.data.min() - 1e-4
    assert out.data.max() <= v.data.max() + 1e-4


def test_deterministic():
    rng = np.random.default_rng(5)
    v = Volume(rng.normal(size=(8, 9, 10)) * 20)
    assert diffuse(v).data.tobytes() == diffuse(v).data.tobytes()


def test_perona_malik_switch():
    rng = np.random.default_rng(6)
    v = Volume(rng.normal(size=(8, 8, 8)) * 20)
    out = diffuse(v, DiffusionParams(edge_stop="perona_malik"))
    assert out.shape == v.shape
    assert out.data.std() < v.data.std()


def test_rejects_non_finite():
    class Fake:
        data = np.array([[[np.inf]]])

    with pytest.raises(ValueError):
        diffuse(Fake())
