import json

import numpy as np
import pytest
from scipy import integrate

from spadtwin.detector import SpadConfig
from spadtwin.optics import (BeamProfile, Constant, Disk, Footprint, Gaussian, OpticsConfig, Ramp, Raster,
                             Scene, beam_intensity, collect_flux, environment_at, footprint_kernel,
                             load_scene, pixel_footprint, pixel_spacing, pixel_weights)


def test_footprint_geometry():
    fp = pixel_footprint(OpticsConfig(magnification=125), (0, 0))
    assert fp.diameter == pytest.approx(0.24)
    assert pixel_spacing(OpticsConfig(magnification=125)) == pytest.approx(1.2)
    assert pixel_spacing(OpticsConfig(magnification=50)) == pytest.approx(3.0)
    assert 64 * pixel_spacing(OpticsConfig(magnification=10)) == pytest.approx(960.0)


def test_footprint_position_and_range():
    fp = pixel_footprint(OpticsConfig(magnification=50), (2, 5), (10.0, 20.0))
    assert fp.center == (25.0, 26.0)
    with pytest.raises(IndexError):
        pixel_footprint(OpticsConfig(), (32, 0))


def test_microlens_footprint_is_square_pitch():
    fp = pixel_footprint(OpticsConfig(magnification=50, microlens=True), (0, 0))
    assert fp.square and fp.diameter == pytest.approx(3.0)


def test_beam_profile():
    b = BeamProfile((0, 0), 30.0, 2.0)
    assert beam_intensity(b, 0, 0) == pytest.approx(2.0)
    assert beam_intensity(b, 15, 0) == pytest.approx(2.0 * np.exp(-2))
    r = np.linspace(0.1, 200, 50)
    assert np.all(beam_intensity(BeamProfile.focused(), r, 0) < beam_intensity(BeamProfile.broad(diameter=200), r, 0))


def test_kernel_matches_numerical_integral():
    # probability of landing in a disk, checked against direct 2-D integration
    fp = Footprint((0.0, 0.0), 0.6)
    sigma, dx = 0.3, 0.4
    g = lambda y, x: np.exp(-((x - dx) ** 2 + y ** 2) / (2 * sigma ** 2)) / (2 * np.pi * sigma ** 2)
    val, _ = integrate.dblquad(g, -0.3, 0.3, lambda x: -np.sqrt(max(0.09 - x * x, 0)),
                               lambda x: np.sqrt(max(0.09 - x * x, 0)))
    assert footprint_kernel(fp, sigma, dx, 0.0) == pytest.approx(val, rel=1e-6)


def test_square_kernel():
    fp = Footprint((0.0, 0.0), 1.0, square=True)
    assert footprint_kernel(fp, 1e-6, 0.0, 0.0) == pytest.approx(1.0)
    assert footprint_kernel(fp, 1e-6, 0.8, 0.0) == pytest.approx(0.0)


def test_uniform_flux_is_b_times_area_times_efficiency():
    optics = OpticsConfig(magnification=50)
    scene = Scene((-10, 10, -10, 10), 0.05, {"brightness": Constant(1e8)})
    flux = collect_flux(scene, optics, (0, 0), (0.0, 0.0))
    area = np.pi * 0.3 ** 2
    assert flux.flux == pytest.approx(1e8 * area * optics.efficiency, rel=2e-3)


def test_point_emitter_falloff():
    optics = OpticsConfig(magnification=50)
    fwhm = optics.psf_fwhm
    emitter = lambda cx: Scene((-10, 10, -10, 10), 0.05,
                               {"brightness": Gaussian((cx, 0.0), 0.1, 1e9)})
    on = collect_flux(emitter(0.0), optics, (0, 0)).flux
    off = collect_flux(emitter(3 * fwhm + 0.3), optics, (0, 0)).flux
    assert on / max(off, 1e-300) > 100


def test_preset_brightness_stays_below_saturation():
    from spadtwin.runconfig import BRIGHTNESS
    optics = OpticsConfig(magnification=50)
    scene = Scene((-10, 10, -10, 10), 0.3, {"brightness": Constant(BRIGHTNESS)})
    assert collect_flux(scene, optics, (0, 0)).flux <= 20e6


def test_environment_uniform_and_ramp():
    optics = OpticsConfig(magnification=50)
    scene = Scene((-10, 40, -10, 10), 0.1, {"brightness": Constant(1.0), "dBz": Constant(0.3),
                                            "mw_amp": Ramp(5.0, (0.01, 0.0))})
    env = environment_at(scene, optics, (0, 3))
    assert env.dBz == pytest.approx(0.3)
    assert env.mw_amp == pytest.approx(5.0 + 0.01 * 9.0, abs=0.01 * 0.1)


def test_environment_weighted_two_cells():
    # brightness 2:1 on the two halves of a footprint weights dD toward the bright side
    optics = OpticsConfig(magnification=50, psf_fwhm=0.02)
    scene = Scene((-1, 1, -1, 1), 0.01, {"brightness": Disk((-10.0, 0.0), 10.0, 2.0, 1.0),
                                         "dD": Disk((-10.0, 0.0), 10.0, 0.0, 3.0)})
    env = environment_at(scene, optics, (0, 0))
    assert env.dD == pytest.approx(1.0, rel=0.02)


def test_spacing_guard():
    scene = Scene((0, 10, 0, 10), 0.5, {"brightness": Constant(1.0)})
    with pytest.raises(ValueError, match="spacing"):
        pixel_weights(scene, OpticsConfig(), pixels=[(0, 0)])


def test_negative_field_rejected():
    scene = Scene((0, 10, 0, 10), 0.3, {"brightness": Constant(1.0), "mw_amp": Constant(-1)})
    with pytest.raises(ValueError, match="mw_amp"):
        scene.sample(np.array([1.0]), np.array([1.0]))


def test_pixel_outside_scene_not_in_field():
    scene = Scene((-5, 5, -5, 5), 0.3, {"brightness": Constant(1.0)})
    w = pixel_weights(scene, OpticsConfig(), pixels=[(0, 0), (0, 63)])
    assert w.in_field.tolist() == [True, False]


def test_raster_bilinear():
    r = Raster(np.array([[0.0, 1.0], [2.0, 3.0]]), (0, 0), 1.0)
    assert r(0.5, 0.5) == pytest.approx(1.5)


def test_scene_from_json(tmp_path):
    np.save(tmp_path / "dbz.npy", np.ones((3, 3)))
    d = {"extent_um": [0, 10, 0, 10], "spacing_um": 0.3,
         "beams": {"spot": {"center": [5, 5], "diameter": 4}},
         "fields": {"brightness": [1.0, {"type": "beam", "beam": "spot", "scale": 2.0}],
                    "dBz": {"type": "raster", "values": "dbz.npy", "spacing": 5.0},
                    "spin_density": {"type": "product", "a": 2.0, "b": {"type": "disk", "center": [5, 5],
                                                                          "radius": 1}}}}
    p = tmp_path / "scene.json"
    p.write_text(json.dumps(d))
    s = load_scene(p)
    vals = s.sample(np.array([5.0]), np.array([5.0]))
    assert vals["brightness"][0] == pytest.approx(3.0)
    assert vals["dBz"][0] == pytest.approx(1.0)
    assert vals["spin_density"][0] == pytest.approx(2.0)


def test_scene_requires_brightness():
    with pytest.raises(ValueError):
        Scene((0, 1, 0, 1), 0.1, {})


def test_weights_shape(uniform_scene, optics50):
    w = pixel_weights(uniform_scene, optics50, cfg=SpadConfig())
    assert w.flux.shape == (32, 64)
    assert np.allclose(w.flux, w.flux.mean(), rtol=1e-6)
