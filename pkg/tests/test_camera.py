"""
Tests de la caméra fisheye équidistante.
"""

import math

import numpy as np
import pytest

from egopose.camera import FisheyeCamera, camera_from_dict, headset_to_camera, jitter_mount, project, unproject
from egopose.config import resolve_config
from egopose.errors import CameraError
from egopose.kinematics import quat_from_axis_angle


@pytest.fixture
def cam():
    return camera_from_dict(resolve_config(None)["camera"])


class TestProjection:
    def test_axe_optique_au_centre(self, cam):
        uv, visible = project(cam, np.array([0.0, 0.0, 1.0]))
        np.testing.assert_allclose(uv, cam.principal_point)
        assert visible

    def test_rayon_equidistant(self, cam):
        theta = 0.7
        uv, _ = project(cam, np.array([math.sin(theta), 0.0, math.cos(theta)]))
        assert uv[0] - cam.principal_point[0] == pytest.approx(cam.focal * theta)

    def test_bord_du_champ(self, cam):
        uv, _ = project(cam, np.array([1.0, 0.0, 0.0]))
        assert uv[0] - cam.principal_point[0] == pytest.approx(cam.max_radius)
        assert cam.max_radius == pytest.approx(184.0)

    def test_derriere_la_camera_invisible(self, cam):
        _, visible = project(cam, np.array([0.1, 0.0, -1.0]))
        assert not visible

    def test_point_au_centre_optique(self, cam):
        with pytest.raises(CameraError):
            project(cam, np.zeros(3))

    def test_invariance_a_l_echelle(self, cam):
        p = np.array([0.2, -0.1, 0.5])
        np.testing.assert_allclose(project(cam, p)[0], project(cam, 3.0 * p)[0])

    def test_symetrie_de_revolution(self, cam):
        gen = np.random.default_rng(1)
        points = gen.normal(size=(200, 3))
        points[:, 2] = np.abs(points[:, 2]) + 0.1
        centre = np.asarray(cam.principal_point)
        base, _ = project(cam, points)
        for alpha in (0.3, math.pi / 2, 2.5):
            c, s = math.cos(alpha), math.sin(alpha)
            turned = points @ np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])
            moved, _ = project(cam, turned)
            expected = (base - centre) @ np.array([[c, s], [-s, c]]) + centre
            np.testing.assert_allclose(moved, expected, atol=1e-9)

    def test_rayon_croissant_avec_theta(self, cam):
        theta = np.linspace(0.0, math.pi / 2, 200)
        for phi in (0.0, 1.0, -2.2):
            rays = np.stack([np.sin(theta) * math.cos(phi), np.sin(theta) * math.sin(phi), np.cos(theta)], axis=-1)
            uv, _ = project(cam, rays)
            radius = np.linalg.norm(uv - np.asarray(cam.principal_point), axis=-1)
            assert np.all(np.diff(radius) > 0)


class TestAllerRetour:
    def test_pixels(self, cam):
        gen = np.random.default_rng(0)
        r = gen.uniform(0.0, cam.max_radius * 0.999, size=1000)
        phi = gen.uniform(-math.pi, math.pi, size=1000)
        pixels = np.stack([cam.principal_point[0] + r * np.cos(phi), cam.principal_point[1] + r * np.sin(phi)], axis=-1)
        back, _ = project(cam, unproject(cam, pixels))
        assert np.max(np.abs(back - pixels)) < 1e-6

    def test_direction_unitaire(self, cam):
        rays = unproject(cam, np.array([[10.0, 200.0], [184.0, 184.0]]))
        np.testing.assert_allclose(np.linalg.norm(rays, axis=-1), 1.0)

    def test_hors_du_cercle_image(self, cam):
        with pytest.raises(CameraError):
            unproject(cam, np.array([0.0, 0.0]))


class TestMontage:
    def test_sans_perturbation(self, cam):
        assert jitter_mount(cam, 0, 0.0, 0.0) is cam

    def test_perturbation_deterministe(self, cam):
        a = jitter_mount(cam, 3, 0.005, math.radians(2))
        b = jitter_mount(cam, 3, 0.005, math.radians(2))
        assert a.same_as(b)
        assert not a.same_as(cam)

    def test_ecart_type_negatif(self, cam):
        with pytest.raises(CameraError):
            jitter_mount(cam, 0, -1.0, 0.0)

    def test_changement_de_repere(self):
        rot = quat_from_axis_angle(np.array([0.0, 0.0, 1.0]), math.pi / 2)
        cam = FisheyeCamera(mount_rotation=rot, mount_translation=np.array([0.0, 0.0, 0.1]))
        local = headset_to_camera(cam, np.array([0.0, 1.0, 0.1]))
        np.testing.assert_allclose(local, [1.0, 0.0, 0.0], atol=1e-12)

    def test_ecart_type_de_translation(self, cam):
        gen = np.random.default_rng(11)
        sigma = 0.005
        offsets = np.stack([
            jitter_mount(cam, gen, sigma, math.radians(1)).mount_translation - cam.mount_translation
            for _ in range(10000)
        ])
        assert offsets.std(axis=0) == pytest.approx(np.full(3, sigma), rel=0.1)
        assert np.abs(offsets.mean(axis=0)).max() < 0.1 * sigma


class TestConfiguration:
    def test_focale_par_defaut(self, cam):
        assert cam.focal == pytest.approx(368 / math.pi)
        assert cam.principal_point == (184.0, 184.0)

    def test_focale_invalide(self):
        with pytest.raises(CameraError):
            FisheyeCamera(focal=0.0)

    def test_point_principal_hors_image(self):
        with pytest.raises(CameraError):
            FisheyeCamera(principal_point=(400.0, 10.0))

    def test_cle_inconnue(self):
        with pytest.raises(CameraError):
            camera_from_dict({"focal": 100.0, "zoom": 2})
