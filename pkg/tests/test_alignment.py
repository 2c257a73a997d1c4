import numpy as np
import pytest

from crownfit.alignment import (DEFAULT_TAU, AlignmentResult, CrownTemplate, TargetVectors,
                                align_crown, fit_arch_spline, robust_target,
                                spline_frame_at)
from crownfit.errors import AlignmentWarning, DegenerateGeometryError
from crownfit.mesh import RigidTransform
from crownfit.synth import CrownDims, generate_crown_fixture


def z3(xy_points):
    return np.column_stack([np.asarray(xy_points, dtype=float), np.zeros(len(xy_points))])


@pytest.fixture(scope="module")
def posterior_crown():
    return generate_crown_fixture("bumped_posterior")


def aligned_targets(crown, occlusal=None):
    """Targets equal to the crown's own normals: the fixed-point setup."""
    return TargetVectors(
        v_mesial_ref=[1, 0, 0],
        v_buccal_ref=[0, 1, 0],
        v_mesial_robust=crown.mesial_normal,
        v_buccal_robust=crown.buccal_normal,
        prep_centroid=crown.mesh.centroid(),
        occlusal_axis=crown.occlusal_normal if occlusal is None else occlusal,
    )


class TestArchSpline:
    def test_collinear_centroids_constant_tangent(self):
        pts = z3([[0, 0], [1, 0], [2, 0], [3, 0]])
        spline = fit_arch_spline(pts)
        for t in np.linspace(spline.t_min, spline.t_max, 7):
            assert np.allclose(spline.tangent(t), [1, 0], atol=1e-9)

    def test_interpolates_knots_exactly(self):
        pts = z3([[0, 0], [1, 2], [3, 1], [4, 4]])
        spline = fit_arch_spline(pts)
        for knot, p in zip(spline.knots, pts[:, :2]):
            assert np.allclose(spline.evaluate(knot), p, atol=1e-9)

    def test_parabola_midpoints_within_tolerance(self):
        xs = np.arange(-20, 21, 5, dtype=float)
        pts = z3(np.column_stack([xs, xs**2 / 20.0]))
        spline = fit_arch_spline(pts)
        for xm in (xs[:-1] + xs[1:]) / 2.0:
            target = np.array([xm, xm**2 / 20.0])
            t = spline.project(target)
            assert np.linalg.norm(spline.evaluate(t) - target) < 0.05

    def test_too_few_points_rejected(self):
        with pytest.raises(ValueError):
            fit_arch_spline(z3([[0, 0], [1, 1]]))

    def test_duplicate_consecutive_rejected(self):
        with pytest.raises(DegenerateGeometryError):
            fit_arch_spline(z3([[0, 0], [0, 0], [1, 1]]))


class TestSplineFrame:
    def test_straight_line_rule(self):
        spline = fit_arch_spline(z3([[0, 0], [1, 0], [2, 0], [3, 0], [4, 0]]))
        v_m, v_b = spline_frame_at(spline, [2.0, 1.0, 0.0])
        assert np.isclose(abs(v_m[0]), 1.0) and v_m[2] == 0.0
        # outward via the arch-centroid fallback: toward the prep side
        assert np.allclose(v_b, [0, 1, 0], atol=1e-12)

    def test_parabola_apex_buccal_away_from_concavity(self):
        xs = np.arange(-20, 21, 5, dtype=float)
        spline = fit_arch_spline(z3(np.column_stack([xs, xs**2 / 20.0])))
        _, v_b = spline_frame_at(spline, [0.0, 0.0, 0.0])
        assert np.allclose(v_b, [0, -1, 0], atol=1e-6)

    def test_tangent_has_zero_z(self):
        xs = np.arange(-20, 21, 5, dtype=float)
        pts = np.column_stack([xs, xs**2 / 20.0, np.linspace(-3, 3, len(xs))])
        spline = fit_arch_spline(pts)
        v_m, v_b = spline_frame_at(spline, [5.0, 2.0, 7.0])
        assert v_m[2] == 0.0
        assert v_b[2] == 0.0

    def test_mesial_points_toward_midline(self):
        # downward-opening dental arch ordered right -> left, apex at +y
        xs = np.linspace(-20, 20, 11)
        pts = z3(np.column_stack([xs, 30.0 * (1 - (xs / 20.0) ** 2)]))
        spline = fit_arch_spline(pts, midline_index=5.0)
        v_m_right, _ = spline_frame_at(spline, [-15.0, 30.0 * (1 - 0.5625), 0.0])
        v_m_left, _ = spline_frame_at(spline, [15.0, 30.0 * (1 - 0.5625), 0.0])
        assert v_m_right[0] > 0  # right side: mesial goes toward +x (midline)
        assert v_m_left[0] < 0

    def test_projection_outside_range_warns(self):
        spline = fit_arch_spline(z3([[0, 0], [1, 0], [2, 0]]))
        with pytest.warns(AlignmentWarning, match="clamped"):
            spline_frame_at(spline, [10.0, 0.0, 0.0])


class TestRobustTarget:
    def test_all_equal_returns_ref(self):
        out = robust_target(np.tile([0.0, 0, 1], (5, 1)), [0, 0, 1])
        assert np.allclose(out, [0, 0, 1])

    def test_tau_admits_exactly_within_53_13_degrees(self):
        # acos(0.6) = 53.1301... degrees; the gate is a strict dot threshold
        assert np.isclose(np.degrees(np.arccos(DEFAULT_TAU)), 53.13010235415598)
        ref = np.array([0.0, 0.0, 1.0])
        inside = np.array([np.sin(np.radians(53.0)), 0, np.cos(np.radians(53.0))])
        outside = np.array([np.sin(np.radians(53.2)), 0, np.cos(np.radians(53.2))])
        out = robust_target([inside, outside], ref, tau=0.6)
        # only the inside normal passes: the mean equals it
        assert np.allclose(out, inside, atol=1e-12)

    def test_perpendicular_filtered_out(self):
        ref = np.array([1.0, 0, 0])
        out = robust_target([[1, 0, 0], [0, 1, 0]], ref)
        assert np.allclose(out, [1, 0, 0])

    def test_empty_filter_falls_back_with_warning(self):
        with pytest.warns(AlignmentWarning):
            out = robust_target([[0, 1, 0]], [1, 0, 0], tau=0.6)
        assert np.allclose(out, [1, 0, 0])

    def test_output_dot_ref_at_least_tau(self, rng):
        ref = np.array([0.0, 0, 1.0])
        normals = rng.normal(size=(200, 3))
        normals /= np.linalg.norm(normals, axis=1, keepdims=True)
        out = robust_target(normals, ref, tau=0.6)
        if not np.allclose(out, ref):
            assert np.dot(out, ref) >= 0.6


class TestAlignCrown:
    def test_already_aligned_identity(self, posterior_crown):
        result = align_crown(posterior_crown, aligned_targets(posterior_crown))
        assert result.transform.rotation_angle_deg() < 1e-9
        assert np.linalg.norm(result.transform.translation) < 1e-9

    def test_inverts_constructed_rotation(self, posterior_crown):
        crown = posterior_crown
        targets = aligned_targets(crown)
        rot = RigidTransform.from_axis_angle((0, 0, 1), np.radians(30.0))
        rotated = CrownTemplate.from_mesh(crown.mesh.transformed(rot))
        result = align_crown(rotated, targets)
        # the composition of the applied 30-degree turn and the alignment is identity
        residual = result.transform.compose(rot)
        assert residual.rotation_angle_deg() < 1e-6

    def test_per_step_postconditions(self, posterior_crown, rng):
        crown = posterior_crown
        for seed in range(5):
            r = np.random.default_rng(seed)
            v_m = r.normal(size=3)
            v_m /= np.linalg.norm(v_m)
            helper = r.normal(size=3)
            v_b = np.cross(v_m, helper)
            v_b /= np.linalg.norm(v_b)
            targets = TargetVectors(
                v_mesial_ref=[1, 0, 0], v_buccal_ref=[0, 1, 0],
                v_mesial_robust=v_m, v_buccal_robust=v_b,
                prep_centroid=r.normal(size=3) * 10,
            )
            result = align_crown(crown, targets)
            assert result.step("mesial").achieved_dot >= 1.0 - 1e-9
            buccal_err_rad = np.arccos(np.clip(result.step("buccal").achieved_dot, -1, 1))
            assert buccal_err_rad <= 1e-6
            assert result.step("occlusal").achieved_dot >= 0.999
            r_mat = result.transform.rotation
            assert np.isclose(np.linalg.det(r_mat), 1.0, atol=1e-9)
            assert np.abs(r_mat @ r_mat.T - np.eye(3)).max() < 1e-9

    def test_buccal_step_preserves_mesial_exactly(self, posterior_crown):
        crown = posterior_crown
        v_m = np.array([0.0, 1.0, 0.0])
        v_b = np.array([0.0, 0.0, 1.0])
        targets = TargetVectors(
            v_mesial_ref=[1, 0, 0], v_buccal_ref=[0, 1, 0],
            v_mesial_robust=v_m, v_buccal_robust=v_b,
            prep_centroid=[0, 0, 0],
        )
        r1 = RigidTransform.rotation_between(crown.mesial_normal, v_m)
        b_now = r1 @ crown.buccal_normal
        b_proj = b_now - (b_now @ v_m) * v_m
        t_proj = v_b - (v_b @ v_m) * v_m
        angle = np.arctan2(np.dot(np.cross(b_proj / np.linalg.norm(b_proj),
                                           t_proj / np.linalg.norm(t_proj)), v_m),
                           np.dot(b_proj / np.linalg.norm(b_proj),
                                  t_proj / np.linalg.norm(t_proj)))
        r2 = RigidTransform.from_axis_angle(v_m, angle).rotation
        m_after = r2 @ (r1 @ crown.mesial_normal)
        assert np.dot(m_after, v_m) >= 1.0 - 1e-9

    def test_translation_takes_centroid_to_prep(self, posterior_crown):
        targets = aligned_targets(posterior_crown)
        targets = TargetVectors(
            v_mesial_ref=targets.v_mesial_ref, v_buccal_ref=targets.v_buccal_ref,
            v_mesial_robust=targets.v_mesial_robust,
            v_buccal_robust=targets.v_buccal_robust,
            prep_centroid=[5.0, -3.0, 2.0],
            occlusal_axis=targets.occlusal_axis,
        )
        result = align_crown(posterior_crown, targets)
        moved = posterior_crown.mesh.transformed(result.transform)
        assert np.allclose(moved.centroid(), [5.0, -3.0, 2.0], atol=1e-9)

    def test_antiparallel_mesial_deterministic(self, posterior_crown):
        targets = TargetVectors(
            v_mesial_ref=[1, 0, 0], v_buccal_ref=[0, 1, 0],
            v_mesial_robust=-posterior_crown.mesial_normal,
            v_buccal_robust=posterior_crown.buccal_normal,
            prep_centroid=[0, 0, 0],
        )
        a = align_crown(posterior_crown, targets)
        b = align_crown(posterior_crown, targets)
        assert np.array_equal(a.transform.rotation, b.transform.rotation)
        assert a.step("mesial").achieved_dot >= 1.0 - 1e-9

    def test_buccal_parallel_to_mesial_degenerate(self, posterior_crown):
        v = posterior_crown.buccal_normal
        targets = TargetVectors(
            v_mesial_ref=[1, 0, 0], v_buccal_ref=[0, 1, 0],
            v_mesial_robust=posterior_crown.buccal_normal,  # mesial target = buccal normal
            v_buccal_robust=v,
            prep_centroid=[0, 0, 0],
        )
        with pytest.raises(DegenerateGeometryError):
            align_crown(posterior_crown, targets)


class TestCrownTemplate:
    def test_region_masks_disjoint_and_nonempty(self, posterior_crown):
        a = set(posterior_crown.mesial_faces.tolist())
        b = set(posterior_crown.buccal_faces.tolist())
        c = set(posterior_crown.occlusal_faces.tolist())
        assert a and b and c
        assert not (a & b or a & c or b & c)

    def test_unlabeled_mesh_rejected(self, posterior_crown):
        from crownfit.mesh import LabeledMesh
        bare = LabeledMesh(posterior_crown.mesh.vertices, posterior_crown.mesh.faces)
        with pytest.raises(ValueError):
            CrownTemplate.from_mesh(bare)

    def test_targets_validation(self):
        with pytest.raises(ValueError, match="unit length"):
            TargetVectors([2, 0, 0], [0, 1, 0], [1, 0, 0], [0, 1, 0], [0, 0, 0])
        with pytest.raises(ValueError, match="tau"):
            TargetVectors([1, 0, 0], [0, 1, 0], [1, 0, 0], [0, 1, 0], [0, 0, 0], tau=1.5)
