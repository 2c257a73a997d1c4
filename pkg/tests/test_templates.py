import numpy as np
import pytest

from crownfit.errors import DegenerateGeometryError
from crownfit.mesh import GINGIVA, LabeledMesh, PointCloud, RigidTransform
from crownfit.synth import ArchSpec, fdi_to_class, generate_arch
from crownfit.templates import (CentroidCurve, build_average_curve, build_template_library,
                                derive_partials, extract_tooth_centroids,
                                load_template_library, save_template_library,
                                select_canonical, DEFAULT_CUT_SPECS)


def tiny_labeled_mesh(face_specs):
    """face_specs: list of (triangle vertices, label)."""
    vertices, faces, labels = [], [], []
    for tri, label in face_specs:
        base = len(vertices)
        vertices.extend(tri)
        faces.append([base, base + 1, base + 2])
        labels.append(label)
    return LabeledMesh(vertices, faces, None, labels)


class TestExtractCentroids:
    def test_single_square_at_origin(self):
        mesh = tiny_labeled_mesh([
            ([[-1, -1, 0], [1, -1, 0], [1, 1, 0]], 3),
            ([[-1, -1, 0], [1, 1, 0], [-1, 1, 0]], 3),
        ])
        cents = extract_tooth_centroids(mesh)
        assert np.allclose(cents[3], [0, 0, 0])

    def test_two_equal_faces_average(self):
        mesh = tiny_labeled_mesh([
            ([[0, 0, 0], [1, 0, 0], [0, 1, 0]], 5),
            ([[0, 0, 2], [1, 0, 2], [0, 1, 2]], 5),
        ])
        cents = extract_tooth_centroids(mesh)
        assert np.isclose(cents[5][2], 1.0)

    def test_arch_matches_generator_ground_truth(self, lower_arch):
        mesh, gt = lower_arch
        cents = extract_tooth_centroids(mesh)
        for cls, want in gt.centroids.items():
            assert np.linalg.norm(cents[cls] - want) < 0.1

    def test_unlabeled_rejected(self):
        mesh = tiny_labeled_mesh([([[0, 0, 0], [1, 0, 0], [0, 1, 0]], GINGIVA)])
        with pytest.raises(ValueError, match="no tooth labels"):
            extract_tooth_centroids(mesh)


class TestAverageCurve:
    def test_mean_of_one_equals_scan(self, lower_arch):
        mesh, _ = lower_arch
        curve = build_average_curve([mesh])
        cents = extract_tooth_centroids(mesh)
        for cls in curve.means:
            assert np.allclose(curve.means[cls], cents[cls])
            assert curve.counts[cls] == 1

    def test_mirrored_pair_symmetric_in_x(self):
        from crownfit.synth import mirror_x
        mesh, _ = generate_arch(ArchSpec.standard("Lower", "full"))
        # mirroring swaps left/right classes; relabel so classes align
        mirrored = mirror_x(mesh)
        swap = {c: (c + 8 if c <= 8 else c - 8) for c in range(1, 17)}
        labels = np.array([swap.get(int(l), int(l)) for l in mirrored.face_labels])
        curve = build_average_curve([mesh, mirrored.with_labels(labels)])
        for cls, mean in curve.means.items():
            partner = swap[cls]
            if partner in curve.means:
                assert abs(mean[0] + curve.means[partner][0]) < 1e-9

    def test_jittered_population_mean_near_truth(self):
        sigma = 0.5
        scans, baseline = [], None
        for seed in range(10):
            mesh, _ = generate_arch(
                ArchSpec.standard("Lower", "full", seed=seed, jitter_sigma=sigma))
            scans.append(mesh)
        base_mesh, _ = generate_arch(ArchSpec.standard("Lower", "full"))
        base = extract_tooth_centroids(base_mesh)
        curve = build_average_curve(scans)
        bound = 3 * sigma / np.sqrt(10)
        for cls, mean in curve.means.items():
            assert np.all(np.abs(mean - base[cls]) < bound + 0.05)

    def test_equivariant_under_rigid_transform(self):
        meshes = [generate_arch(ArchSpec.standard("Lower", "full", seed=s,
                                                  jitter_sigma=0.3))[0] for s in range(3)]
        t = RigidTransform.from_axis_angle((0.3, 0.2, 0.9), 0.7, (4.0, -2.0, 1.0))
        curve = build_average_curve(meshes)
        moved = build_average_curve([m.transformed(t) for m in meshes])
        for cls in curve.means:
            assert np.allclose(moved.means[cls], t.apply(curve.means[cls]), atol=1e-9)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            build_average_curve([])


class TestSelectCanonical:
    def test_zero_distance_scan_wins(self):
        base, _ = generate_arch(ArchSpec.standard("Lower", "full"))
        jittered = [generate_arch(ArchSpec.standard("Lower", "full", seed=s,
                                                    jitter_sigma=0.5))[0] for s in (1, 2)]
        curve = build_average_curve([base])
        assert select_canonical(jittered + [base], curve) == 2

    def test_matches_brute_force(self):
        scans = [generate_arch(ArchSpec.standard("Lower", "full", seed=s,
                                                 jitter_sigma=0.5))[0] for s in range(5)]
        curve = build_average_curve(scans)
        vals = []
        for scan in scans:
            cents = extract_tooth_centroids(scan)
            shared = [c for c in cents if c in curve.means]
            vals.append(np.mean([np.linalg.norm(cents[c] - curve.means[c]) for c in shared]))
        assert select_canonical(scans, curve) == int(np.argmin(vals))

    def test_tie_breaks_to_lowest_index(self, lower_arch):
        mesh, _ = lower_arch
        curve = build_average_curve([mesh])
        assert select_canonical([mesh, mesh], curve) == 0

    def test_no_shared_class_rejected(self, lower_arch):
        mesh, _ = lower_arch
        lone = tiny_labeled_mesh([([[0, 0, 0], [1, 0, 0], [0, 1, 0]], 4)])
        curve = CentroidCurve({9: np.zeros(3)}, {9: 1})
        with pytest.raises(ValueError, match="shares no class"):
            select_canonical([lone], curve)


class TestDerivePartials:
    def test_identity_cut_keeps_all_teeth(self, lower_arch):
        mesh, _ = lower_arch
        partial = derive_partials(mesh, "Left", cut_spec=tuple(range(1, 17)))
        kept = set(np.unique(partial.face_labels)) - {GINGIVA}
        want = set(np.unique(mesh.face_labels)) - {GINGIVA}
        assert kept == want

    def test_left_cut_keeps_left_lateral_classes_only(self, lower_arch):
        mesh, _ = lower_arch
        partial = derive_partials(mesh, "Left")
        kept = set(int(c) for c in np.unique(partial.face_labels)) - {GINGIVA}
        assert kept <= set(DEFAULT_CUT_SPECS["Left"])
        assert kept  # non-empty

    def test_center_cut_keeps_anterior_classes(self, lower_arch):
        mesh, _ = lower_arch
        partial = derive_partials(mesh, "Center")
        kept = set(int(c) for c in np.unique(partial.face_labels)) - {GINGIVA}
        assert kept <= {1, 2, 3, 9, 10, 11}

    def test_vertices_subset_of_master(self, lower_arch):
        mesh, _ = lower_arch
        partial = derive_partials(mesh, "Right")
        master_set = {tuple(v) for v in mesh.vertices}
        assert all(tuple(v) in master_set for v in partial.vertices)

    def test_empty_cut_rejected(self, lower_arch):
        mesh, _ = lower_arch
        with pytest.raises(ValueError):
            derive_partials(mesh, "Left", cut_spec=())
        with pytest.raises(DegenerateGeometryError):
            derive_partials(mesh, "Left", cut_spec=(16,) if 16 not in
                            set(np.unique(mesh.face_labels)) else (99,))


@pytest.fixture(scope="module")
def library():
    upper = [generate_arch(ArchSpec.standard("Upper", "full", seed=s,
                                             jitter_sigma=0.3))[0] for s in range(2)]
    lower = [generate_arch(ArchSpec.standard("Lower", "full", seed=s,
                                             jitter_sigma=0.3))[0] for s in range(2)]
    return build_template_library(upper, lower)


class TestLibrary:
    def test_six_partials(self, library):
        assert len(library.partials) == 6

    def test_partial_registers_back_with_high_fitness(self, library):
        from crownfit.registration import RegistrationParams, fine_register
        from crownfit.mesh import estimate_vertex_normals, voxel_downsample
        master = estimate_vertex_normals(library.master_lower)
        partial = library.partial("Lower", "Left")
        src = voxel_downsample(PointCloud(partial.vertices), 0.8)
        tgt = voxel_downsample(master.to_point_cloud(), 0.8)
        result = fine_register(src, tgt, RigidTransform.identity(), RegistrationParams())
        assert result.fitness >= 0.99

    def test_persistence_round_trip(self, library, tmp_path):
        save_template_library(library, tmp_path / "lib")
        back = load_template_library(tmp_path / "lib")
        assert np.array_equal(back.master_upper.vertices, library.master_upper.vertices)
        for key, mesh in library.partials.items():
            assert np.array_equal(back.partials[key].faces, mesh.faces)
            assert np.array_equal(back.partials[key].face_labels, mesh.face_labels)


def test_prepared_tooth_class_present(prepared_lower_arch):
    mesh, gt = prepared_lower_arch
    assert 17 in gt.centroids
    assert fdi_to_class(36) not in np.unique(mesh.face_labels)
