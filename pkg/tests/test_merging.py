import numpy as np
import pytest

from csfm.averaging import CommunitySimilarity
from csfm.errors import ValidationError
from csfm.merging import (
    evaluate_against_truth,
    export_ply,
    joint_refine,
    load_merged,
    merge_reconstructions,
    save_merged,
)
from csfm.reconstruction import Reconstruction
from csfm.rotations import (
    IDENTITY_QUAT,
    geodesic_angle,
    quat_multiply,
    quat_to_matrix,
    random_quat,
)
from csfm.sim3 import Sim3

from helpers import random_sim3


def rz(angle):
    return np.array([np.cos(angle / 2), 0.0, 0.0, np.sin(angle / 2)])


def identity_transform(cid):
    return CommunitySimilarity(community_id=cid, s=1.0, r=IDENTITY_QUAT, t=np.zeros(3))


def simple_rec(cid, cam_ids, tracks, points, rng, centers=None, rotations=None):
    n = len(cam_ids)
    return Reconstruction(
        community_id=cid,
        camera_ids=np.asarray(cam_ids),
        camera_rotations=rotations if rotations is not None else np.stack([random_quat(rng) for _ in range(n)]),
        camera_centers=centers if centers is not None else rng.normal(size=(n, 3)),
        track_ids=np.asarray(tracks),
        points=np.asarray(points, dtype=float),
    )


class TestMerge:
    def test_identity_transform_is_identity(self):
        rng = np.random.default_rng(0)
        rec = simple_rec(0, [0, 1, 2], [10, 11], rng.normal(size=(2, 3)), rng)
        model = merge_reconstructions([rec], [identity_transform(0)])
        assert np.array_equal(model.camera_ids, rec.camera_ids)
        assert np.allclose(model.camera_centers, rec.camera_centers, atol=0)
        assert np.allclose(model.camera_rotations, rec.camera_rotations, atol=0)
        assert np.allclose(model.points, rec.points, atol=0)

    def test_camera_center_formula(self):
        # C_g = s R C + T with s=2, quarter turn, lift: (1,0,0) -> (0,2,1)
        rng = np.random.default_rng(1)
        rec = simple_rec(
            0, [5], [1], [[0.0, 0.0, 0.0]], rng, centers=np.array([[1.0, 0.0, 0.0]])
        )
        tr = CommunitySimilarity(community_id=0, s=2.0, r=rz(np.pi / 2), t=np.array([0.0, 0.0, 1.0]))
        model = merge_reconstructions([rec], [tr])
        assert np.allclose(model.camera_centers[0], [0.0, 2.0, 1.0], atol=1e-12)

    def test_camera_rotation_formula(self):
        # R_g = R_o R_k^T: identity camera under a quarter-turn community
        # rotation becomes the inverse quarter turn
        rng = np.random.default_rng(2)
        rec = simple_rec(
            0, [5], [1], [[0.0, 0.0, 0.0]], rng, rotations=np.array([IDENTITY_QUAT])
        )
        tr = CommunitySimilarity(community_id=0, s=1.0, r=rz(np.pi / 2), t=np.zeros(3))
        model = merge_reconstructions([rec], [tr])
        assert geodesic_angle(model.camera_rotations[0], rz(-np.pi / 2)) < 1e-12

    def test_multi_community_track_fused_to_median(self):
        rng = np.random.default_rng(3)
        p = np.array([[1.0, 1.0, 1.0]])
        recs = [
            simple_rec(0, [0], [7], p, rng),
            simple_rec(1, [1], [7], p + 0.02, rng),
            simple_rec(2, [2], [7], p - 0.5, rng),
        ]
        model = merge_reconstructions(recs, [identity_transform(c) for c in range(3)])
        assert np.allclose(model.points[0], p[0], atol=1e-12)  # median of the three
        assert model.provenance[7] == (0, 1, 2)
        assert model.fusion_spread[7] == pytest.approx(np.sqrt(3 * 0.25), abs=1e-12)

    def test_duplicate_camera_ids_rejected(self):
        rng = np.random.default_rng(4)
        recs = [
            simple_rec(0, [0], [1], [[0.0, 0, 0]], rng),
            simple_rec(1, [0], [2], [[0.0, 0, 0]], rng),
        ]
        with pytest.raises(ValidationError, match="camera id"):
            merge_reconstructions(recs, [identity_transform(0), identity_transform(1)])

    def test_missing_transform_rejected(self):
        rng = np.random.default_rng(5)
        rec = simple_rec(0, [0], [1], [[0.0, 0, 0]], rng)
        with pytest.raises(ValidationError, match="no transform"):
            merge_reconstructions([rec], [identity_transform(1)])

    def test_viewing_geometry_preserved(self):
        # R_g (X_g - C_g) = s R_o (X_o - C_o) for every camera/point pair
        rng = np.random.default_rng(6)
        rec = simple_rec(0, [0, 1, 2], range(5), rng.normal(size=(5, 3)), rng)
        tr = CommunitySimilarity(
            community_id=0, s=1.7, r=random_quat(rng), t=rng.normal(size=3)
        )
        model = merge_reconstructions([rec], [tr])
        for ci in range(3):
            Rg = quat_to_matrix(model.camera_rotations[ci])
            Ro = quat_to_matrix(rec.camera_rotations[ci])
            for pi in range(5):
                lhs = Rg @ (model.points[pi] - model.camera_centers[ci])
                rhs = tr.s * (Ro @ (rec.points[pi] - rec.camera_centers[ci]))
                assert np.allclose(lhs, rhs, atol=1e-9)


def fracture_world(rng, k=3, n_world=60, transforms=None, cams_per=3):
    """World points observed by k communities in planted local frames."""
    world_pts = rng.uniform(-8, 8, size=(n_world, 3))
    world_centers = rng.uniform(-8, 8, size=(k * cams_per, 3))
    transforms = transforms or [random_sim3(rng) for _ in range(k)]
    recs = []
    for c in range(k):
        inv = transforms[c].inverse()
        cams = np.arange(c * cams_per, (c + 1) * cams_per)
        recs.append(
            Reconstruction(
                community_id=c,
                camera_ids=cams,
                camera_rotations=np.stack([random_quat(rng) for _ in cams]),
                camera_centers=inv.apply(world_centers[cams]),
                track_ids=np.arange(n_world),
                points=inv.apply(world_pts),
            )
        )
    applied = [
        CommunitySimilarity(community_id=c, s=tr.s, r=tr.q, t=tr.t)
        for c, tr in enumerate(transforms)
    ]
    return recs, applied, world_pts, world_centers


class TestJointRefine:
    def test_consistent_input_unchanged(self):
        rng = np.random.default_rng(7)
        recs, applied, _, _ = fracture_world(rng)
        refined, model, info = joint_refine(recs, applied)
        assert not info["skipped"]
        assert info["final_cost"] <= info["initial_cost"] + 1e-12
        for tr, ref in zip(applied, refined):
            assert ref.s == pytest.approx(tr.s, rel=1e-9)
            assert geodesic_angle(ref.r, tr.r) < 1e-9
            assert np.allclose(ref.t, tr.t, atol=1e-8)

    def test_perturbed_transforms_recovered(self):
        # oracle: planted transforms; zero-noise data pulls the perturbed
        # guesses back to them (up to the unconstrained gauge)
        rng = np.random.default_rng(8)
        recs, applied, world_pts, _ = fracture_world(rng, k=3)
        from csfm.rotations import exp_rotation

        perturbed = [applied[0]]
        for tr in applied[1:]:
            perturbed.append(
                CommunitySimilarity(
                    community_id=tr.community_id,
                    s=tr.s * (1 + 1e-3),
                    r=quat_multiply(exp_rotation(rng.normal(size=3) * 1e-3), tr.r),
                    t=tr.t + rng.normal(size=3) * 1e-3,
                )
            )
        refined, model, info = joint_refine(recs, perturbed)
        # the gauge community is fixed, so planted values are recovered as-is
        for tr, ref in zip(applied, refined):
            assert ref.s == pytest.approx(tr.s, rel=1e-8)
            assert geodesic_angle(ref.r, tr.r) < 1e-8
            assert np.allclose(ref.t, tr.t, atol=1e-8)
        # and the merged points coincide with the world
        common = np.arange(world_pts.shape[0])
        assert np.allclose(model.points[common], world_pts, atol=1e-7)

    def test_single_community_skipped(self):
        rng = np.random.default_rng(9)
        recs, applied, _, _ = fracture_world(rng, k=1)
        refined, model, info = joint_refine(recs, applied)
        assert info["skipped"]
        assert refined == applied


class TestEvaluate:
    def truth_of(self, rng, n=9):
        return Reconstruction(
            community_id=0,
            camera_ids=np.arange(n),
            camera_rotations=np.stack([random_quat(rng) for _ in range(n)]),
            camera_centers=rng.uniform(-10, 10, size=(n, 3)),
            track_ids=np.arange(20),
            points=rng.uniform(-10, 10, size=(20, 3)),
        )

    def model_from(self, truth, sim=None):
        sim = sim or Sim3()
        from csfm.merging import MergedModel
        from csfm.rotations import quat_conjugate

        return MergedModel(
            camera_ids=truth.camera_ids,
            camera_rotations=np.stack(
                [quat_multiply(q, quat_conjugate(sim.q)) for q in truth.camera_rotations]
            ),
            camera_centers=sim.apply(truth.camera_centers),
            track_ids=truth.track_ids,
            points=sim.apply(truth.points),
            provenance={int(t): (0,) for t in truth.track_ids},
            fusion_spread={},
        )

    def test_identical_model_zero_error(self):
        rng = np.random.default_rng(10)
        truth = self.truth_of(rng)
        metrics = evaluate_against_truth(self.model_from(truth), truth)
        assert metrics["median_center_error"] == pytest.approx(0.0, abs=1e-12)
        assert metrics["rmse_center_error"] == pytest.approx(0.0, abs=1e-12)
        assert metrics["median_rotation_error_rad"] == pytest.approx(0.0, abs=1e-9)
        assert metrics["point_rmse"] == pytest.approx(0.0, abs=1e-12)

    def test_global_gauge_removed(self):
        rng = np.random.default_rng(11)
        truth = self.truth_of(rng)
        # express the model in an arbitrary global frame; errors must vanish
        model = self.model_from(truth, sim=random_sim3(rng))
        metrics = evaluate_against_truth(model, truth)
        assert metrics["median_center_error"] < 1e-9
        assert metrics["rmse_center_error"] < 1e-9
        assert metrics["median_rotation_error_rad"] < 1e-9
        assert metrics["point_rmse"] < 1e-9

    def test_single_displaced_camera(self):
        # oracle: direct formula; the robust alignment pins the clean
        # cameras, so median stays 0 and RMSE is 1/sqrt(n)
        rng = np.random.default_rng(12)
        n = 9
        truth = self.truth_of(rng, n=n)
        model = self.model_from(truth)
        centers = model.camera_centers.copy()
        centers[3] += np.array([1.0, 0.0, 0.0])
        from csfm.merging import MergedModel

        model = MergedModel(
            camera_ids=model.camera_ids,
            camera_rotations=model.camera_rotations,
            camera_centers=centers,
            track_ids=model.track_ids,
            points=model.points,
            provenance=model.provenance,
            fusion_spread={},
        )
        metrics = evaluate_against_truth(model, truth)
        assert metrics["median_center_error"] == pytest.approx(0.0, abs=1e-9)
        assert metrics["rmse_center_error"] == pytest.approx(1.0 / np.sqrt(n), abs=1e-9)

    def test_invariant_to_model_side_gauge(self):
        # re-expressing an (imperfect) model in a different global frame
        # must not change any error metric: the gauge is aligned away
        rng = np.random.default_rng(16)
        from csfm.merging import MergedModel
        from csfm.rotations import quat_conjugate

        truth = self.truth_of(rng, n=9)
        base = self.model_from(truth)
        noisy_centers = base.camera_centers + rng.normal(scale=1e-3, size=(9, 3))
        model = MergedModel(
            camera_ids=base.camera_ids,
            camera_rotations=base.camera_rotations,
            camera_centers=noisy_centers,
            track_ids=base.track_ids,
            points=base.points,
            provenance=base.provenance,
            fusion_spread={},
        )
        g = random_sim3(rng)
        moved = MergedModel(
            camera_ids=model.camera_ids,
            camera_rotations=np.stack(
                [quat_multiply(q, quat_conjugate(g.q)) for q in model.camera_rotations]
            ),
            camera_centers=g.apply(model.camera_centers),
            track_ids=model.track_ids,
            points=g.apply(model.points),
            provenance=model.provenance,
            fusion_spread={},
        )
        m1 = evaluate_against_truth(model, truth)
        m2 = evaluate_against_truth(moved, truth)
        assert m1["median_center_error"] > 1e-5  # the comparison is non-trivial
        for key in ("median_center_error", "rmse_center_error", "median_rotation_error_rad", "point_rmse"):
            assert m2[key] == pytest.approx(m1[key], rel=1e-9, abs=1e-9)

    def test_too_few_common_cameras(self):
        rng = np.random.default_rng(13)
        truth = self.truth_of(rng)
        model = self.model_from(truth)
        from csfm.merging import MergedModel

        small = MergedModel(
            camera_ids=model.camera_ids[:2],
            camera_rotations=model.camera_rotations[:2],
            camera_centers=model.camera_centers[:2],
            track_ids=model.track_ids,
            points=model.points,
            provenance=model.provenance,
            fusion_spread={},
        )
        with pytest.raises(ValidationError):
            evaluate_against_truth(small, truth)


class TestArtifacts:
    def test_merged_json_round_trip(self, tmp_path):
        rng = np.random.default_rng(14)
        recs, applied, _, _ = fracture_world(rng, k=2, n_world=10)
        model = merge_reconstructions(recs, applied)
        save_merged(model, tmp_path / "m.json")
        back = load_merged(tmp_path / "m.json")
        assert np.array_equal(back.camera_ids, model.camera_ids)
        assert np.allclose(back.camera_centers, model.camera_centers, atol=0)
        assert np.allclose(back.points, model.points, atol=0)
        assert back.provenance == model.provenance

    def test_export_ply(self, tmp_path):
        rng = np.random.default_rng(15)
        recs, applied, _, _ = fracture_world(rng, k=2, n_world=12)
        model = merge_reconstructions(recs, applied)
        path = tmp_path / "cloud.ply"
        export_ply(model, path, color_by_community=True)
        lines = path.read_text().splitlines()
        assert lines[0] == "ply"
        assert f"element vertex {model.track_ids.size}" in lines
        assert "property uchar red" in lines
        body = lines[lines.index("end_header") + 1 :]
        assert len(body) == model.track_ids.size
        assert all(len(row.split()) == 6 for row in body)
