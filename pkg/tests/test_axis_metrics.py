"""axis_metrics: exact closed forms, invariances, and sampling behavior."""

import numpy as np
import pytest

from channel_axes.axis_metrics import (
    compute_metrics,
    input_capture,
    joint_mi_pairs,
    joint_mi_sets,
    mi_from_corr,
    peer_overlap,
    target_redundancy_synergy,
    task_mi,
    task_targets,
)
from channel_axes.bundle_io import SynthLayerSpec, SynthSpec, synth_bundle
from channel_axes.errors import DegenerateDataError


def patches_with_exact_cov(diag):
    """Rows whose sample covariance (ddof=1) is exactly diag(diag): +/- basis pairs."""
    f = len(diag)
    p = 2 * f
    rows = []
    for k, v in enumerate(diag):
        a = np.sqrt(v * (p - 1) / 2.0)
        e = np.zeros(f)
        e[k] = a
        rows.extend([e, -e])
    return np.array(rows)


def exact_corr_pair(rho, n=400, seed=0):
    """Two columns whose sample Pearson correlation is exactly rho."""
    rng = np.random.default_rng(seed)
    z1 = rng.standard_normal(n)
    z1 = (z1 - z1.mean()) / z1.std()
    z2 = rng.standard_normal(n)
    z2 = z2 - z2.mean()
    z2 = z2 - (z2 @ z1) / (z1 @ z1) * z1
    z2 = z2 / z2.std()
    return np.column_stack([z1, rho * z1 + np.sqrt(1 - rho**2) * z2])


class TestMiFromCorr:
    def test_known_values(self):
        assert mi_from_corr(0.0) == pytest.approx(0.0)
        assert mi_from_corr(0.8) == pytest.approx(-0.5 * np.log(1 - 0.64), abs=1e-12)
        assert mi_from_corr(0.8) == pytest.approx(0.5108, abs=2e-4)

    def test_clip_keeps_duplicates_finite(self):
        v = mi_from_corr(1.0, clip=1e-6)
        expected = -0.5 * np.log(1 - (1 - 1e-6) ** 2)
        assert v == pytest.approx(expected, rel=1e-9)
        assert v == pytest.approx(6.56, abs=0.01)

    def test_symmetric_in_sign(self):
        assert mi_from_corr(-0.6) == pytest.approx(mi_from_corr(0.6), abs=1e-15)


class TestInputCapture:
    def test_closed_form_powers_one_two_three(self):
        # Exact sample covariance diag(1, 2, 3) and identity weights: the
        # noise floor is the median power 2 and I_X = 0.5 ln(1 + s / 2).
        patches = patches_with_exact_cov([1.0, 2.0, 3.0])
        out = input_capture(np.eye(3), patches)
        np.testing.assert_allclose(out["s"], [1.0, 2.0, 3.0], atol=1e-12)
        assert out["sigma0_sq"] == pytest.approx(2.0, abs=1e-12)
        np.testing.assert_allclose(
            out["i_x"],
            [0.5 * np.log(1.5), 0.5 * np.log(2.0), 0.5 * np.log(2.5)],
            atol=1e-12,
        )
        np.testing.assert_allclose(out["i_x"], [0.2027, 0.3466, 0.4581], atol=1e-4)

    def test_median_channel_gets_half_log_two(self):
        patches = patches_with_exact_cov([1.0, 2.0, 3.0])
        out = input_capture(np.eye(3), patches)
        assert out["i_x"][1] == pytest.approx(0.5 * np.log(2.0), abs=1e-12)

    def test_rayleigh_quotient_scales_out_norm(self):
        patches = patches_with_exact_cov([1.0, 2.0])
        w = np.array([[2.0, 0.0], [0.0, 0.5]])
        out = input_capture(w, patches)
        np.testing.assert_allclose(out["rq"], [1.0, 2.0], atol=1e-12)

    def test_zero_weight_channel_excluded_with_zero_ix(self):
        patches = patches_with_exact_cov([1.0, 2.0])
        w = np.array([[1.0, 0.0], [0.0, 0.0]])
        out = input_capture(w, patches)
        assert list(out["excluded"]) == [1]
        assert out["i_x"][1] == 0.0
        assert out["sigma0_sq"] == pytest.approx(1.0)  # median over positive powers only

    def test_all_zero_weights_degenerate(self):
        patches = patches_with_exact_cov([1.0, 2.0])
        with pytest.raises(DegenerateDataError):
            input_capture(np.zeros((3, 2)), patches)

    def test_orthogonal_reparameterization_invariance(self):
        rng = np.random.default_rng(5)
        w = rng.standard_normal((6, 4))
        patches = rng.standard_normal((300, 4))
        q, _ = np.linalg.qr(rng.standard_normal((4, 4)))
        base = input_capture(w, patches)
        rotated = input_capture(w @ q, patches @ q)
        np.testing.assert_allclose(rotated["i_x"], base["i_x"], atol=1e-10)

    def test_weight_rescaling_invariance(self):
        rng = np.random.default_rng(6)
        w = rng.standard_normal((5, 3))
        patches = rng.standard_normal((200, 3))
        base = input_capture(w, patches)
        scaled = input_capture(3.7 * w, patches)
        np.testing.assert_allclose(scaled["i_x"], base["i_x"], atol=1e-10)


class TestPeerOverlap:
    def test_independent_channels_give_zero(self):
        acts = patches_with_exact_cov([1.0, 1.0, 1.0])  # exactly uncorrelated columns
        r_bar, corr, excluded = peer_overlap(acts)
        np.testing.assert_allclose(np.abs(corr - np.eye(3)), 0.0, atol=1e-12)
        np.testing.assert_allclose(r_bar, 0.0, atol=1e-12)
        assert excluded.size == 0

    def test_exact_rho_08_pair(self):
        acts = exact_corr_pair(0.8)
        r_bar, corr, _ = peer_overlap(acts)
        assert corr[0, 1] == pytest.approx(0.8, abs=1e-12)
        assert r_bar[0] == pytest.approx(0.5108, abs=2e-4)
        assert r_bar[0] == r_bar[1]

    def test_duplicate_channel_hits_clip(self):
        z = np.random.default_rng(0).standard_normal(100)
        acts = np.column_stack([z, z])
        r_bar, _, _ = peer_overlap(acts)
        assert r_bar[0] == pytest.approx(6.56, abs=0.01)

    def test_zero_variance_channel_excluded_from_means(self):
        acts = exact_corr_pair(0.5)
        acts = np.column_stack([acts, np.zeros(len(acts))])
        r_bar, corr, excluded = peer_overlap(acts)
        assert list(excluded) == [2]
        assert r_bar[2] == 0.0
        assert r_bar[0] == pytest.approx(mi_from_corr(0.5), abs=1e-12)  # mean over valid peers only


class TestTaskTargets:
    logits = np.array([[2.0, 0.5, -1.0], [0.0, 3.0, 1.0]])
    labels = np.array([0, 2])

    def test_gt_margin(self):
        np.testing.assert_allclose(
            task_targets(self.logits, self.labels, kind="gt_margin"), [1.5, -2.0]
        )

    def test_pred_margin(self):
        np.testing.assert_allclose(
            task_targets(self.logits, self.labels, kind="pred_margin"), [1.5, 2.0]
        )

    def test_logit_kinds(self):
        np.testing.assert_allclose(
            task_targets(self.logits, self.labels, kind="correct_logit"), [2.0, 1.0]
        )
        np.testing.assert_allclose(task_targets(self.logits, kind="pred_logit"), [2.0, 3.0])

    def test_neg_loss_and_ovr(self):
        np.testing.assert_allclose(
            task_targets(None, loss=np.array([0.3, 1.2]), kind="neg_loss"), [-0.3, -1.2]
        )
        np.testing.assert_allclose(
            task_targets(self.logits, self.labels, kind="ovr_label", class_index=2), [-1.0, 1.0]
        )

    def test_bad_inputs(self):
        with pytest.raises(ValueError):
            task_targets(self.logits, kind="gt_margin")  # needs labels
        with pytest.raises(ValueError):
            task_targets(self.logits, self.labels, kind="mystery")


class TestTaskMi:
    def test_exact_half_correlation(self):
        acts = exact_corr_pair(0.5)
        i_ty, rho, _ = task_mi(acts[:, :1], acts[:, 1])
        assert rho[0] == pytest.approx(0.5, abs=1e-12)
        assert i_ty[0] == pytest.approx(-0.5 * np.log(0.75), abs=1e-12)
        assert i_ty[0] == pytest.approx(0.1438, abs=1e-4)

    def test_constant_target_degenerate(self):
        with pytest.raises(DegenerateDataError):
            task_mi(np.random.default_rng(0).standard_normal((50, 3)), np.ones(50))

    def test_independent_target_small_mi(self):
        rng = np.random.default_rng(1)
        acts = rng.standard_normal((5000, 20))
        target = rng.standard_normal(5000)
        i_ty, _, _ = task_mi(acts, target)
        assert i_ty.mean() <= 0.005

    def test_zero_variance_channel_flagged(self):
        rng = np.random.default_rng(2)
        acts = np.column_stack([rng.standard_normal(100), np.full(100, 3.0)])
        i_ty, _, excluded = task_mi(acts, rng.standard_normal(100))
        assert list(excluded) == [1]
        assert i_ty[1] == 0.0


class TestRedundancySynergy:
    def test_redundancy_arithmetic_top_task(self):
        # Channel 0 at 0.3 with partners at (0.5, 0.4, 0.2):
        # mean(min) = mean(0.3, 0.3, 0.2) = 0.2667.
        i_ty = np.array([0.3, 0.5, 0.4, 0.2])
        corr = np.eye(4)
        rho = np.sqrt(1 - np.exp(-2 * i_ty))  # consistent rho for each MI
        red, _, partners = target_redundancy_synergy(i_ty, corr, rho, m=3)
        assert partners[0] == [1, 2, 3]
        assert red[0] == pytest.approx((0.3 + 0.3 + 0.2) / 3, abs=1e-12)

    def test_iid_pair_closed_form(self):
        # Uncorrelated channels with rho_T = 1/2 each: singleton MI 0.1438,
        # joint R^2 = 1/2 so joint MI 0.3466 and pair synergy 0.2027.
        i_ty = np.full(2, -0.5 * np.log(0.75))
        corr = np.eye(2)
        rho = np.array([0.5, 0.5])
        red, syn, _ = target_redundancy_synergy(i_ty, corr, rho, m=1)
        joint = joint_mi_pairs(corr, rho, np.array([[0, 1]]))
        assert joint[0] == pytest.approx(0.5 * np.log(2.0), abs=1e-9)
        assert joint[0] == pytest.approx(0.3466, abs=1e-4)
        assert red[0] == pytest.approx(0.1438, abs=1e-4)
        assert syn[0] == pytest.approx(0.2027, abs=1e-4)

    def test_duplicate_partner_gives_zero_synergy(self):
        i_ty = np.full(2, 0.2)
        corr = np.array([[1.0, 1.0], [1.0, 1.0]])
        rho = np.full(2, np.sqrt(1 - np.exp(-0.4)))
        _, syn, _ = target_redundancy_synergy(i_ty, corr, rho, m=1)
        assert abs(syn[0]) <= 1e-6

    def test_partner_rules_pick_expected_sets(self):
        rng = np.random.default_rng(3)
        n = 12
        i_ty = np.linspace(0.5, 0.05, n)
        corr = np.eye(n)
        rho = np.sqrt(1 - np.exp(-2 * i_ty))
        _, _, top_task = target_redundancy_synergy(i_ty, corr, rho, m=4, partner_rule="top_task")
        assert top_task[5] == [0, 1, 2, 3]
        _, _, pool = target_redundancy_synergy(
            i_ty, corr, rho, m=4, partner_rule="random_top_pool", seed=7
        )
        assert len(pool[5]) == 4
        assert set(pool[5]) <= set(range(9))  # top-8 pool excluding self
        _, _, pool2 = target_redundancy_synergy(
            i_ty, corr, rho, m=4, partner_rule="random_top_pool", seed=7
        )
        assert pool == pool2
        for rule in ("top_joint", "top_synergy"):
            _, _, ps = target_redundancy_synergy(i_ty, corr, rho, m=4, partner_rule=rule)
            assert all(len(p) == 4 for p in ps)

    def test_joint_mi_sets_matches_pairs(self):
        rng = np.random.default_rng(4)
        acts = rng.standard_normal((2000, 3))
        t = acts @ np.array([1.0, 0.5, 0.2]) + rng.standard_normal(2000)
        _, rho, _ = task_mi(acts, t)
        corr = np.corrcoef(acts, rowvar=False)
        via_pairs = joint_mi_pairs(corr, rho, np.array([[0, 1]]))
        via_sets = joint_mi_sets(corr, rho, [[0, 1]])
        assert via_sets[0] == pytest.approx(via_pairs[0], abs=1e-10)


class TestComputeMetrics:
    def make_bundle(self, seed=0, **overrides):
        spec = SynthSpec(
            layers=[SynthLayerSpec("a", 16), SynthLayerSpec("b", 12)],
            features=10,
            batch=3000,
            patches=2000,
            seed=seed,
            **overrides,
        )
        return synth_bundle(spec)

    def test_table_shapes_and_fields(self):
        bundle, _ = self.make_bundle()
        table = compute_metrics(bundle)
        assert set(table.layers) == {"a", "b"}
        lm = table.layer("a")
        assert lm.i_x.shape == (16,)
        assert lm.corr.shape == (16, 16)
        assert lm.corr_source == "pooled"
        assert set(lm.i_ty) == {"synth"}
        assert table.redundancy_target == "synth"

    def test_estimates_track_population(self):
        bundle, model = self.make_bundle(seed=3)
        table = compute_metrics(bundle)
        i_x = np.concatenate([table.layer(n).i_x for n in ("a", "b")])
        pop_s = model.signal_power()
        est_s = np.concatenate([table.layer(n).s for n in ("a", "b")])
        np.testing.assert_allclose(est_s, pop_s, rtol=0.2)
        pop_mi = model.pop_task_mi()
        est_mi = np.concatenate([table.layer(n).i_ty["synth"] for n in ("a", "b")])
        np.testing.assert_allclose(est_mi, pop_mi, atol=0.02)
        assert i_x.min() >= 0

    def test_target_permutation_leaves_i_x_bit_identical(self):
        bundle, _ = self.make_bundle(seed=4)
        table = compute_metrics(bundle)
        rng = np.random.default_rng(0)
        permuted = dict(bundle.targets)
        permuted["synth"] = np.asarray(rng.permutation(bundle.targets["synth"]))
        shuffled_bundle = type(bundle)(
            manifest_version=bundle.manifest_version,
            model_name=bundle.model_name,
            seed=bundle.seed,
            layers=bundle.layers,
            targets=permuted,
            graph=bundle.graph,
        )
        table2 = compute_metrics(shuffled_bundle)
        for name in ("a", "b"):
            assert np.array_equal(table.layer(name).i_x, table2.layer(name).i_x)
            assert table2.layer(name).i_ty["synth"].mean() < table.layer(name).i_ty["synth"].mean()

    def test_red_t_tracks_i_ty_rank(self):
        bundle, _ = self.make_bundle(seed=5, target_alignment=0.5)
        table = compute_metrics(bundle)
        from channel_axes.stats_core import correlation

        lm = table.layer("a")
        rho = correlation(lm.red_t, lm.i_ty["synth"], method="spearman")
        assert rho >= 0.99

    def test_unknown_target_rejected(self):
        bundle, _ = self.make_bundle()
        from channel_axes.errors import BundleValidationError

        with pytest.raises(BundleValidationError):
            compute_metrics(bundle, targets=["nope"])
