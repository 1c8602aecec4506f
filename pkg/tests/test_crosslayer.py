"""Routing-weighted propagation arithmetic on hand-built wiring."""

import numpy as np
import pytest
from scipy.stats import spearmanr

from channel_axes.axis_metrics import ChannelMetricTable, LayerMetrics
from channel_axes.bundle_io import GraphSpec, LayerRecord, TensorBundle
from channel_axes.crosslayer import (
    consumer_blocks,
    propagation_matrix,
    routed_source_summary,
    routing_strengths,
)


def record(name, depth, weight, n_batch=8):
    weight = np.asarray(weight, dtype=np.float32)
    n = weight.shape[0]
    rng = np.random.default_rng(abs(hash(name)) % 2**32)
    return LayerRecord(
        name=name,
        relative_depth=depth,
        weight=weight,
        input_patches=rng.standard_normal((4, weight.shape[1])).astype(np.float32),
        pooled_acts=rng.standard_normal((n_batch, n)).astype(np.float32),
    )


def fake_metrics(name, i_x, r_bar_x=None, i_ty=None, syn=None, excluded=()):
    i_x = np.asarray(i_x, dtype=float)
    n = i_x.size
    r_bar_x = i_x.copy() if r_bar_x is None else np.asarray(r_bar_x, dtype=float)
    i_ty = i_x.copy() if i_ty is None else np.asarray(i_ty, dtype=float)
    syn = i_x.copy() if syn is None else np.asarray(syn, dtype=float)
    return LayerMetrics(
        name=name,
        relative_depth=0.5,
        s=np.zeros(n),
        rq=np.zeros(n),
        w_norm_sq=np.zeros(n),
        sigma0_sq=1.0,
        i_x=i_x,
        corr=np.eye(n),
        corr_source="pooled",
        r_bar_x=r_bar_x,
        i_ty={"t": i_ty},
        rho_ty={"t": np.zeros(n)},
        red_t=np.zeros(n),
        syn=syn,
        partner_sets=[[] for _ in range(n)],
        excluded=list(excluded),
    )


def make_table(metric_list):
    return ChannelMetricTable(
        layers={m.name: m for m in metric_list},
        targets=["t"],
        redundancy_target="t",
        m=10,
        partner_rule="top_task",
    )


class TestConsumerBlocks:
    def test_single_producer(self):
        bundle = TensorBundle(
            manifest_version=1,
            model_name="m",
            seed=0,
            layers=[record("A", 0.0, np.zeros((3, 5))), record("B", 1.0, np.zeros((4, 6)))],
            targets={},
            graph=GraphSpec(edges=[("A", "B")]),
        )
        blocks, k_area = consumer_blocks(bundle, "B")
        assert blocks == [("A", slice(0, 3))]
        assert k_area == 2

    def test_two_producers_in_edge_order(self):
        bundle = TensorBundle(
            manifest_version=1,
            model_name="m",
            seed=0,
            layers=[
                record("A", 0.0, np.zeros((2, 5))),
                record("C", 0.1, np.zeros((3, 5))),
                record("B", 1.0, np.zeros((4, 10))),
            ],
            targets={},
            graph=GraphSpec(edges=[("A", "B"), ("C", "B")]),
        )
        blocks, k_area = consumer_blocks(bundle, "B")
        assert blocks == [("A", slice(0, 2)), ("C", slice(2, 5))]
        assert k_area == 2

    def test_width_mismatch_raises(self):
        bundle = TensorBundle(
            manifest_version=1,
            model_name="m",
            seed=0,
            layers=[record("A", 0.0, np.zeros((3, 5))), record("B", 1.0, np.zeros((4, 7)))],
            targets={},
            graph=GraphSpec(edges=[("A", "B")]),
        )
        with pytest.raises(ValueError):
            consumer_blocks(bundle, "B")

    def test_no_producers_raises(self):
        bundle = TensorBundle(
            manifest_version=1,
            model_name="m",
            seed=0,
            layers=[record("A", 0.0, np.zeros((3, 5)))],
            targets={},
            graph=GraphSpec(),
        )
        with pytest.raises(ValueError):
            consumer_blocks(bundle, "A")


class TestRoutedSummary:
    def test_strengths_are_slice_norms(self):
        weight = np.array([[3.0, 4.0, 0.0, 12.0]])
        np.testing.assert_allclose(routing_strengths(weight, 2), [[5.0, 12.0]])

    def test_weighted_average_hand_case(self):
        weight = np.array([[3.0, 4.0, 0.0, 12.0]])
        routed = routed_source_summary(weight, [2.0, 10.0])
        assert routed[0] == pytest.approx(130.0 / 17.0, rel=1e-12)

    def test_invalid_channels_renormalized_away(self):
        weight = np.array([[3.0, 4.0, 0.0, 12.0]])
        routed = routed_source_summary(weight, [2.0, 1e9], valid=[True, False])
        assert routed[0] == pytest.approx(2.0)

    def test_zero_mass_gives_nan(self):
        weight = np.zeros((2, 4))
        routed = routed_source_summary(weight, [1.0, 2.0])
        assert np.isnan(routed).all()


class TestPropagationMatrix:
    def identity_bundle_and_table(self, excluded_src=(), excluded_dst=()):
        n = 5
        weight_b = np.eye(n, dtype=np.float32)
        bundle = TensorBundle(
            manifest_version=1,
            model_name="m",
            seed=0,
            layers=[record("A", 0.0, np.zeros((n, 4))), record("B", 1.0, weight_b)],
            targets={},
            graph=GraphSpec(edges=[("A", "B")]),
        )
        vals = {
            "i_x": np.array([1.0, 2.0, 3.0, 4.0, 5.0]),
            "r_bar_x": np.array([5.0, 1.0, 4.0, 2.0, 3.0]),
            "i_ty": np.array([2.0, 4.0, 1.0, 5.0, 3.0]),
            "syn": np.array([1.0, 3.0, 2.0, 5.0, 4.0]),
        }
        src = fake_metrics("A", vals["i_x"], vals["r_bar_x"], vals["i_ty"], vals["syn"], excluded=excluded_src)
        dst = fake_metrics("B", vals["i_x"], vals["r_bar_x"], vals["i_ty"], vals["syn"], excluded=excluded_dst)
        return bundle, make_table([src, dst]), vals

    def test_identity_routing_reproduces_pairwise_spearman(self):
        bundle, table, vals = self.identity_bundle_and_table()
        out = propagation_matrix(bundle, table)
        assert list(out["edges"]) == ["A->B"]
        names = out["metrics"]
        mat = out["edges"]["A->B"]
        for a, na in enumerate(names):
            for b, nb in enumerate(names):
                expect = spearmanr(vals[na], vals[nb]).statistic
                assert mat[a, b] == pytest.approx(expect, abs=1e-12)
        np.testing.assert_allclose(np.diag(mat), 1.0)
        np.testing.assert_allclose(out["mean"], mat)

    def test_excluded_destination_channels_dropped(self):
        bundle, table, _ = self.identity_bundle_and_table(excluded_dst=(0,))
        out = propagation_matrix(bundle, table)
        # still perfectly rank-aligned on the surviving channels
        np.testing.assert_allclose(np.diag(out["edges"]["A->B"]), 1.0)

    def test_excluded_source_channel_does_not_leak(self):
        bundle, table, _ = self.identity_bundle_and_table(excluded_src=(2,))
        table.layers["A"].i_x[2] = 1e9
        out = propagation_matrix(bundle, table)
        assert np.diag(out["edges"]["A->B"])[0] == pytest.approx(1.0)

    def test_edgeless_graph_gives_empty_report(self):
        bundle = TensorBundle(
            manifest_version=1,
            model_name="m",
            seed=0,
            layers=[record("A", 0.0, np.zeros((3, 4)))],
            targets={},
            graph=GraphSpec(),
        )
        table = make_table([fake_metrics("A", [1.0, 2.0, 3.0])])
        out = propagation_matrix(bundle, table)
        assert out["edges"] == {}
        assert np.isnan(out["mean"]).all()

    def test_null_metrics_stay_in_noise_band(self):
        rng = np.random.default_rng(123)
        n = 40
        weight_b = rng.standard_normal((n, n)).astype(np.float32)
        bundle = TensorBundle(
            manifest_version=1,
            model_name="m",
            seed=0,
            layers=[record("A", 0.0, np.zeros((n, 4))), record("B", 1.0, weight_b)],
            targets={},
            graph=GraphSpec(edges=[("A", "B")]),
        )
        src = fake_metrics("A", rng.standard_normal(n), rng.standard_normal(n), rng.standard_normal(n), rng.standard_normal(n))
        dst = fake_metrics("B", rng.standard_normal(n), rng.standard_normal(n), rng.standard_normal(n), rng.standard_normal(n))
        out = propagation_matrix(bundle, make_table([src, dst]))
        assert np.nanmax(np.abs(out["edges"]["A->B"])) < 0.5
