"""Bundle format: round-trips, validation failures, synthetic generation."""

import json
import os

import numpy as np
import pytest

from channel_axes.bundle_io import (
    DuplicationRule,
    GraphSpec,
    LayerRecord,
    SynthLayerSpec,
    SynthSpec,
    TensorBundle,
    bundle_fingerprint,
    load_bundle,
    synth_bundle,
    write_bundle,
)
from channel_axes.errors import BundleValidationError


def small_spec(seed=0, **overrides):
    base = dict(
        layers=[SynthLayerSpec("conv1", 12), SynthLayerSpec("conv2", 10)],
        features=8,
        batch=256,
        patches=128,
        seed=seed,
    )
    base.update(overrides)
    return SynthSpec(**base)


def hand_bundle(tmp_path, mutate=None):
    """Write a tiny, fully valid bundle by hand; optionally corrupt it first."""
    rng = np.random.default_rng(7)
    n, f, p, b = 4, 6, 16, 32
    layers = [
        {
            "name": "conv1",
            "relative_depth": 0.0,
            "num_channels": n,
            "tensors": {
                "weight": {"file": "w.f32", "shape": [n, f]},
                "input_patches": {"file": "x.f32", "shape": [p, f]},
                "pooled_acts": {"file": "a.f32", "shape": [b, n]},
            },
        }
    ]
    manifest = {
        "manifest_version": 1,
        "model_name": "hand",
        "seed": 3,
        "layers": layers,
        "targets": {"t": {"file": "t.f32", "shape": [b]}},
        "graph": {"edges": [], "layer_kind": {"conv1": "standard"}, "coupling_groups": [], "spatial_sizes": {}},
    }
    arrays = {
        "w.f32": rng.standard_normal((n, f)),
        "x.f32": rng.standard_normal((p, f)),
        "a.f32": rng.standard_normal((b, n)),
        "t.f32": rng.standard_normal(b),
    }
    if mutate:
        mutate(manifest, arrays)
    for fname, arr in arrays.items():
        arr.astype("<f4").tofile(tmp_path / fname)
    (tmp_path / "manifest.json").write_text(json.dumps(manifest))
    return tmp_path


class TestRoundTrip:
    def test_write_load_write_is_byte_identical(self, tmp_path):
        bundle, _ = synth_bundle(small_spec())
        d1 = tmp_path / "b1"
        d2 = tmp_path / "b2"
        write_bundle(bundle, str(d1))
        reloaded = load_bundle(str(d1))
        write_bundle(reloaded, str(d2))
        files1 = sorted(os.listdir(d1))
        files2 = sorted(os.listdir(d2))
        assert files1 == files2
        for fname in files1:
            assert (d1 / fname).read_bytes() == (d2 / fname).read_bytes(), fname

    def test_loaded_arrays_match_written(self, tmp_path):
        bundle, _ = synth_bundle(small_spec())
        write_bundle(bundle, str(tmp_path / "b"))
        reloaded = load_bundle(str(tmp_path / "b"))
        np.testing.assert_array_equal(np.asarray(reloaded.layers[0].weight), bundle.layers[0].weight)
        np.testing.assert_array_equal(np.asarray(reloaded.targets["synth"]), bundle.targets["synth"])
        assert reloaded.layer_names == bundle.layer_names

    def test_fingerprint_stable_and_content_sensitive(self, tmp_path):
        bundle, _ = synth_bundle(small_spec())
        write_bundle(bundle, str(tmp_path / "b"))
        fp1 = bundle_fingerprint(str(tmp_path / "b"))
        fp2 = bundle_fingerprint(str(tmp_path / "b"))
        assert fp1 == fp2
        raw = (tmp_path / "b" / "00.weight.f32").read_bytes()
        (tmp_path / "b" / "00.weight.f32").write_bytes(raw[:-4] + b"\x00\x00\x80\x3f")
        assert bundle_fingerprint(str(tmp_path / "b")) != fp1


class TestValidation:
    def test_hand_bundle_is_valid(self, tmp_path):
        load_bundle(str(hand_bundle(tmp_path)))

    def test_byte_length_mismatch_names_layer_and_field(self, tmp_path):
        def chop(manifest, arrays):
            arrays["a.f32"] = arrays["a.f32"][:-1]

        hand_bundle(tmp_path, mutate=chop)
        with pytest.raises(BundleValidationError, match="conv1.*pooled_acts"):
            load_bundle(str(tmp_path))

    def test_cycle_rejected(self, tmp_path):
        def add_cycle(manifest, arrays):
            second = json.loads(json.dumps(manifest["layers"][0]))
            second["name"] = "conv2"
            manifest["layers"].append(second)
            manifest["graph"]["edges"] = [["conv1", "conv2"], ["conv2", "conv1"]]

        hand_bundle(tmp_path, mutate=add_cycle)
        with pytest.raises(BundleValidationError, match="cycle"):
            load_bundle(str(tmp_path))

    def test_duplicate_layer_name_rejected(self, tmp_path):
        def dup(manifest, arrays):
            manifest["layers"].append(json.loads(json.dumps(manifest["layers"][0])))

        hand_bundle(tmp_path, mutate=dup)
        with pytest.raises(BundleValidationError, match="duplicate layer name"):
            load_bundle(str(tmp_path))

    def test_target_length_mismatch_rejected(self, tmp_path):
        def shrink(manifest, arrays):
            manifest["targets"]["t"]["shape"] = [16]
            arrays["t.f32"] = arrays["t.f32"][:16]

        hand_bundle(tmp_path, mutate=shrink)
        with pytest.raises(BundleValidationError, match="target 't'"):
            load_bundle(str(tmp_path))

    def test_depth_out_of_range_rejected(self, tmp_path):
        def bad_depth(manifest, arrays):
            manifest["layers"][0]["relative_depth"] = 1.5

        hand_bundle(tmp_path, mutate=bad_depth)
        with pytest.raises(BundleValidationError, match="relative_depth"):
            load_bundle(str(tmp_path))

    def test_depthwise_needs_matching_producer(self, tmp_path):
        def dw(manifest, arrays):
            manifest["graph"]["layer_kind"]["conv1"] = "depthwise"

        hand_bundle(tmp_path, mutate=dw)
        with pytest.raises(BundleValidationError, match="depthwise"):
            load_bundle(str(tmp_path))

    def test_random_single_field_corruptions_rejected(self, tmp_path):
        """Property sweep: a bundle with any one of these defects never loads."""
        mutations = [
            lambda m, a: m.pop("manifest_version"),
            lambda m, a: m.__setitem__("manifest_version", 2),
            lambda m, a: m.__setitem__("model_name", ""),
            lambda m, a: m.__setitem__("seed", "zero"),
            lambda m, a: m.__setitem__("layers", []),
            lambda m, a: m["layers"][0].__setitem__("num_channels", 5),
            lambda m, a: m["layers"][0]["tensors"].pop("weight"),
            lambda m, a: m["layers"][0]["tensors"]["weight"].__setitem__("shape", [4, 5]),
            lambda m, a: m["graph"].__setitem__("edges", [["conv1", "ghost"]]),
            lambda m, a: m["graph"].__setitem__("layer_kind", {"conv1": "conv"}),
            lambda m, a: m["graph"].__setitem__("coupling_groups", [["conv1"]]),
            lambda m, a: m["graph"].__setitem__("spatial_sizes", {"conv1": [0, 4]}),
        ]
        for i, mutate in enumerate(mutations):
            d = tmp_path / f"case{i}"
            d.mkdir()
            hand_bundle(d, mutate=mutate)
            with pytest.raises(BundleValidationError):
                load_bundle(str(d))


class TestSynth:
    def test_deterministic_in_seed(self):
        b1, _ = synth_bundle(small_spec(seed=5))
        b2, _ = synth_bundle(small_spec(seed=5))
        np.testing.assert_array_equal(b1.layers[0].pooled_acts, b2.layers[0].pooled_acts)
        np.testing.assert_array_equal(b1.targets["synth"], b2.targets["synth"])
        b3, _ = synth_bundle(small_spec(seed=6))
        assert not np.array_equal(b1.layers[0].pooled_acts, b3.layers[0].pooled_acts)

    def test_planted_duplicate_pair_correlates(self):
        spec = small_spec(duplication_plan=[DuplicationRule(layer="conv1", target=0, sources=[1])], batch=5000)
        bundle, _ = synth_bundle(spec)
        acts = np.asarray(bundle.layers[0].pooled_acts, dtype=float)
        rho = np.corrcoef(acts[:, 0], acts[:, 1])[0, 1]
        assert rho >= 0.999

    def test_planted_average_is_exact_combination(self):
        spec = small_spec(duplication_plan=[DuplicationRule(layer="conv1", target=0, sources=[1, 2])])
        bundle, _ = synth_bundle(spec)
        acts = np.asarray(bundle.layers[0].pooled_acts, dtype=float)
        np.testing.assert_allclose(acts[:, 0], (acts[:, 1] + acts[:, 2]) / np.sqrt(2), rtol=0, atol=1e-5)

    def test_orthogonal_basis_gives_independent_channels(self):
        spec = small_spec(
            layers=[SynthLayerSpec("conv1", 8)], features=8, batch=5000, channel_basis="orthogonal"
        )
        bundle, _ = synth_bundle(spec)
        acts = np.asarray(bundle.layers[0].pooled_acts, dtype=float)
        corr = np.corrcoef(acts.T)
        off = corr[~np.eye(8, dtype=bool)]
        assert np.abs(off).max() <= 0.1

    def test_model_population_matches_samples(self):
        spec = small_spec(batch=20000, target_alignment=0.5)
        bundle, model = synth_bundle(spec)
        acts = np.concatenate(
            [np.asarray(rec.pooled_acts, dtype=float) for rec in bundle.layers], axis=1
        )
        t = np.asarray(bundle.targets["synth"], dtype=float)
        emp_cov = np.cov(acts.T)
        np.testing.assert_allclose(emp_cov, model.cov_y(), atol=0.06)
        emp_rho = np.array([np.corrcoef(acts[:, i], t)[0, 1] for i in range(acts.shape[1])])
        np.testing.assert_allclose(emp_rho, model.corr_t_y(), atol=0.05)
        emp_var_t = t.var()
        np.testing.assert_allclose(emp_var_t, model.sigma_t_sq, rtol=0.06)

    def test_model_sample_matches_population_too(self):
        _, model = synth_bundle(small_spec())
        x, y, t = model.sample(30000, seed=11)
        np.testing.assert_allclose(np.cov(y.T), model.cov_y(), atol=0.05)
        np.testing.assert_allclose(t.var(), model.sigma_t_sq, rtol=0.05)

    def test_sigma_t_dominates_explained_part(self):
        _, model = synth_bundle(small_spec())
        explained = model.c @ np.linalg.solve(model.sigma_x, model.c)
        assert model.sigma_t_sq >= explained - 1e-9

    def test_bad_specs_rejected(self):
        with pytest.raises(BundleValidationError):
            synth_bundle(small_spec(features=1))
        with pytest.raises(BundleValidationError):
            synth_bundle(small_spec(target_alignment=1.5))
        with pytest.raises(BundleValidationError):
            synth_bundle(
                small_spec(duplication_plan=[DuplicationRule(layer="conv1", target=0, sources=[0])])
            )
        with pytest.raises(BundleValidationError):
            synth_bundle(
                small_spec(
                    duplication_plan=[
                        DuplicationRule(layer="conv1", target=0, sources=[1]),
                        DuplicationRule(layer="conv1", target=2, sources=[0]),
                    ]
                )
            )

    def test_spec_from_dict_round_trip(self):
        raw = {
            "layers": [{"name": "conv1", "num_channels": 6}],
            "features": 4,
            "batch": 64,
            "patches": 32,
            "seed": 9,
            "duplication_plan": [{"layer": "conv1", "target": 0, "sources": [1, 2]}],
        }
        spec = SynthSpec.from_dict(raw)
        bundle, _ = synth_bundle(spec)
        assert bundle.layers[0].num_channels == 6

    def test_write_then_reload_targets_and_graph(self, tmp_path):
        bundle, _ = synth_bundle(small_spec())
        write_bundle(bundle, str(tmp_path / "b"))
        reloaded = load_bundle(str(tmp_path / "b"))
        assert reloaded.graph.kind("conv1") == "standard"
        assert reloaded.graph.spatial_size("conv2") == (1, 1)
        assert set(reloaded.targets) == {"synth"}
