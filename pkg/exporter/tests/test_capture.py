"""Captured bundle contents: shapes, determinism, stages, subsets."""

import json
import os

import numpy as np
import pytest

from bundle_exporter import ExportConfig, ExportError, export_bundle


def manifest_of(bundle_dir):
    with open(os.path.join(bundle_dir, "manifest.json"), "r", encoding="utf-8") as fh:
        return json.load(fh)


def tensor_of(bundle_dir, entry):
    data = np.fromfile(os.path.join(bundle_dir, entry["file"]), dtype="<f4")
    return data.reshape(entry["shape"])


def test_shapes_match_config(toy2_dir):
    manifest = manifest_of(toy2_dir)
    by_name = {meta["name"]: meta for meta in manifest["layers"]}
    assert list(by_name) == ["conv1", "conv2"]
    # 64 images, 16x16 maps, patch cap 200
    assert by_name["conv1"]["tensors"]["pooled_acts"]["shape"] == [64, 8]
    assert by_name["conv1"]["tensors"]["spatial_acts"]["shape"] == [64 * 256, 8]
    assert by_name["conv1"]["tensors"]["input_patches"]["shape"] == [200, 27]
    assert by_name["conv2"]["tensors"]["weight"]["shape"] == [12, 72]
    for entry in manifest["targets"].values():
        assert entry["shape"] == [64]


def test_pooled_is_mean_of_spatial(toy2_dir):
    manifest = manifest_of(toy2_dir)
    meta = manifest["layers"][0]["tensors"]
    pooled = tensor_of(toy2_dir, meta["pooled_acts"])
    spatial = tensor_of(toy2_dir, meta["spatial_acts"]).reshape(64, 256, 8)
    np.testing.assert_allclose(pooled, spatial.mean(axis=1), rtol=0, atol=1e-5)


def test_byte_length_matches_shape(toy2_dir):
    manifest = manifest_of(toy2_dir)
    entries = list(manifest["targets"].values())
    for meta in manifest["layers"]:
        entries.extend(meta["tensors"].values())
        entries.extend(meta.get("baseline_scores", {}).values())
    for entry in entries:
        size = os.path.getsize(os.path.join(toy2_dir, entry["file"]))
        assert size == 4 * int(np.prod(entry["shape"]))


def test_reexport_is_identical(tmp_path):
    cfg = ExportConfig(model="toy_bn", calib_indices=range(0, 48, 2), patch_cap=128, seed=9)
    a = export_bundle(cfg, str(tmp_path / "a"))
    b = export_bundle(cfg, str(tmp_path / "b"))
    names = sorted(os.listdir(a))
    assert names == sorted(os.listdir(b))
    for name in names:
        with open(os.path.join(a, name), "rb") as fa, open(os.path.join(b, name), "rb") as fb:
            assert fa.read() == fb.read(), name


def test_patch_seed_changes_subsample(tmp_path):
    base = dict(model="toy2", calib_indices=range(16), patch_cap=64)
    a = export_bundle(ExportConfig(seed=0, **base), str(tmp_path / "a"))
    b = export_bundle(ExportConfig(seed=1, **base), str(tmp_path / "b"))
    pa = tensor_of(a, manifest_of(a)["layers"][0]["tensors"]["input_patches"])
    pb = tensor_of(b, manifest_of(b)["layers"][0]["tensors"]["input_patches"])
    assert pa.shape == pb.shape == (64, 27)
    assert np.abs(pa - pb).max() > 0


def test_small_export_keeps_every_patch_row(tmp_path):
    out = export_bundle(
        ExportConfig(model="toy2", calib_indices=[0, 1], patch_cap=10_000), str(tmp_path / "b")
    )
    meta = manifest_of(out)["layers"][0]["tensors"]["input_patches"]
    assert meta["shape"] == [2 * 256, 27]


def test_stage_changes_pooled_acts_and_is_recorded(tmp_path):
    base = dict(model="toy_bn", calib_indices=range(24))
    pre = export_bundle(ExportConfig(stage="preBN", **base), str(tmp_path / "pre"))
    post = export_bundle(ExportConfig(stage="postBN", **base), str(tmp_path / "post"))
    assert manifest_of(pre)["export"]["stage"] == "preBN"
    assert manifest_of(post)["export"]["stage"] == "postBN"
    a = tensor_of(pre, manifest_of(pre)["layers"][0]["tensors"]["pooled_acts"])
    b = tensor_of(post, manifest_of(post)["layers"][0]["tensors"]["pooled_acts"])
    assert np.abs(a - b).max() > 1e-3
    # the weight matrix is the conv's either way
    wa = tensor_of(pre, manifest_of(pre)["layers"][0]["tensors"]["weight"])
    wb = tensor_of(post, manifest_of(post)["layers"][0]["tensors"]["weight"])
    np.testing.assert_array_equal(wa, wb)


def test_stage_without_batchnorm_falls_back_to_conv_output(tmp_path):
    base = dict(model="toy2", calib_indices=range(8))
    pre = export_bundle(ExportConfig(stage="preBN", **base), str(tmp_path / "pre"))
    post = export_bundle(ExportConfig(stage="postBN", **base), str(tmp_path / "post"))
    a = tensor_of(pre, manifest_of(pre)["layers"][0]["tensors"]["pooled_acts"])
    b = tensor_of(post, manifest_of(post)["layers"][0]["tensors"]["pooled_acts"])
    np.testing.assert_array_equal(a, b)


def test_layer_subset_keeps_global_depth(tmp_path):
    out = export_bundle(
        ExportConfig(model="toy_res", calib_indices=range(8), layers=["conv3"]), str(tmp_path / "b")
    )
    manifest = manifest_of(out)
    assert [meta["name"] for meta in manifest["layers"]] == ["conv3"]
    assert manifest["layers"][0]["relative_depth"] == 1.0
    assert manifest["graph"]["edges"] == []
    assert manifest["graph"]["coupling_groups"] == []


def test_coupling_group_dropped_when_partner_not_exported(tmp_path):
    out = export_bundle(
        ExportConfig(model="toy_res", calib_indices=range(8), layers=["conv1", "conv3"]),
        str(tmp_path / "b"),
    )
    graph = manifest_of(out)["graph"]
    assert graph["coupling_groups"] == []
    assert graph["edges"] == [["conv1", "conv3"]]


def test_out_of_range_index_rejected(tmp_path):
    with pytest.raises(ExportError, match="out of range"):
        export_bundle(ExportConfig(model="toy2", calib_indices=[0, 100_000]), str(tmp_path / "b"))


def test_npz_override(tmp_path):
    rng = np.random.default_rng(0)
    path = tmp_path / "calib.npz"
    np.savez(path, images=rng.standard_normal((12, 3, 16, 16), dtype=np.float32), labels=rng.integers(0, 10, 12))
    out = export_bundle(
        ExportConfig(model="toy2", calib_indices=range(12), data=str(path)), str(tmp_path / "b")
    )
    assert manifest_of(out)["export"]["images"] == 12


def test_npz_shape_mismatch_rejected(tmp_path):
    rng = np.random.default_rng(0)
    path = tmp_path / "calib.npz"
    np.savez(path, images=rng.standard_normal((4, 1, 8, 8), dtype=np.float32), labels=np.zeros(4, dtype=np.int64))
    with pytest.raises(ExportError, match="do not fit model input"):
        export_bundle(ExportConfig(model="toy2", calib_indices=[0, 1], data=str(path)), str(tmp_path / "b"))


def test_unknown_model_lists_registry(tmp_path):
    with pytest.raises(ExportError, match="toy2"):
        export_bundle(ExportConfig(model="resnet50", calib_indices=[0, 1]), str(tmp_path / "b"))
