"""Stored per-channel scores: first-order saliency, BN scale, activation RMS."""

import numpy as np
import pytest
import torch

from bundle_exporter import ExportConfig, ExportError, calibration_source, export_baseline_scores
from bundle_exporter.models import build_model


def save_ckpt(path, name, mutate):
    model, _ = build_model(name)
    state = model.state_dict()
    mutate(state)
    torch.save(state, path)
    return str(path)


def test_zeroed_channel_scores_zero(tmp_path):
    """A channel with all-zero weights never activates: saliency and RMS vanish."""

    def zero_ch3(state):
        state["conv1.weight"][3] = 0.0

    ckpt = save_ckpt(tmp_path / "m.pt", "toy2", zero_ch3)
    cfg = ExportConfig(model="toy2", calib_indices=range(32), ckpt=ckpt)
    scores = export_baseline_scores(cfg)
    taylor = scores["conv1"]["taylor"]
    rms = scores["conv1"]["act_rms"]
    assert taylor[3] == 0.0
    assert rms[3] == 0.0
    assert np.all(taylor[np.arange(8) != 3] > 0)
    assert np.all(rms[np.arange(8) != 3] > 0)


def test_bn_scale_is_abs_gamma(tmp_path):
    gamma = torch.tensor([0.5, 2.0, -1.25, 0.75, 1.5, 0.1])

    def set_gamma(state):
        state["bn1.weight"] = gamma.clone()

    ckpt = save_ckpt(tmp_path / "m.pt", "toy_bn", set_gamma)
    cfg = ExportConfig(model="toy_bn", calib_indices=range(8), scores=("bn_scale",), ckpt=ckpt)
    scores = export_baseline_scores(cfg)
    np.testing.assert_array_equal(scores["conv1"]["bn_scale"], np.abs(gamma.numpy()))


def test_bn_scale_without_batchnorm_is_an_error():
    cfg = ExportConfig(model="toy2", calib_indices=range(8), scores=("bn_scale",))
    with pytest.raises(ExportError, match="'conv1'.*no trailing BatchNorm"):
        export_baseline_scores(cfg)


def test_act_rms_matches_spatial_moment():
    cfg = ExportConfig(model="toy2", calib_indices=range(24), scores=("act_rms",))
    scores = export_baseline_scores(cfg)
    # independent recomputation from a fresh forward pass
    model, spec = build_model("toy2")
    images, _ = calibration_source("toy2")
    with torch.no_grad():
        act = model.conv1(torch.from_numpy(images[:24]))
    want = torch.sqrt((act**2).mean(dim=(0, 2, 3))).numpy()
    np.testing.assert_allclose(scores["conv1"]["act_rms"], want, rtol=1e-5)


def test_scores_cover_every_selected_layer():
    cfg = ExportConfig(model="toy_dw", calib_indices=range(8))
    scores = export_baseline_scores(cfg)
    assert sorted(scores) == ["conv1", "dw", "pw"]
    for per_layer in scores.values():
        assert sorted(per_layer) == ["act_rms", "taylor"]
