"""Config normalization and rejection of unusable requests."""

import pytest

from bundle_exporter import ExportConfig, ExportError


def test_indices_deduplicated_and_sorted():
    cfg = ExportConfig(model="toy2", calib_indices=[5, 1, 5, 3, 1])
    assert cfg.calib_indices == (1, 3, 5)


def test_indices_accept_any_int_iterable():
    assert ExportConfig(model="toy2", calib_indices=range(8, 2, -1)).calib_indices == (3, 4, 5, 6, 7, 8)


def test_single_index_rejected():
    with pytest.raises(ExportError, match="at least 2 distinct"):
        ExportConfig(model="toy2", calib_indices=[4, 4, 4])


def test_negative_index_rejected():
    with pytest.raises(ExportError, match="negative"):
        ExportConfig(model="toy2", calib_indices=[-1, 3])


def test_patch_cap_floor():
    with pytest.raises(ExportError, match="at least 2 rows"):
        ExportConfig(model="toy2", calib_indices=[0, 1], patch_cap=1)
    ExportConfig(model="toy2", calib_indices=[0, 1], patch_cap=2)


def test_unknown_stage_rejected():
    with pytest.raises(ExportError, match="preBN"):
        ExportConfig(model="toy2", calib_indices=[0, 1], stage="logits")


def test_unknown_score_rejected():
    with pytest.raises(ExportError, match="unknown score 'fisher'"):
        ExportConfig(model="toy2", calib_indices=[0, 1], scores=("taylor", "fisher"))


def test_configs_with_same_image_set_compare_equal():
    a = ExportConfig(model="toy2", calib_indices=[2, 0, 2])
    b = ExportConfig(model="toy2", calib_indices=(0, 2))
    assert a == b
