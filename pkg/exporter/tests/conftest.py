import pytest

from bundle_exporter import ExportConfig, export_bundle


@pytest.fixture(scope="session")
def toy2_dir(tmp_path_factory):
    """One toy2 export shared by read-only tests."""
    out = tmp_path_factory.mktemp("bundles") / "toy2"
    export_bundle(ExportConfig(model="toy2", calib_indices=range(64), patch_cap=200), str(out))
    return str(out)
