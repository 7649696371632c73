import numpy as np
import pytest
from matplotlib.image import imread

from gca.errors import MissingFieldError
from gca.plots import DPI, PANEL_INCHES, plot_ledger, plot_structures


def fake_ledger(k=3, D=4, n_epochs=6, seed=0):
    rng = np.random.default_rng(seed)
    truth = (rng.random((k, D, D)) < 0.3).astype(int)
    return {
        "epochs": [
            {"epoch": e, "auprc_src": 0.3 + 0.1 * e, "auprc_tgt": 0.2 + 0.05 * e, "test_rmse": 1.0 - 0.05 * e}
            for e in range(n_epochs)
        ],
        "structures": {
            "source": rng.random((k, D, D)).tolist(),
            "target": rng.random((k, D, D)).tolist(),
            "truth_source": truth.tolist(),
            "truth_target": truth.tolist(),
        },
        "loss_history": [
            {"step": s, "recon_src": 1.0 / (s + 1), "kl_src": 0.1, "disc": 0.05, "total": 1.2 / (s + 1)}
            for s in range(30)
        ],
    }


def test_three_images(tmp_path):
    paths = plot_ledger(fake_ledger(), tmp_path, "run")
    assert len(paths) == 3 and all(p.exists() and p.stat().st_size > 0 for p in paths)


def test_empty_ledger():
    with pytest.raises(MissingFieldError):
        plot_ledger({}, "unused")


def test_missing_field(tmp_path):
    ledger = fake_ledger()
    del ledger["loss_history"]
    with pytest.raises(MissingFieldError):
        plot_ledger(ledger, tmp_path)


@pytest.mark.parametrize("k", [1, 3])
def test_heatmap_grid_pixels(tmp_path, k):
    path = plot_structures(fake_ledger(k=k), tmp_path / "s.png")
    height, width = imread(path).shape[:2]
    panel = round(PANEL_INCHES * DPI)
    assert (height, width) == (k * panel, 3 * panel)


def test_heatmap_cells_encode_probabilities(tmp_path):
    ledger = fake_ledger(k=1, D=2)
    ledger["structures"]["source"] = [[[0.0, 1.0], [1.0, 0.0]]]
    img = imread(plot_structures(ledger, tmp_path / "s.png"))[..., :3]
    panel = round(PANEL_INCHES * DPI)
    # sample the centres of the four cells in the source panel
    quarter = panel // 4
    lo = img[panel // 2 - quarter // 2, panel // 2 - quarter // 2]
    hi = img[panel // 2 - quarter // 2, panel // 2 + quarter // 2]
    assert not np.allclose(lo, hi)
