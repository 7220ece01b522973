import pytest

from src.config import PHI_OFF
from src.services.sweep import SweepService


@pytest.fixture
def service(corpus, dev, small_cfg):
    return SweepService(corpus, [dev], small_cfg)


def test_phi_grid_gives_one_row_per_value(service):
    table = service.run("phi", [0.7, 0.8, 0.9, PHI_OFF])
    assert list(table.columns) == ["value", "dev_spearman", "final_uniformity"]
    assert len(table) == 4
    assert table["dev_spearman"].between(-1, 1).all()
    assert set(service.curves_frame()["run"]) == {"phi=0.7", "phi=0.8", "phi=0.9", f"phi={PHI_OFF:g}"}


def test_zero_k_matches_no_noise_ablation(service):
    table = service.run("k", [0.0, 1.0])
    runs = service.run_ablations(["no_noise"], [service.base_cfg.seed])
    assert table.loc[0, "dev_spearman"] == runs.loc[0, "dev_spearman"]
    assert table.loc[0, "final_uniformity"] == runs.loc[0, "final_uniformity"]


def test_rerun_is_identical(corpus, dev, small_cfg):
    first = SweepService(corpus, [dev], small_cfg).run("data_fraction", [0.5, 1.0])
    second = SweepService(corpus, [dev], small_cfg).run("data_fraction", [0.5, 1.0])
    assert first.equals(second)


def test_ablations_and_means(service):
    runs = service.run_ablations(["dclr", "no_both"], [1, 2])
    assert list(runs["variant"]) == ["dclr", "dclr", "no_both", "no_both"]
    means = SweepService.ablation_means(runs)
    assert list(means["variant"]) == ["dclr", "no_both"]
    assert means.loc[0, "dev_spearman"] == pytest.approx(runs["dev_spearman"][:2].mean())


def test_unknown_parameters_are_rejected(service):
    with pytest.raises(ValueError):
        service.run("tau", [0.1])
    with pytest.raises(ValueError):
        service.run_ablations(["no_such_variant"], [0])
