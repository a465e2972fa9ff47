import csv

import pytest

from fedvid import recipes


def rows(path):
    return list(csv.reader(open(path)))


def test_unknown_recipe(tiny_cfg, tmp_path):
    with pytest.raises(KeyError, match="valid ids"):
        recipes.reproduce("nope", tiny_cfg, tmp_path)


def test_table4_rows(tiny_cfg, tmp_path):
    recipes.reproduce("table4", tiny_cfg, tmp_path)
    names = [r[0] for r in rows(tmp_path / "table4.csv")[1:]]
    assert names[0] == "FedAvg (baseline)"
    assert names[1:] == [f"FedVSSL(a={a:g},b={b})" for a, b in recipes.TABLE4_GRID]
    assert {(a, b) for a, b in recipes.TABLE4_GRID} == {(a, b) for a in (0.0, 1.0, 0.9) for b in (0, 1)}
    assert (tmp_path / "table4.png").exists() and (tmp_path / "report.md").exists()


def test_fig4_levels(tiny_cfg, tmp_path):
    cfg = tiny_cfg.with_overrides(evaluation={"perturbation_levels": [0.0, 0.1, 0.2, 0.3, 0.4, 0.5]})
    out = recipes.reproduce("fig4", cfg, tmp_path)
    assert out["levels"] == [0.0, 0.1, 0.2, 0.3, 0.4, 0.5]
    assert [r[0] for r in rows(tmp_path / "fig4.csv")[1:]] == ["0.0", "0.1", "0.2", "0.3", "0.4", "0.5"]
    assert set(out["curves"]) == {"centralized", "fedavg", "fedvssl"}


@pytest.mark.parametrize("rid, files", [
    ("table2", ["table2.csv", "table2_summary.csv", "table2.png"]),
    ("fig3", ["landscape_centralized.csv", "landscape_fedavg.csv", "landscape_fedavg.png"]),
    ("fig5", ["fig5.csv", "fig5.png"]),
    ("fig6", ["fig6.csv", "fig6.png"]),
])
def test_bundles(rid, files, tiny_cfg, tmp_path):
    recipes.reproduce(rid, tiny_cfg, tmp_path)
    for f in files + ["report.md", "config.json"]:
        assert (tmp_path / f).exists(), f
