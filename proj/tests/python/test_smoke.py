import json
import pytest

import transid


def test_derive_seed_is_stable():
    assert transid.derive_seed(1, 1, 0) == transid.derive_seed(1, 1, 0)
    assert transid.derive_seed(1, 1, 0) != transid.derive_seed(1, 1, 1)
    u = transid.rng_uniform(7, 1000)
    assert all(0.0 <= x < 1.0 for x in u)
    assert abs(sum(u) / len(u) - 0.5) < 0.05


def test_render_and_correlate():
    spec = transid.InfillSpec()
    spec.pattern = "diamond"
    spec.density = 0.2
    spec.seed = 3
    geom = transid.realize(spec)
    assert geom.layer_count > 0
    img = transid.render(geom)
    assert img.shape == (64, 64)
    assert img.min() >= 0.0 and img.max() <= 1.0
    assert img[0, 0] == 1.0
    assert transid.normalized_cross_correlation(img, img) == pytest.approx(1.0)
    shifted = transid.render(geom, translation=(0.5, 0.0))
    assert transid.normalized_cross_correlation(img, shifted) < 1.0
    blurred = transid.apply_psf(img, 1.0)
    assert blurred.sum() == pytest.approx(img.sum(), rel=1e-3)


def test_single_ray_chord_through_walls():
    spec = transid.InfillSpec()
    spec.density = 0.01
    geom = transid.realize(spec)
    assert transid.path_length(geom, 25.0, 25.0) > 0.0


def test_invalid_spec_raises_value_error():
    spec = transid.InfillSpec()
    spec.density = 1.5
    with pytest.raises(ValueError):
        transid.realize(spec)
    with pytest.raises(ValueError):
        spec.pattern = "zigzag"


def test_spec_json_round_trip():
    spec = transid.InfillSpec()
    spec.pattern = "hexagonal"
    spec.position_offset = (1.0, 0.5)
    back = transid.InfillSpec.from_json(spec.to_json())
    assert back.pattern == "hexagonal"
    assert back.position_offset == (1.0, 0.5)


def test_match_matrix_diagonal_is_complete():
    spec = transid.InfillSpec()
    spec.seed = 5
    plane = transid.ImagePlane(128, 128, 0.5)
    img = transid.render(transid.realize(spec), plane=plane)
    m = transid.match_rate_matrix([img, img], ["a", "b"])
    assert m["rate"][0][0] == 1.0


def test_config_helpers_and_layer_sweep(tmp_path):
    cfg = transid.config("layer-sweep", layer={"thicknesses": [0.1, 0.2]})
    assert cfg["kind"] == "layer-sweep"
    assert json.loads(transid.resolve_config(json.dumps(cfg)))["layer"]["thicknesses"] == [0.1, 0.2]
    results = transid.run(cfg, tmp_path)
    assert results and all(r["passed"] for r in results)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert any(a["path"] == "reports/layer_sweep.csv" for a in manifest["artifacts"])


def test_bad_config_is_rejected():
    with pytest.raises(ValueError):
        transid.resolve_config('{"kind": "nope"}')

