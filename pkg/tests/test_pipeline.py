import hashlib

import numpy as np
import pytest
import yaml
from conftest import TOY_CONFIG, toy_workspace

from polypsynth.data import DatasetManifest, load_dataset, load_image, load_mask
from polypsynth.edges import extract_edges, extract_polyp_edges, merge_edges
from polypsynth.exceptions import ConfigError, DependencyError, InsufficientDataError
from polypsynth.inpaint import EdgeConnectInpainter
from polypsynth.pipeline import derive_seed, generate_batch, load_config, parse_config, run_pipeline


def test_derive_seed_documented_hash():
    expected = int.from_bytes(hashlib.sha256(b"7:pretrain").digest()[:4], "big")
    assert derive_seed(7, "pretrain") == expected
    assert len({derive_seed(0, p) for p in ("a", "b", "c", "d")}) == 4


class TestConfig:
    def test_unknown_top_level_key(self):
        with pytest.raises(ConfigError) as err:
            parse_config({"seeed": 1})
        assert err.value.key == "seeed"

    def test_unknown_section_key(self):
        with pytest.raises(ConfigError) as err:
            parse_config({"inpaint": {"iters": 5}})
        assert err.value.key == "inpaint.iters"

    def test_unknown_loss_weight(self):
        with pytest.raises(ConfigError) as err:
            parse_config({"inpaint": {"loss_weights": {"tv": 1.0}}})
        assert err.value.key == "inpaint.loss_weights.tv"

    def test_missing_dataset_root(self, tmp_path):
        with pytest.raises(ConfigError) as err:
            parse_config({"data": {"labeled": "nowhere"}}, tmp_path)
        assert err.value.key == "data.labeled"

    def test_invalid_value_names_section(self):
        with pytest.raises(ConfigError) as err:
            parse_config({"segmentation": {"threshold": 2.0}})
        assert err.value.key == "segmentation"

    def test_seed_override_and_hash(self, tmp_path):
        path = toy_workspace(tmp_path)
        a, b = load_config(path), load_config(path, seed=5)
        assert a.seed == 0 and b.seed == 5
        assert a.hash != b.hash
        assert load_config(path).hash == a.hash
        assert a.phases == tuple(TOY_CONFIG["phases"])

    def test_bad_yaml(self, tmp_path):
        (tmp_path / "c.yaml").write_text("data: [unclosed")
        with pytest.raises(ConfigError):
            load_config(tmp_path / "c.yaml")


def test_dependency_error(tmp_path):
    path = toy_workspace(tmp_path, phases=["finetune"])
    with pytest.raises(DependencyError, match="pretrain"):
        run_pipeline(load_config(path), tmp_path / "runs")


def test_gen_masks_only_run(tmp_path):
    path = toy_workspace(tmp_path, phases=["gen_masks"])
    run_dir = run_pipeline(load_config(path), tmp_path / "runs", log=lambda *_: None)
    masks = sorted((run_dir / "masks").glob("*.png"))
    assert masks
    for p in masks:
        assert 0.05 <= load_mask(p).fill_ratio <= 0.70
    assert (run_dir / "manifest.tsv").is_file()
    assert run_dir.name.startswith("run-s0-")
    # a second run with the same seed and config refuses to overwrite
    with pytest.raises(Exception, match="already exists"):
        run_pipeline(load_config(path), tmp_path / "runs")
    # a new seed gets its own directory
    assert run_pipeline(load_config(path, seed=1), tmp_path / "runs", log=lambda *_: None) != run_dir


@pytest.fixture
def generation_inputs(tmp_path):
    toy_workspace(tmp_path)
    model = EdgeConnectInpainter(resolution=32, width=8, n_downsample=1, n_res_blocks=1).initialize()
    clean = load_dataset(tmp_path / "clean", "unlabeled")
    polyps = load_dataset(tmp_path / "labeled")
    return model.to_checkpoint(), clean, polyps


def test_generate_batch_singleton_is_step3_plus_step4(tmp_path, generation_inputs):
    ckpt, clean, polyps = generation_inputs
    clean1, polyp1 = DatasetManifest(clean.records[:1]), DatasetManifest(polyps.records[:1])
    out = generate_batch(ckpt, clean1, polyp1, 1, seed=3, out_dir=tmp_path / "gen")
    rec = out[0]
    assert rec.origin == "synthetic" and rec.labeled
    c = load_image(clean1[0].image_path, 32).data
    p = load_image(polyp1[0].image_path, 32).data
    m = load_mask(polyp1[0].mask_path, 32).data
    merged = merge_edges(extract_edges(c).data, extract_polyp_edges(p, m).data, m).data
    expected = EdgeConnectInpainter.from_checkpoint(ckpt).inpaint([c], [merged], [m])[0]
    np.testing.assert_array_equal(load_image(rec.image_path).data, expected)
    np.testing.assert_array_equal(load_mask(rec.mask_path).data, m)


def test_generate_batch_masks_transfer(tmp_path, generation_inputs):
    ckpt, clean, polyps = generation_inputs
    out = generate_batch(ckpt, clean, polyps, 6, seed=0, out_dir=tmp_path / "gen")
    assert len(out) == 6
    by_stem = {r.stem: r for r in polyps}
    for rec in out:
        polyp_stem = rec.source.split("polyp=")[1]
        src = load_mask(by_stem[polyp_stem].mask_path, 32).data
        np.testing.assert_array_equal(load_mask(rec.mask_path).data, src)
        assert load_image(rec.image_path).shape[:2] == src.shape
    path = out.write(tmp_path / "gen" / "manifest.tsv")
    assert DatasetManifest.read(path) == out


def test_generate_batch_empty_inputs(tmp_path, generation_inputs):
    ckpt, clean, polyps = generation_inputs
    with pytest.raises(InsufficientDataError):
        generate_batch(ckpt, DatasetManifest(), polyps, 1, 0, tmp_path)
    with pytest.raises(InsufficientDataError):
        generate_batch(ckpt, clean, DatasetManifest(), 1, 0, tmp_path)


def test_config_round_trips_through_yaml(tmp_path):
    path = toy_workspace(tmp_path)
    cfg = load_config(path)
    dumped = yaml.safe_load(yaml.safe_dump(cfg.to_dict()))
    assert parse_config(dumped, tmp_path).hash == cfg.hash
