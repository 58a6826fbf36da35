import json
from io import StringIO

import pytest
from django.core.management import call_command
from django.core.management.base import CommandError

from caustic_bounds import storage
from caustic_bounds.pfm import read_pfm

from .conftest import flat_mirror_data, two_receiver_data


def _call(*args):
    out = StringIO()
    call_command(*args, stdout=out)
    return out.getvalue()


@pytest.fixture
def flat_run(tmp_path, scene_file):
    scene = scene_file(flat_mirror_data())
    cache = tmp_path / "bounds.bin"
    _call("precompute", "--scene", str(scene), "--chain", "R", "--grid", "8",
          "--max-depth", "3", "--out", str(cache))
    return scene, cache


def test_precompute_writes_cache(flat_run):
    _, cache = flat_run
    loaded = storage.load(cache)

    assert loaded.chain == "R"
    assert loaded.width == 8
    assert loaded.params["max_depth"] == 3


def test_precompute_rejects_unsupported_chain(tmp_path, scene_file):
    scene = scene_file(flat_mirror_data())

    with pytest.raises(CommandError, match="cannot host"):
        _call("precompute", "--scene", str(scene), "--chain", "T", "--out", str(tmp_path / "x.bin"))


def test_precompute_rejects_missing_scene(tmp_path):
    with pytest.raises(CommandError, match="not found"):
        _call("precompute", "--scene", str(tmp_path / "nope.json"), "--chain", "R",
              "--out", str(tmp_path / "x.bin"))


def test_render_writes_image_and_stats(tmp_path, flat_run):
    scene, cache = flat_run
    image, stats = tmp_path / "render.pfm", tmp_path / "stats.json"
    output = _call("render", "--scene", str(scene), "--cache", str(cache), "--candidates", "1",
                   "--spp", "2", "--out", str(image), "--stats", str(stats))

    assert read_pfm(image).shape == (8, 8, 3)
    assert json.loads(stats.read_text())["spp"] == 2
    assert "Wrote" in output


def test_render_rejects_foreign_cache(tmp_path, flat_run, scene_file):
    _, cache = flat_run
    data = flat_mirror_data()
    data["light"]["position"] = [0.0, 0.0, 2.0]
    other = scene_file(data, "other.json")

    with pytest.raises(CommandError, match="different scene"):
        _call("render", "--scene", str(other), "--cache", str(cache), "--gamma", "1",
              "--out", str(tmp_path / "r.pfm"))


def test_reference_from_cache(tmp_path, flat_run):
    scene, cache = flat_run
    image = tmp_path / "reference.pfm"
    output = _call("reference", "--scene", str(scene), "--cache", str(cache), "--res", "4",
                   "--raw", "--out", str(image))

    assert read_pfm(image).shape == (4, 4, 3)
    assert "Lit pixels" in output


def test_reference_needs_chain_or_cache(tmp_path, scene_file):
    scene = scene_file(flat_mirror_data())

    with pytest.raises(CommandError, match="--chain or --cache"):
        _call("reference", "--scene", str(scene), "--out", str(tmp_path / "r.pfm"))


def test_validate_reports_no_violations(tmp_path, flat_run):
    scene, cache = flat_run
    report_path = tmp_path / "report.json"
    output = _call("validate", "--scene", str(scene), "--cache", str(cache), "--samples", "100",
                   "--root-checks", "5", "--out", str(report_path))
    report = json.loads(report_path.read_text())

    assert report["violations"] == 0
    assert "No bound violations" in output


def test_study_estimators_writes_images_and_summary(tmp_path, flat_run):
    scene, cache = flat_run
    out = tmp_path / "study"
    _call("study_estimators", "--scene", str(scene), "--cache", str(cache), "--candidates", "1",
          "--spp", "1", "--res", "4", "--out", str(out))
    summary = json.loads((out / "summary.json").read_text())

    assert set(summary) == {"binned", "independent", "one_sample", "uniform"}
    assert (out / "reference.pfm").exists()


def test_demo2d_writes_cases(tmp_path):
    config = tmp_path / "demo.json"
    config.write_text(json.dumps({"samples": 51, "receiver_samples": 11, "max_depth": 3}))
    output = _call("demo2d", "--config", str(config), "--out", str(tmp_path / "demo"))

    assert (tmp_path / "demo" / "straight.json").exists()
    assert "fold:" in output


def test_demo2d_rejects_unreadable_config(tmp_path):
    with pytest.raises(CommandError):
        _call("demo2d", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path))


def test_render_picks_receiver_object(tmp_path, scene_file):
    scene = scene_file(two_receiver_data())
    cache = tmp_path / "bounds.bin"
    output = _call("precompute", "--scene", str(scene), "--chain", "R", "--grid", "4",
                   "--max-depth", "2", "--out", str(cache))
    assert "receiver1, receiver2" in output

    image = tmp_path / "far.pfm"
    _call("render", "--scene", str(scene), "--cache", str(cache), "--gamma", "1e12",
          "--receiver", "receiver2", "--out", str(image))
    assert read_pfm(image).shape == (4, 4, 3)

    with pytest.raises(CommandError, match="name one"):
        _call("render", "--scene", str(scene), "--cache", str(cache), "--gamma", "1",
              "--out", str(tmp_path / "r.pfm"))
