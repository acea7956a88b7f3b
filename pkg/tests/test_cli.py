import json

import numpy as np
import pytest

from hashguard.cli import main
from hashguard.data import SyntheticDataset
from hashguard.model import load_net, net_fingerprint


@pytest.fixture(scope="module")
def workspace(tmp_path_factory, dataset, net, db, state):
    """Artifacts for CLI commands that consume files, reusing the session
    pipeline objects instead of retraining."""
    from hashguard.detector import save_state
    from hashguard.hamming import save_database
    from hashguard.model import save_net

    root = tmp_path_factory.mktemp("cli")
    dataset.save(root / "dataset.npz")
    save_net(net, root / "model.hgnet")
    save_database(db, root / "database.hgdb")
    save_state(state, root / "detector.json")
    return root


def run(root, *argv):
    return main(["--run-root", str(root / "runs"), *argv])


def only_run_dir(root, prefix):
    dirs = sorted((root / "runs").glob(prefix + "-*"))
    assert dirs, f"no {prefix} run directory"
    return dirs[-1]


def test_theory_prints_paper_interval(capsys):
    assert main(["theory", "--K", "64", "--C", "1000", "--sigmas", "3"]) == 0
    out = capsys.readouterr().out
    assert "[20,44]" in out


def test_theory_with_trials_writes_fit(workspace):
    assert run(workspace, "theory", "--K", "32", "--C", "10",
               "--sigmas", "3", "--trials", "20000") == 0
    d = only_run_dir(workspace, "theory")
    report = json.loads((d / "theory.json").read_text())
    assert report["chi_square"]["p_value"] > 0.0
    assert (d / "histogram.csv").exists()


def test_unknown_flag_is_usage_error(workspace):
    with pytest.raises(SystemExit) as exc:
        run(workspace, "theory", "--nonsense", "1")
    assert exc.value.code == 2


def test_missing_input_is_runtime_error(workspace):
    code = run(workspace, "index", "--dataset", "/does/not/exist.npz",
               "--model", "/does/not/exist.hgnet")
    assert code == 4


def test_datagen_and_reuse(workspace, capsys):
    args = ("datagen", "--classes", "10", "--samples", "600", "--seed", "3")
    assert run(workspace, *args) == 0
    d = only_run_dir(workspace, "datagen")
    ds = SyntheticDataset.load(d / "dataset.npz")
    assert len(ds.images) == 600
    capsys.readouterr()
    assert run(workspace, *args) == 0
    assert "reusing finished run" in capsys.readouterr().out


def test_attack_writes_records(workspace):
    assert run(workspace, "attack",
               "--dataset", str(workspace / "dataset.npz"),
               "--model", str(workspace / "model.hgnet"),
               "--db", str(workspace / "database.hgdb"),
               "--mode", "untargeted", "--epsilon", str(32 / 255),
               "--count", "8") == 0
    d = only_run_dir(workspace, "attack")
    rows = [json.loads(l) for l in (d / "attacks.jsonl").read_text().splitlines()]
    assert len(rows) == 8
    assert {"mode", "epsilon", "success", "c1", "c2", "c3", "linf", "l2"} <= set(rows[0])
    with np.load(d / "adversarial.npz") as data:
        assert data["images"].shape[0] == 8


def test_calibrate_detect_evaluate_chain(workspace, capsys):
    ds_path = str(workspace / "dataset.npz")
    model_path = str(workspace / "model.hgnet")
    db_path = str(workspace / "database.hgdb")
    assert run(workspace, "calibrate", "--dataset", ds_path,
               "--model", model_path, "--db", db_path) == 0
    det = only_run_dir(workspace, "calibrate") / "detector.json"

    # detect on a benign calibration sample -> benign verdict, exit 0
    ds = SyntheticDataset.load(ds_path)
    x_cal, _ = ds.flat("calibration")
    benign_npz = workspace / "benign.npz"
    np.savez(benign_npz, images=x_cal[:4].astype(np.float32))
    capsys.readouterr()
    assert run(workspace, "detect", "--model", model_path, "--db", db_path,
               "--detector", str(det), "--input", str(benign_npz),
               "--rows", "4") == 0
    out = capsys.readouterr().out
    assert "benign" in out

    attack_dir = only_run_dir(workspace, "attack")
    assert run(workspace, "evaluate", "--dataset", ds_path, "--model", model_path,
               "--db", db_path, "--detector", str(det),
               "--attack", f"untargeted={attack_dir / 'adversarial.npz'}") == 0
    ev = only_run_dir(workspace, "evaluate")
    summary = json.loads((ev / "evaluation.json").read_text())
    assert "untargeted" in summary["attacks"]
    assert (ev / "records.jsonl").exists()

    assert run(workspace, "ablate", "--dataset", ds_path, "--model", model_path,
               "--db", db_path, "--detector", str(det),
               "--attack", f"untargeted={attack_dir / 'adversarial.npz'}") == 0
    ab = only_run_dir(workspace, "ablate")
    table = json.loads((ab / "ablation.json").read_text())["table"]
    assert len(table) == 4

    assert run(workspace, "report", str(ev), str(ab)) == 0
    rp = only_run_dir(workspace, "report")
    merged = json.loads((rp / "report.json").read_text())
    assert len(merged["runs"]) == 2


def test_detector_model_binding(workspace, tmp_path):
    """A detector calibrated against one model refuses another checkpoint."""
    from hashguard.model import ToyHashNet, save_net

    det = only_run_dir(workspace, "calibrate") / "detector.json"
    other = ToyHashNet.create(768, 8, 64, seed=77)
    other_path = tmp_path / "other.hgnet"
    save_net(other, other_path)
    benign_npz = workspace / "benign.npz"
    code = run(workspace, "detect", "--model", str(other_path),
               "--db", str(workspace / "database.hgdb"),
               "--detector", str(det), "--input", str(benign_npz))
    assert code == 4


def test_config_file_supplies_defaults(workspace, tmp_path):
    cfg_file = tmp_path / "cfg.json"
    cfg_file.write_text(json.dumps({"classes": 10, "samples": 700, "seed": 9}))
    assert main(["--run-root", str(workspace / "runs"),
                 "--config", str(cfg_file), "datagen"]) == 0
    dirs = sorted((workspace / "runs").glob("datagen-*"))
    sizes = set()
    for d in dirs:
        ds = SyntheticDataset.load(d / "dataset.npz")
        sizes.add(len(ds.images))
    assert 700 in sizes


def test_bench_small(workspace):
    assert run(workspace, "bench", "--scan-sizes", "20000",
               "--batch-sizes", "1,4", "--detect-db-size", "2000",
               "--reps", "3") == 0
    d = only_run_dir(workspace, "bench")
    timing = json.loads((d / "timing.json").read_text())
    assert timing["scan"][0]["db_size"] == 20000
    assert len(timing["latency"]) == 4  # 2 batch sizes x detector on/off
