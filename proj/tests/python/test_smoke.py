import json
import os
import subprocess

import numpy as np
import pytest

import dkf

CLI = os.environ.get("DKF_CLI")


def test_predict_hand_product():
    F = np.array([[1.0, 0.1], [0.0, 1.0]])
    s = dkf.StepModel(F, np.zeros((2, 1)), np.array([[1.0, 0.0]]), np.zeros(2), np.zeros(1), np.zeros((2, 2)),
                      np.eye(1))
    x, P = dkf.predict(np.array([0.0, 1.0]), np.eye(2), s)
    np.testing.assert_allclose(x, [0.1, 1.0])
    np.testing.assert_allclose(P, [[1.01, 0.1], [0.1, 1.0]])


def test_update_reduces_variance():
    x, P = dkf.update(np.zeros(1), np.eye(1), np.ones(1), np.eye(1), np.eye(1))
    assert x[0] == pytest.approx(0.5) and P[0, 0] == pytest.approx(0.5)


def test_rocket_filter_and_gradient():
    cfg = dkf.RocketConfig()
    cfg.nt = 20
    run = dkf.rocket_truth(cfg)
    assert len(run["states"]) == 21 and len(run["noisy"]) == 20
    base = dkf.rocket_model(cfg, np.eye(2))
    F = dkf.rocket_table_initial_F()
    value, grad = dkf.tied_gradient(base, run["noisy"], F)
    h = 1e-6
    fd = np.zeros((2, 2))
    for i in range(2):
        for j in range(2):
            a, b = F.copy(), F.copy()
            a[i, j] += h
            b[i, j] -= h
            fd[i, j] = (dkf.tied_gradient(base, run["noisy"], a)[0] - dkf.tied_gradient(base, run["noisy"], b)[0]) / (2 * h)
    assert np.linalg.norm(grad - fd) / np.linalg.norm(fd) < 1e-6
    tr = dkf.run_filter(dkf.rocket_model(cfg, F), run["noisy"])
    assert len(tr["x"]) == 20 and tr["K"][0].shape == (2, 1)


def test_bad_loss_mode_is_value_error():
    cfg = dkf.RocketConfig()
    cfg.nt = 2
    run = dkf.rocket_truth(cfg)
    with pytest.raises(ValueError):
        dkf.loss(dkf.rocket_model(cfg, np.eye(2)), run["noisy"], "absolute")


def test_verify_blocks():
    r = dkf.verify()
    assert r["rows"] == 500
    assert r["max_error"] < 1e-5


def test_rocket_inversion_matches_table():
    r = dkf.invert_rocket(sigma=0.005)
    target = np.array([[1.002941, 0.100005], [-0.000087, 0.997059]])
    assert np.abs(r["F_optimized"] - target).max() < 1e-2
    assert r["rmse_optimized"] <= 0.1 * r["rmse_initial"]


def test_closure_training_and_checkpoint(tmp_path):
    v = np.linspace(0.0, 1.0, 21)
    net, train_loss, _ = dkf.train_closure(v, dkf.true_diffusivity(v), sizes=[1, 8, 1], epochs=400, lr=1e-2)
    assert train_loss[-1] < train_loss[0]
    p = str(tmp_path / "c.ckpt")
    net.save(p)
    back = dkf.MlpModel.load(p)
    np.testing.assert_array_equal(back.diffusivity(v), net.diffusivity(v))
    assert back.parameter_count == 8 + 8 + 8 + 1
    a, _, _ = dkf.train_closure(v, dkf.true_diffusivity(v), sizes=[1, 8, 1], epochs=50)
    b, _, _ = dkf.train_closure(v, dkf.true_diffusivity(v), sizes=[1, 8, 1], epochs=50)
    np.testing.assert_array_equal(a.diffusivity(v), b.diffusivity(v))


def test_seeds():
    assert dkf.derive_seed(0, "x") == dkf.derive_seed(0, "x") != dkf.derive_seed(0, "y")
    assert dkf.RNG_ALGORITHM == "splitmix64-ctr"


@pytest.mark.skipif(CLI is None, reason="DKF_CLI not set")
def test_cli_exit_codes(tmp_path):
    ok = subprocess.run([CLI, "verify", "--out", str(tmp_path / "v")], capture_output=True)
    assert ok.returncode == 0
    manifest = json.loads((tmp_path / "v" / "manifest.json").read_text())
    for f in manifest["files"]:
        assert dkf.sha256_file(str(tmp_path / "v" / f["path"])) == f["sha256"]
    alert = subprocess.run([CLI, "verify", "--alert", "1e-30", "--out", str(tmp_path / "a")], capture_output=True)
    assert alert.returncode == 2
    missing = subprocess.run([CLI, "closure", "--input", str(tmp_path / "none"), "--out", str(tmp_path / "c")],
                             capture_output=True)
    assert missing.returncode == 1 and not (tmp_path / "c").exists()
    bad = subprocess.run([CLI, "rocket", "--no-such-flag"], capture_output=True)
    assert bad.returncode == 1


@pytest.mark.skipif(CLI is None, reason="DKF_CLI not set")
def test_cli_config_file_and_env_root(tmp_path):
    cfg = tmp_path / "rocket.toml"
    cfg.write_text("[rocket]\nsigma = [0.025]\nnt = 60\nseed = 3\n")
    env = dict(os.environ, DKF_OUT_ROOT=str(tmp_path / "root"))
    r = subprocess.run([CLI, "rocket", "--config", str(cfg), "--seed", "4"], capture_output=True, env=env)
    assert r.returncode == 0, r.stderr
    s = json.loads((tmp_path / "root" / "rocket" / "summary.json").read_text())
    assert s["config"]["nt"] == 60 and s["config"]["sigmas"] == [0.025]
    assert s["seeds"]["root"] == 4  # flag wins over the file
    loose = tmp_path / "loose.toml"
    loose.write_text("nt = 60\n")
    bad = subprocess.run([CLI, "rocket", "--config", str(loose), "--out", str(tmp_path / "x")], capture_output=True)
    assert bad.returncode == 1
