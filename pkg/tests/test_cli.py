import json
import subprocess
import sys

import numpy as np
import pytest

from fourier_uap.cli import main
from fourier_uap.formats import read_grid_csv, read_image, read_network, read_tensor, write_image, write_tensor
from fourier_uap.oracle import LayerSpec, ToyModelSpec, build_oracle, synthetic_batch
from fourier_uap.protocol import decode_response, encode_request
from fourier_uap.search import kernel_response_map, matched_kernel
from fourier_uap.spectra import full_spectrum

SPEC = ToyModelSpec(seed=2, n=8, channels=3, num_classes=4, layers=(LayerSpec(6, 3), LayerSpec(6, 3)))


@pytest.fixture
def spec_file(tmp_path):
    path = tmp_path / "toy.json"
    path.write_text(json.dumps(SPEC.to_dict()))
    return str(path)


def test_sfa_dc_constant(tmp_path):
    out = tmp_path / "p.cspt"
    assert main(["sfa", "--n", "4", "--i", "0", "--j", "0", "--eps", "0.1", "--out", str(out),
                 "--png-like", str(tmp_path / "p.pgm")]) == 0
    p = read_tensor(out)
    assert p.shape == (1, 4, 4) and np.all(p == 0.1)
    assert np.all(read_image(tmp_path / "p.pgm") == 1.0)


def test_heatmap_byte_identical(tmp_path, spec_file, capsys):
    args = ["heatmap", "--oracle", spec_file, "--eps", "0.3", "--batch", "8", "--seed", "5"]
    assert main(args + ["--out", str(tmp_path / "a.csv"), "--render", str(tmp_path / "a.pgm")]) == 0
    assert main(args + ["--out", str(tmp_path / "b.csv")]) == 0
    a = (tmp_path / "a.csv").read_bytes()
    assert a == (tmp_path / "b.csv").read_bytes()
    values, meta = read_grid_csv(tmp_path / "a.csv")
    assert meta["seed"] == "5" and meta["eps"] == "0.3" and meta["n"] == "8"
    assert meta["oracle"] == SPEC.descriptor and meta["tool"].startswith("fourier-uap")
    assert read_image(tmp_path / "a.pgm").shape == (1, 8, 8)
    assert main(args[:-1] + ["6", "--out", str(tmp_path / "c.csv")]) == 0
    assert (tmp_path / "c.csv").read_bytes() != a
    assert "max" in capsys.readouterr().out


def test_attack_mid_gray(tmp_path):
    src = tmp_path / "gray.ppm"
    write_image(src, np.full((3, 16, 16), 128 / 255))
    out = tmp_path / "adv.ppm"
    for signed in ([], ["--signed"]):
        assert main(["attack", "--image", str(src), "--i", "3", "--j", "5", "--eps", str(20 / 255),
                     "--out", str(out)] + signed) == 0
        diff = np.abs(read_image(out) - read_image(src))
        assert diff.max() <= 20 / 255 + 1e-12 and diff.max() > 0


def test_unknown_flag_exits_nonzero(capsys):
    with pytest.raises(SystemExit) as info:
        main(["sfa", "--n", "4", "--i", "0", "--j", "0", "--eps", "0.1", "--out", "x", "--bogus"])
    assert info.value.code != 0
    assert "usage" in capsys.readouterr().err


def test_bad_input_reports_error(tmp_path, capsys):
    bad = tmp_path / "bad.cspt"
    bad.write_bytes(b"CSPT\x01\x00\x00\x00")
    assert main(["analyze", "--image", str(bad), "--out", str(tmp_path / "o.csv")]) == 1
    assert "error" in capsys.readouterr().err
    assert not (tmp_path / "o.csv").exists()


def test_spectra_and_matched_and_respond(tmp_path, capsys):
    net = tmp_path / "m.json"
    assert main(["matched", "--i", "2", "--j", "1", "--k", "3", "--n", "8", "--out", str(net)]) == 0
    layer = read_network(net).layers[0]
    assert np.allclose(layer.weights, matched_kernel((2, 1), 3, 8).weights)
    assert main(["spectra", str(net), "--n", "8", "--top", "5", "--out", str(tmp_path / "s.csv")]) == 0
    rows = [l for l in (tmp_path / "s.csv").read_text().splitlines() if not l.startswith("#")]
    assert rows[0] == "sigma,i,j" and len(rows) == 6
    assert abs(float(rows[1].split(",")[0]) - full_spectrum(layer, 8)[0][0]) < 1e-15
    assert main(["respond", "--kernel", f"{net}:0", "--n", "8", "--out", str(tmp_path / "r.csv"),
                 "--render", str(tmp_path / "r.pgm")]) == 0
    values, _ = read_grid_csv(tmp_path / "r.csv")
    assert np.array_equal(values, kernel_response_map(layer, 8).values)
    assert main(["respond", "--kernel", f"{net}:3", "--n", "8", "--out", str(tmp_path / "x.csv")]) == 1
    assert main(["matched", "--i", "0", "--j", "0", "--k", "2", "--n", "4"]) == 0
    assert json.loads(capsys.readouterr().out)["layers"][0]["k"] == 2


def test_analyze(tmp_path):
    src = tmp_path / "p.cspt"
    main(["sfa", "--n", "8", "--i", "1", "--j", "3", "--eps", "0.2", "--out", str(src)])
    assert main(["analyze", "--image", str(src), "--out", str(tmp_path / "a.csv"),
                 "--render", str(tmp_path / "a.pgm")]) == 0
    lines = [l.split(",") for l in (tmp_path / "a.csv").read_text().splitlines()
             if l[0].isdigit()]
    peaks = {(int(r[1]), int(r[2])) for r in lines if float(r[3]) > 1e-8}
    assert peaks == {(1, 3), (7, 5)}


def test_search_output(spec_file, capsys):
    assert main(["search", "--oracle", spec_file, "--eps", "0.3", "--batch", "8", "--seed", "1",
                 "--budget", "100"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0].startswith("frequency ") and out[2].startswith("queries ")


def test_data_files_and_geometry_errors(tmp_path, spec_file):
    files = []
    for k, x in enumerate(synthetic_batch(0, 8, 3, 3)):
        path = tmp_path / f"d{k}.cspt"
        write_tensor(path, x)
        files.append(str(path))
    assert main(["heatmap", "--oracle", spec_file, "--eps", "0.2", "--data", *files,
                 "--out", str(tmp_path / "h.csv")]) == 0
    _, meta = read_grid_csv(tmp_path / "h.csv")
    assert meta["batch"] == "3" and meta["data"] == "files"
    assert main(["heatmap", "--oracle", spec_file, "--n", "16", "--eps", "0.2",
                 "--out", str(tmp_path / "x.csv")]) == 1
    assert main(["heatmap", "--oracle", "tcp://127.0.0.1:9", "--eps", "0.2",
                 "--out", str(tmp_path / "x.csv")]) == 1


def start_serve(spec_file):
    proc = subprocess.Popen(
        [sys.executable, "-m", "fourier_uap.cli", "oracle-serve", "--spec", spec_file,
         "--listen", "127.0.0.1:0"],
        stdout=subprocess.PIPE, text=True,
    )
    line = proc.stdout.readline().split()
    assert line[0] == "listening"
    return proc, line[1]


def test_remote_heatmap_matches_local(tmp_path, spec_file):
    proc, endpoint = start_serve(spec_file)
    try:
        common = ["--eps", "0.3", "--batch", "8", "--seed", "4"]
        assert main(["heatmap", "--oracle", endpoint, "--n", "8", *common,
                     "--out", str(tmp_path / "remote.csv")]) == 0
        assert main(["heatmap", "--oracle", spec_file, *common,
                     "--out", str(tmp_path / "local.csv")]) == 0
    finally:
        proc.terminate()
        proc.wait(10)
    remote, rmeta = read_grid_csv(tmp_path / "remote.csv")
    local, _ = read_grid_csv(tmp_path / "local.csv")
    assert np.array_equal(remote, local)
    assert rmeta["oracle"] == f"remote:{endpoint}"


def test_oracle_serve_stdio(spec_file):
    xs = synthetic_batch(7, 8, 3, 5)
    proc = subprocess.run(
        [sys.executable, "-m", "fourier_uap.cli", "oracle-serve", "--spec", spec_file, "--listen", "stdio"],
        input=b"".join(encode_request(x) for x in xs), capture_output=True, timeout=60,
    )
    assert proc.returncode == 0
    labels = [decode_response(proc.stdout[k:k + 8]) for k in range(0, len(proc.stdout), 8)]
    assert labels == list(build_oracle(SPEC).query_batch(xs))
