"""End-to-end acceptance checks, one test per criterion.

Each test prints a ``CRITERION n: PASS/FAIL`` line with the measured values
(visible with ``pytest -s``). The separation scenarios run the shipped
configs through the ``sim`` entry point, so together these take a few
minutes on one core.
"""

import json
import time
from pathlib import Path

import numpy as np
import pytest

from rfbss import cli
from rfbss.chipmodel import N_DACS, ChipConfig, draw_mismatch, dynamic_range_db, is_monotone, new_chip
from rfbss.ica import IcaConfig, run_bss, whiten
from rfbss.metrics import amari_index, attenuation_db, bandwidth_3db, compression_test, im3_test, noise_floor
from rfbss.mixing import complex_to_real8, real8_to_complex
from rfbss.signalgen import dbm_to_vpp

CONFIGS = Path(__file__).parents[1] / "configs"

pytestmark = pytest.mark.slow


def _report(name, ok, detail):
    print(f"\nCRITERION {name}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, detail


def _sim_run(config, out):
    t0 = time.perf_counter()
    code = cli.main(["run", "--config", str(CONFIGS / config), "--out", str(out)])
    elapsed = time.perf_counter() - t0
    doc = json.loads((out / "report.json").read_text())
    return code, doc, elapsed


@pytest.fixture(scope="module")
def comms_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("comms_a")
    return out, _sim_run("comms.ini", out)


def test_criterion_01_tone_separation(tmp_path):
    code, doc, elapsed = _sim_run("tone.ini", tmp_path / "nominal")
    nominal = doc["results"]["separation"]["separation_dbc"]
    code_i, doc_i, _ = _sim_run("tone_ideal.ini", tmp_path / "ideal")
    ideal = doc_i["results"]["separation"]["separation_dbc"]
    ok = code == 0 and code_i == 0 and nominal >= 57.0 and elapsed < 120.0 and ideal >= 80.0
    _report("1", ok, f"nominal {nominal:.1f} dBc in {elapsed:.0f} s, ideal {ideal:.1f} dBc")


def test_criterion_02_comms_separation(comms_run):
    _, (code, doc, _) = comms_run
    sep = doc["results"]["separation"]
    sir, amari = sep["per_channel_sir_db"], sep["amari_index"]
    criteria = doc["results"]["criteria"]
    ok = code == 0 and min(sir) >= 20.0 and amari < 0.1 and criteria == {"sir_db_min": 20.0, "amari_max": 0.1}
    _report("2", ok, f"SIR {[round(s, 1) for s in sir]} dB, Amari {amari:.4f}")


def test_criterion_03_monotonicity():
    cfg = ChipConfig()
    monotone = sum(is_monotone(draw_mismatch(cfg.unit_mismatch, cfg.row_mismatch, s)) for s in range(100))
    _report("3", monotone == 100, f"{monotone}/100 realizations x {N_DACS} DACs x 8191 codes monotone")


def test_criterion_04_filter():
    chip = new_chip(ChipConfig(filter_mode="six_pole"))
    fc = bandwidth_3db(chip, "six_pole", fs=400e6)
    att = attenuation_db(chip, 13e6, "six_pole", fs=400e6)
    ok = abs(fc - 6.5e6) <= 0.02 * 6.5e6 and abs(att - 36.1) <= 1.0
    _report("4", ok, f"-3 dB at {fc / 1e6:.4f} MHz, {att:.2f} dB at 13 MHz")


def test_criterion_05_passthrough_bandwidth():
    bw = bandwidth_3db(new_chip(ChipConfig()), "passthrough")
    _report("5", abs(bw - 15.4e6) <= 0.02 * 15.4e6, f"-3 dB at {bw / 1e6:.4f} MHz")


def test_criterion_06_im3_and_compression():
    chip = new_chip(ChipConfig())
    im3 = im3_test(chip, 1.0e6, 1.1e6, 1.0)
    comp = compression_test(chip, 1.0e6, 1.0)
    ok = abs(im3 + 63.0) <= 1.0 and abs(comp) < 0.1
    _report("6", ok, f"IM3 {im3:.2f} dBc, compression {comp:.4f} dB")


def test_criterion_07_noise_and_dynamic_range():
    cfg = ChipConfig()
    rms = noise_floor(new_chip(cfg), 1e-2)
    dr = dynamic_range_db(cfg)
    ok = bool(np.all(np.abs(rms - 0.15e-3) <= 0.05 * 0.15e-3)) and dr > 62.0
    _report("7", ok, f"row RMS {rms.min() * 1e3:.4f}..{rms.max() * 1e3:.4f} mV, DR {dr:.2f} dB")


def test_criterion_08_dbm_table():
    pairs = [(-10, 0.2), (4, 1.0), (-24, 0.04)]
    errs = [abs(dbm_to_vpp(p) / v - 1) for p, v in pairs]
    _report("8", max(errs) <= 0.005, f"max relative error {max(errs):.4%}")


def test_criterion_09_ica_oracle():
    rng = np.random.default_rng(0)
    A = np.array([[1.0, 0.6], [0.4, 1.0]])
    S = rng.uniform(-np.sqrt(3), np.sqrt(3), (40000, 2))
    cfg = IcaConfig(complex_structured=False, batch_samples=4096, max_epochs=500)
    state, _ = run_bss(S @ A.T, None, cfg)
    amari = amari_index(state.W_loaded @ A)
    # brute-force oracle: W A against A^-1 A up to permutation and scaling
    G = state.W_loaded @ A
    perm_err = min(
        np.abs(np.abs(G[:, p] / np.diag(G[:, p])[None, :]) - np.eye(2)).max() for p in ([0, 1], [1, 0])
    )
    ok = amari < 0.05 and state.iteration <= 500 and perm_err < 0.1
    _report("9", ok, f"Amari {amari:.4f} after {state.iteration} epochs")


def test_criterion_10_isomorphism_and_whitening():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(1000):
        M = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
        N = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
        R = complex_to_real8(M)
        worst = max(
            worst,
            np.abs(complex_to_real8(M @ N) - R @ complex_to_real8(N)).max(),
            np.abs(complex_to_real8(M + N) - R - complex_to_real8(N)).max(),
            np.abs(real8_to_complex(R)[0] - M).max(),
        )
    X = rng.normal(size=(20000, 8)) @ rng.normal(size=(8, 8))
    _, Z = whiten(X)
    cov_err = np.linalg.norm(np.cov(Z, rowvar=False, bias=True) - np.eye(8))
    ok = worst <= 1e-12 and cov_err <= 1e-3
    _report("10", ok, f"max identity error {worst:.1e}, whitened covariance error {cov_err:.1e}")


def test_criterion_11_determinism(comms_run, tmp_path):
    out_a, (_, doc_a, _) = comms_run
    _, doc_b, _ = _sim_run("comms.ini", tmp_path)
    csvs = sorted(f for f in doc_a["files"] if f.endswith(".csv"))
    same = [(out_a / f).read_bytes() == (tmp_path / f).read_bytes() for f in csvs]
    doc_a.pop("timestamp"), doc_b.pop("timestamp")
    ok = len(csvs) == 4 and all(same) and doc_a == doc_b
    _report("11", ok, f"{sum(same)}/{len(csvs)} CSV files byte-identical, report equal except timestamp")
