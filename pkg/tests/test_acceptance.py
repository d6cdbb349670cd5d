"""Acceptance checks; each prints one PASS/FAIL line.

Run alone with ``python3 -m pytest tests/test_acceptance.py -v``.
"""

import json
import math
import time

import numpy as np
import pytest

from avae.autodiff import check_gradient
from avae.bandwidth import bandwidth_for, bias_correct, corrected_bandwidth
from avae.cli import main
from avae.diagnostics import collapsed_axes
from avae.kde import KdeModel, entropy_loo, fit_whiten, log_density, log_density_batch
from avae.nets import MlpParams, encode, mlp_init
from avae.trainer import build_loss_graph, compute_beta

from conftest import SMOKE_CONFIG

pytestmark = pytest.mark.slow

TABLE = [
    # (l, m, h_opt, h_corr); h_opt None means "> 1.0"
    (10, 500, 0.74, 0.60),
    (10, 10000, 0.60, 0.51),
    (20, 2000, 0.84, 0.64),
    (50, 5000, 0.99, 0.70),
    (100, 10000, None, 0.74),
]
TABLE_TOL = 0.03
TABLE_TOL_LARGE = 0.02
ENTROPY_N = 10000
ENTROPY_BANDS = {16: (7.2, 8.0), 64: (28.0, 32.0)}


@pytest.fixture
def report(capsys):
    def emit(label, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {label}: {detail}")
        return ok
    return emit


@pytest.fixture(scope="module")
def table_rows():
    t0 = time.perf_counter()
    rows = {(l, m): bandwidth_for(l, m) for l, m, _, _ in TABLE}
    return rows, time.perf_counter() - t0


@pytest.fixture(scope="module")
def entropies():
    out = {}
    for l in ENTROPY_BANDS:
        h = corrected_bandwidth(l, ENTROPY_N)
        x = np.random.default_rng(l).standard_normal((ENTROPY_N, l))
        out[l] = (h, entropy_loo(fit_whiten(x).apply(x), h))
    return out


class TestBandwidthTable:
    @pytest.mark.parametrize("l,m,h_ref,hc_ref", TABLE)
    def test_cell(self, table_rows, report, l, m, h_ref, hc_ref):
        est = table_rows[0][(l, m)]
        if h_ref is None:
            ok_h = est.h_opt > 1.0
            ok_c = abs(est.h_corr - hc_ref) <= TABLE_TOL_LARGE
            want = f"h_opt > 1.0, h_corr {hc_ref} +/- {TABLE_TOL_LARGE}"
        else:
            ok_h = abs(est.h_opt - h_ref) <= TABLE_TOL
            ok_c = abs(est.h_corr - hc_ref) <= TABLE_TOL
            want = f"h_opt {h_ref}, h_corr {hc_ref} +/- {TABLE_TOL}"
        report(f"1 bandwidth table l={l} m={m}", ok_h and ok_c,
               f"h_opt {est.h_opt:.4f} (std {est.h_opt_std:.4f}), h_corr {est.h_corr:.4f}; "
               f"want {want}")
        assert ok_h and ok_c

    def test_runtime(self, table_rows, report):
        secs = table_rows[1]
        ok = report("1 bandwidth table runtime", secs < 600, f"{secs:.0f} s (limit 600 s)")
        assert ok


class TestBiasCorrection:
    @pytest.mark.parametrize("h", [0.1, 0.74, 1.0, 2.0])
    def test_exact(self, report, h):
        alpha, hc = bias_correct(h)
        err = abs(hc - h / math.sqrt(1 + h * h))
        ok = report(f"2 bias correction h={h}", err <= 1e-12 and hc < 1,
                    f"h_corr {hc:.15f}, error {err:.1e}")
        assert ok

    def test_below_one(self, report):
        hs = np.logspace(-6, 6, 2001)
        worst = max(bias_correct(float(h))[1] for h in hs)
        ok = report("2 h_corr < 1 over h in [1e-6, 1e6]", worst < 1, f"max h_corr {worst!r}")
        assert ok


class TestEntropy:
    @pytest.mark.parametrize("l", sorted(ENTROPY_BANDS))
    def test_band(self, entropies, report, l):
        lo, hi = ENTROPY_BANDS[l]
        h, e = entropies[l]
        ok = report(f"3 whitened LOO entropy l={l}", lo <= e <= hi,
                    f"{e:.3f} with h_corr {h:.4f}; want [{lo}, {hi}], ground truth {l / 2:.2f}")
        assert ok

    @pytest.mark.parametrize("l", sorted(ENTROPY_BANDS))
    def test_max_entropy_bound(self, entropies, report, l):
        _, e = entropies[l]
        ok = report(f"3 Gaussian bound l={l}", e <= l / 2 + 0.1,
                    f"{e:.3f}; want <= {l / 2 + 0.1:.1f}")
        assert ok


class TestLatentConvergence:
    def test_moments(self, smoke_run, report):
        z = encode(smoke_run.encoder, smoke_run.dataset.data[smoke_run.val_idx])
        target = 1 - smoke_run.h_corr ** 2
        ratio = z.var(axis=0, ddof=1) / target
        corr = abs(np.corrcoef(z, rowvar=False)[0, 1])
        ok = np.all(np.abs(ratio - 1) <= 0.2) and corr < 0.15
        report("4 latent moments after smoke run", ok,
               f"variance / (1 - h_corr^2) = {np.round(ratio, 3).tolist()} (want within 0.2 of 1), "
               f"|corr| {corr:.3f} (want < 0.15)")
        assert ok

    def test_runtime(self, smoke_run, report):
        ok = report("4 smoke run runtime", smoke_run.runtime < 300,
                    f"{smoke_run.runtime:.1f} s (limit 300 s)")
        assert ok


class TestBeta:
    def test_unit_cases(self, report):
        ident = MlpParams([2, 2], [np.eye(2)], [np.zeros(2)])
        shifted = MlpParams([2, 2], [np.eye(2)], [np.array([3.0, 4.0])])
        b0 = compute_beta(ident, ident, np.random.default_rng(0).standard_normal((10, 2)))
        b5 = compute_beta(ident, shifted, np.zeros((1, 2)))
        ok = report("5 beta unit cases", b0 == 0.0 and b5 == 5.0,
                    f"perfect {b0}, residual (3,4) {b5}")
        assert ok

    def test_smoke_trend(self, smoke_run, report):
        x_val = smoke_run.dataset.data[smoke_run.val_idx]
        final = compute_beta(smoke_run.encoder, smoke_run.decoder, x_val)
        betas = [lg.beta for lg in smoke_run.logs]
        ok = (len(betas) == 31 and all(map(math.isfinite, betas)) and betas[-1] < betas[0]
              and final == betas[-1])
        report("5 beta trend on smoke run", ok,
               f"initial {betas[0]:.4f}, final {betas[-1]:.4f}, recomputed final {final:.4f}")
        assert ok


class TestGradientIntegrity:
    def test_random_points(self, report):
        rng = np.random.default_rng(2024)
        worst = 0.0
        for _ in range(50):
            enc = mlp_init([3, 6, 2], "tanh", "none", seed=int(rng.integers(1 << 31)))
            dec = mlp_init([2, 6, 3], "tanh", "none", seed=int(rng.integers(1 << 31)))
            enc = enc.with_arrays({k: v + 0.1 * rng.standard_normal(v.shape)
                                   for k, v in enc.arrays("enc").items()}, "enc")
            x = rng.standard_normal((8, 3))
            x_kde = rng.standard_normal((20, 3))
            zk = encode(enc, x_kde)
            h = float(rng.uniform(0.3, 0.9))
            beta = float(rng.uniform(0.1, 2.0))
            g, _, _ = build_loss_graph(enc, dec, len(zk), h, beta, len(x))
            inputs = {"x": x, "zk_t": zk.T.copy(), "zk_sq": np.sum(zk * zk, axis=1),
                      **enc.arrays("enc"), **dec.arrays("dec")}
            worst = max(worst, check_gradient(g, inputs, step=1e-5))
        ok = report("6 loss gradient vs central differences", worst < 1e-4,
                    f"max relative error {worst:.2e} over 50 points (want < 1e-4)")
        assert ok


class TestKdeCorrectness:
    def test_quadrature_1d(self, report):
        rng = np.random.default_rng(7)
        m = KdeModel(rng.standard_normal((9, 1)), 0.35)
        grid = np.linspace(-12, 12, 240001)
        err = abs(np.trapezoid(np.exp(log_density_batch(m, grid[:, None])), grid) - 1)
        ok = report("7 1-D quadrature", err < 1e-6, f"|integral - 1| = {err:.2e}")
        assert ok

    def test_monte_carlo_5d(self, report):
        rng = np.random.default_rng(8)
        m = KdeModel(rng.standard_normal((25, 5)), 0.6)
        s = 2.0
        z = s * rng.standard_normal((400000, 5))
        log_prop = -0.5 * np.sum(z * z, axis=1) / s ** 2 - 5 * (0.5 * math.log(2 * math.pi)
                                                                 + math.log(s))
        est = float(np.mean(np.exp(log_density_batch(m, z) - log_prop)))
        ok = report("7 5-D Monte-Carlo mass", abs(est - 1) < 0.02, f"{est:.4f} (want 1 +/- 0.02)")
        assert ok

    def test_naive_sum(self, report):
        rng = np.random.default_rng(9)
        worst = 0.0
        for _ in range(20):
            s = rng.standard_normal((5, 3))
            z = rng.standard_normal(3)
            h = float(rng.uniform(0.3, 2.0))
            naive = math.log(np.sum(np.exp(-np.sum((s - z) ** 2, axis=1) / (2 * h * h)))
                             / 5 / (2 * math.pi * h * h) ** 1.5)
            worst = max(worst, abs(log_density(KdeModel(s, h), z) - naive))
        ok = report("7 log-sum-exp vs naive sum", worst < 1e-12, f"max difference {worst:.1e}")
        assert ok


class TestExcludedSubstitutes:
    def test_collapse_detector(self, report):
        rng = np.random.default_rng(10)
        z = rng.standard_normal((2000, 4))
        full = collapsed_axes(z)
        z[:, 2] = 0.3
        const = collapsed_axes(z)
        ok = report("8 collapse detector (stands in for image-scale tables)",
                    full == [] and const == [2],
                    f"full-rank flagged {full}, constant axis flagged {const}")
        assert ok


class TestDeterminism:
    def test_train_twice(self, tmp_path, report):
        cfg = tmp_path / "smoke.json"
        cfg.write_text(json.dumps(SMOKE_CONFIG))
        for name in ("a", "b"):
            assert main(["train", "--config", str(cfg), "--out", str(tmp_path / name)]) == 0
        same = all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
                   for f in ("checkpoint.json", "metrics.jsonl"))
        ok = report("9 bit-identical retraining", same, "checkpoint.json and metrics.jsonl compared")
        assert ok


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
