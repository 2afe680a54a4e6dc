"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

The learned-model criteria (7 to 10) share five SR generators trained once per
session (about 10 minutes on one CPU). Set ``DGF_ACCEPTANCE_CACHE`` to a
directory to keep the checkpoints between sessions; training is deterministic,
so a cached checkpoint is byte-identical to a fresh one.
"""

import math
import os
import time

import numpy as np
import pytest

from deepgf import experiments as ex
from deepgf.autodiff.gradcheck import grad_check
from deepgf.autodiff.nn import GeneratorConfig, build_generator
from deepgf.boxfilter import box_mean
from deepgf.checkpoint import load_checkpoint, save_checkpoint
from deepgf.cli import main
from deepgf.guided import GuidedFilterParams, guided_filter
from deepgf.imaging import ImagePair, PhantomSpec, make_dataset, make_phantom, nearest_downsample
from deepgf.metrics import D4_HIGHPASS, D4_LOWPASS, dwt2, idwt2, mae_masked, ssim_masked
from deepgf.pipeline import build_prediction
from deepgf.training import LossSpec, TrainConfig, loss, train
from gradcases import primitive_cases

RADII = (2, 4, 8, 16)
EPS = 1e-4


# ------------------------------------------------------------------ oracles

def window_mean_direct(x, r):
    """Mean over the clipped (2r+1)^2 window by explicit summation of every offset."""
    h, w = x.shape
    acc, cnt = np.zeros((h, w)), np.zeros((h, w))
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            ys, yd = slice(max(dy, 0), h + min(dy, 0)), slice(max(-dy, 0), h + min(-dy, 0))
            xs, xd = slice(max(dx, 0), w + min(dx, 0)), slice(max(-dx, 0), w + min(-dx, 0))
            acc[yd, xd] += x[ys, xs]
            cnt[yd, xd] += 1
    return acc / cnt


def guided_filter_direct(I, M, r, eps):
    mI, mM = window_mean_direct(I, r), window_mean_direct(M, r)
    a = (window_mean_direct(M * I, r) - mM * mI) / (window_mean_direct(M * M, r) - mM * mM + eps)
    b = mI - a * mM
    return window_mean_direct(a, r) * M + window_mean_direct(b, r)


# ----------------------------------------------------------- exact criteria

def test_c01_guided_filter_oracle(criterion):
    with criterion(1, "guided filter equals direct per-window evaluation") as c:
        rng = np.random.default_rng(1)
        pairs = [(rng.random((32, 32)), rng.random((32, 32))) for _ in range(100)]
        worst, elapsed = 0.0, 0.0
        for r in (1, 2, 4, 8):
            for eps in (1e-4, 1e-2):
                for I, M in pairs:
                    t = time.perf_counter()
                    P = guided_filter(I, M, GuidedFilterParams(r, eps))
                    elapsed += time.perf_counter() - t
                    worst = max(worst, np.abs(P - guided_filter_direct(I, M, r, eps)).max())
        c.note(f"max|d|={worst:.2e} over 800 cases, filter time {elapsed:.2f}s")
        assert worst <= 1e-10
        assert elapsed < 10


def test_c02_filter_invariants(criterion):
    with criterion(2, "linearity, shift invariance, constant-guide reduction") as c:
        rng = np.random.default_rng(2)
        lin = shift = const = 0.0
        for k in range(40):
            h, w = rng.integers(8, 40, size=2)
            p = GuidedFilterParams(int(rng.integers(1, 6)), float(10 ** rng.uniform(-4, -1)))
            I1, I2, M = rng.random((h, w)), rng.random((h, w)), rng.random((h, w))
            alpha, beta, cst = rng.uniform(-2, 2, size=3)
            lin = max(lin, np.abs(guided_filter(alpha * I1 + beta * I2, M, p)
                                  - alpha * guided_filter(I1, M, p) - beta * guided_filter(I2, M, p)).max())
            shift = max(shift, np.abs(guided_filter(I1 + cst, M, p) - guided_filter(I1, M, p) - cst).max())
            Mc = np.full((h, w), rng.uniform(-1, 1))
            const = max(const, np.abs(guided_filter(I1, Mc, p) - box_mean(box_mean(I1, p.radius), p.radius)).max())
        c.note(f"linearity {lin:.1e}, shift {shift:.1e}, constant M {const:.1e}")
        assert lin <= 1e-10 and shift <= 1e-10 and const <= 1e-12


def test_c03_box_filter_is_linear_time(criterion):
    with criterion(3, "box_mean wall time independent of radius") as c:
        x = np.random.default_rng(3).random((2048, 2048))
        start = time.perf_counter()

        def median_time(r):
            times = []
            for _ in range(5):
                t = time.perf_counter()
                box_mean(x, r)
                times.append(time.perf_counter() - t)
            return float(np.median(times))

        box_mean(x, 2)  # warm-up
        t2, t64 = median_time(2), median_time(64)
        total = time.perf_counter() - start
        c.note(f"r=2 {t2 * 1e3:.0f}ms, r=64 {t64 * 1e3:.0f}ms, ratio {t64 / t2:.2f}, total {total:.1f}s")
        assert t64 <= 1.5 * t2
        assert total < 30


def _pipeline_pair16():
    # the phantom generator needs at least 32 pixels, so a 64x64 phantom is area-averaged to 16x16
    a, b, m = make_phantom(PhantomSpec(seed=3, size=64))

    def pool(x):
        return x.reshape(16, 4, 16, 4).mean(axis=(1, 3))

    a16 = pool(a)
    return ImagePair(nearest_downsample(a16), pool(b), a16, pool(m.astype(np.float64)) > 0.5, "sr")


def test_c04_gradients(criterion):
    with criterion(4, "central differences: primitives and full withGF pipeline") as c:
        start = time.perf_counter()
        prim = {name: grad_check(graph, inputs) for name, (graph, inputs) in primitive_cases().items()}
        worst_name = max(prim, key=prim.get)
        c.note(f"{len(prim)} primitives worst {prim[worst_name]:.1e} ({worst_name})")
        pair = _pipeline_pair16()
        gf = GuidedFilterParams(2, 0.01)
        pipe = {}
        for arch in ("wdsr-mini", "unet-mini"):
            net = build_generator(GeneratorConfig(arch, base_channels=4, n_blocks=1, expansion=2,
                                                  encoder_depth=2, seed=1))
            rng = np.random.default_rng(0)
            # perturb every weight so zero-initialised layers do not hide gradient paths
            inputs = {k: v + 0.1 * rng.standard_normal(v.shape) for k, v in net.params.items()}
            names = sorted(inputs)
            inputs["I"], inputs["G"] = pair.input[None], pair.guide[None]

            def graph(t, n, net=net, names=names):
                pred = build_prediction(t, net, n["I"], n["G"], "sr", "withGF", gf, {k: n[k] for k in names})
                return loss(pred, pair.ground_truth, LossSpec("l1+grad"), pair.mask)

            pipe[arch] = grad_check(graph, inputs)
            c.note(f"{arch} ({net.parameter_count} params + I + G) {pipe[arch]:.1e}")
        elapsed = time.perf_counter() - start
        c.note(f"{elapsed:.0f}s")
        assert max(prim.values()) < 1e-6
        assert max(pipe.values()) < 1e-4
        assert elapsed < 300


def test_c05_wavelets(criterion):
    with criterion(5, "D4 wavelet reconstruction, orthonormality, constant image") as c:
        rng = np.random.default_rng(5)
        pr = max(np.abs(idwt2(dwt2(x)) - x).max()
                 for x in (rng.random(s) for s in ((64, 64), (48, 80), (33, 50), (17, 9))))
        h, g = D4_LOWPASS, D4_HIGHPASS
        ortho = max(abs((h * h).sum() - 1), abs((g * g).sum() - 1), abs((h[:2] * h[2:]).sum()),
                    abs((g[:2] * g[2:]).sum()), abs((h * g).sum()), abs(h.sum() - math.sqrt(2)), abs(g.sum()))
        pyr = dwt2(np.full((64, 64), 0.7))
        detail = max(np.abs(d).max() for band in pyr.details for d in band)
        c.note(f"reconstruction {pr:.1e}, orthonormality {ortho:.1e}, constant details {detail:.1e}")
        assert pr < 1e-10 and ortho < 1e-15 and detail < 1e-12


def test_c06_metric_sanity(criterion):
    with criterion(6, "ssim(a,a)=1, mae(a,a)=0, exact SSIM symmetry") as c:
        rng = np.random.default_rng(6)
        failures = 0
        for k in range(30):
            a, b, mask = make_phantom(PhantomSpec(seed=100 + k, size=32))
            a = a + 0.05 * rng.random(a.shape)
            failures += ssim_masked(a, a, mask) != 1.0
            failures += mae_masked(a, a, mask) != 0.0
            failures += ssim_masked(a, b, mask) != ssim_masked(b, a, mask)
            x, y = rng.random((23, 17)), rng.random((23, 17))
            failures += ssim_masked(x, x) != 1.0 or ssim_masked(x, y) != ssim_masked(y, x)
        c.note(f"{failures} violations in 120 checks")
        assert failures == 0


# -------------------------------------------------------- learned criteria

@pytest.fixture(scope="module")
def study(tmp_path_factory):
    cache = os.environ.get("DGF_ACCEPTANCE_CACHE") or str(tmp_path_factory.mktemp("acceptance"))
    os.makedirs(cache, exist_ok=True)
    spec = PhantomSpec(seed=1, size=64)
    train_set = make_dataset(spec, "sr", n=400)
    val_set = make_dataset(spec.with_seed(2), "sr", n=4)
    gen = GeneratorConfig("wdsr-mini", base_channels=16, seed=0)
    runs = [("withoutGF", 8)] + [("withGF", r) for r in RADII]
    cps, train_seconds, cached = {}, 0.0, 0
    for variant, r in runs:
        path = os.path.join(cache, f"{variant}_r{r}.dgfc")
        if os.path.exists(path):
            cps[variant, r] = load_checkpoint(path)
            cached += 1
            continue
        cfg = TrainConfig(variant=variant, loss=LossSpec("ssim"), initial_lr=1e-3, min_lr=1e-6,
                          max_iterations=5000, val_every=100, gf=GuidedFilterParams(r, EPS))
        t = time.process_time()
        cps[variant, r] = train(train_set, val_set, cfg, gen)
        train_seconds += time.process_time() - t
        save_checkpoint(cps[variant, r], path)
    withgf = {r: cps["withGF", r] for r in RADII}
    return dict(withgf=withgf, without=cps["withoutGF", 8], val=val_set,
                test=make_dataset(PhantomSpec(seed=3, size=64), "sr", n=8),
                train_seconds=train_seconds, cached=cached)


def test_c07_ablation_ordering(study, criterion):
    with criterion(7, "withGF/withoutGF > onlyGF > bilinear by 0.01; withGF within 0.03 of withoutGF") as c:
        # both the withGF radius and the onlyGF radius are chosen on validation data
        selected = min(study["withgf"], key=lambda r: study["withgf"][r].best_val)
        val_scores = {r: ex.evaluate_variants(study["val"], "sr", {}, GuidedFilterParams(r, EPS))
                      .aggregate("onlyGF", "ssim")[0] for r in (1, 2, 4, 8, 16)}
        only_r = max(val_scores, key=val_scores.get)
        rep = ex.evaluate_variants(study["test"], "sr", {"withGF": study["withgf"][selected],
                                                         "withoutGF": study["without"]},
                                   GuidedFilterParams(only_r, EPS))
        s = {v: rep.aggregate(v, "ssim")[0] for v in rep.variants()}
        c.note(", ".join(f"{v} {s[v]:.3f}" for v in ("bilinear", "onlyGF", "withGF", "withoutGF")))
        c.note(f"withGF r={selected}, onlyGF r={only_r} (validation)")
        max_iter = max(cp.train_config.max_iterations for cp in [study["without"], *study["withgf"].values()])
        if study["cached"]:
            c.note(f"{study['cached']} of 5 models from cache")
        else:
            c.note(f"training {study['train_seconds'] / 60:.1f} CPU min")
        assert min(s["withGF"], s["withoutGF"]) >= s["onlyGF"] + 0.01
        assert s["onlyGF"] >= s["bilinear"] + 0.01
        assert abs(s["withGF"] - s["withoutGF"]) <= 0.03
        assert max_iter <= 5000
        assert study["train_seconds"] <= 30 * 60


def test_c08_content_preservation(study, criterion):
    with criterion(8, "lowfreq SSIM: withGF(smallest r) beats withoutGF, non-increasing in r") as c:
        sweep = ex.content_preservation_sweep(study["withgf"], study["without"], study["test"], RADII)
        lf = dict(sweep.series("withGF", "lowfreq_ssim"))
        ref = sweep.value("ref", "withoutGF", "lowfreq_ssim")
        c.note(", ".join(f"r{r} {lf[r]:.3f}" for r in RADII) + f", withoutGF {ref:.3f}")
        assert lf[min(RADII)] >= ref + 0.005
        assert all(lf[b] <= lf[a] + 0.005 for a, b in zip(RADII, RADII[1:]))


def test_c09_guide_noise_robustness(study, criterion):
    with criterion(9, "SSIM drop sigma 0 to 0.4: withGF(smallest r) <= 0.5x withoutGF") as c:
        drops = {}
        for r in RADII:
            sweep = ex.robustness_sweep(study["withgf"][r], study["without"], study["test"])
            drops[r] = sweep.value(0.0, "withGF") - sweep.value(0.4, "withGF")
            drop_without = sweep.value(0.0, "withoutGF") - sweep.value(0.4, "withoutGF")
        ratios = {r: drops[r] / drop_without for r in RADII}
        c.note(f"withoutGF drop {drop_without:.3f}; withGF drop ratio " +
               ", ".join(f"r{r} {ratios[r]:.2f}" for r in RADII))
        assert ratios[min(RADII)] <= 0.5


def test_c10_adversarial_attack(study, criterion):
    with criterion(10, "attack: withoutGF MAE >= 1.5x withGF; withGF deviation converges lower") as c:
        selected = min(study["withgf"], key=lambda r: study["withgf"][r].best_val)
        spec_without = ex.AttackSpec(variant="withoutGF")
        results = []
        for r in sorted({min(RADII), selected}):
            cp = study["withgf"][r]
            for pair in study["test"][:2]:
                rw = ex.train_attack(cp, pair, ex.AttackSpec(variant="withGF"))
                ro = ex.train_attack(study["without"], pair, spec_without)
                mae_w = ex.apply_attack(cp, pair, rw, 1.0)[1]
                mae_o = ex.apply_attack(study["without"], pair, ro, 1.0)[1]
                results.append((r, pair.id, mae_w, mae_o, rw.final_deviation, ro.final_deviation))
                c.note(f"r{r} pair {pair.id}: MAE {mae_w:.3f} vs {mae_o:.3f}, "
                       f"deviation {rw.final_deviation:.0f} vs {ro.final_deviation:.0f}")
        assert all(mo >= 1.5 * mw for _, _, mw, mo, _, _ in results)
        assert all(dw < do for *_, dw, do in results)


# ------------------------------------------------------------- determinism

def _cli_pipeline(root):
    cfg = root / "run.cfg"
    cfg.write_text("task=sr\nphantom.size=32\ngenerator.base_channels=4\ngenerator.n_blocks=1\n"
                   "train.max_iterations=100\ntrain.val_every=25\ngf.radius=2\n"
                   "checkpoint=model.dgfc\noutput=metrics.csv\n")
    for name, seed, n in (("train", 1, 4), ("val", 2, 1), ("test", 3, 2)):
        assert main(["gen", "--config", str(cfg), "--out", str(root / name), "--set", f"seed={seed}",
                     "--set", f"n={n}"]) == 0
    assert main(["train", "--config", str(cfg), "--data", str(root / "train"), "--val", str(root / "val")]) == 0
    assert main(["eval", "--config", str(cfg), "--data", str(root / "test"),
                 "--checkpoint", str(root / "model.dgfc")]) == 0
    return (root / "model.dgfc").read_bytes(), (root / "metrics.csv").read_bytes()


def test_c11_determinism(tmp_path, criterion):
    with criterion(11, "gen, train 100 iterations, eval twice: byte-identical outputs") as c:
        (tmp_path / "a").mkdir()
        (tmp_path / "b").mkdir()
        cp_a, csv_a = _cli_pipeline(tmp_path / "a")
        cp_b, csv_b = _cli_pipeline(tmp_path / "b")
        c.note(f"checkpoint {len(cp_a)} bytes, CSV {len(csv_a)} bytes")
        assert cp_a == cp_b and csv_a == csv_b


# ------------------------------------------------------------- inspection

def test_shutout_maps_follow_the_input(study):
    """phi(I_up, 0) correlates with I_up more than phi(0, G) does, over the mask."""
    from deepgf.pipeline import guidance_map, upsampled_input

    net = study["withgf"][min(RADII)].network
    for pair in study["test"][:4]:
        up = upsampled_input(pair)[pair.mask]
        no_guide = guidance_map(net, pair.input, np.zeros_like(pair.guide), "sr")[pair.mask]
        no_input = guidance_map(net, np.zeros_like(pair.input), pair.guide, "sr")[pair.mask]
        assert np.corrcoef(no_guide, up)[0, 1] > np.corrcoef(no_input, up)[0, 1]


# ---------------------------------------------------------- attack curves

LAMBDAS_ADV = (0.0, 0.25, 0.5, 0.75, 1.0)


@pytest.fixture(scope="module")
def attack_curves(study):
    pair = study["test"][0]
    cp = study["withgf"][min(RADII)]
    rw = ex.train_attack(cp, pair, ex.AttackSpec(variant="withGF"))
    ro = ex.train_attack(study["without"], pair, ex.AttackSpec(variant="withoutGF"))
    return ([v for _, v in ex.attack_curve(cp, pair, rw, LAMBDAS_ADV).series("withGF", "mae")],
            [v for _, v in ex.attack_curve(study["without"], pair, ro, LAMBDAS_ADV).series("withoutGF", "mae")])


def test_attack_curve_without_gf_is_monotone(attack_curves):
    _, without = attack_curves
    assert all(b >= a for a, b in zip(without, without[1:]))
    assert attack_curves[0][-1] < without[-1]


@pytest.mark.xfail(strict=True, reason="the filtered prediction saturates: its deviation peaks near "
                                       "lambda_adversarial 0.25 and then decreases slightly")
def test_attack_curve_with_gf_is_monotone(attack_curves):
    withgf, _ = attack_curves
    assert all(b >= a for a, b in zip(withgf, withgf[1:]))
