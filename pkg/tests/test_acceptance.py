"""Acceptance suite: one check per criterion, each recorded as a PASS/FAIL line.

Run with pytest (lines appear in the terminal summary) or directly with
``python3 tests/test_acceptance.py``. Criterion 9 trains five generators for
up to 2000 steps each and dominates the runtime.
"""

import json
import math
import sys
import time

import numpy as np
import pytest
import torch

from oracles import brute_force_mha, central_fd_check, fwsnr_oracle, l1_oracle, mrs_oracle, randomize_, sdr_oracle
from tfcmusic import checkpoint, metrics
from tfcmusic import degrade as D
from tfcmusic.conformer import VARIANTS, ConformerBlock, MultiHeadAttention, f_conformer, t_conformer
from tfcmusic.generator import Generator, GeneratorConfig, param_count
from tfcmusic.inference import enhance_waveform
from tfcmusic.spectral import CompressedSpecTriplet, analyze, compress, resynthesize, stft
from tfcmusic.train import LossWeights, PairSet, Trainer, TrainConfig, compute_loss, fit, load_model, state_path

RESULTS = {}

OVERFIT_STEPS = 2000
OVERFIT_LR = 5e-5
LOSS_REDUCTION = 0.90
SDR_GAIN_DB = 3.0


def record(number, ok, detail):
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[number] = line
    print(line, flush=True)
    return ok


# 1 ----------------------------------------------------------------------


def test_criterion_01_parameter_parity():
    counts = {c: {v: param_count(Generator(GeneratorConfig(base_channels=c, variant=v))) for v in VARIANTS} for c in (16, 32, 64)}
    ok = all(len(set(per.values())) == 1 for per in counts.values())
    detail = ", ".join(f"C={c}: {sorted(set(per.values()))}" for c, per in counts.items())
    assert record(1, ok, detail)


# 2 ----------------------------------------------------------------------


def test_criterion_02_spectral_roundtrip():
    worst = 0.0
    for seed in range(10):
        x = np.random.default_rng(seed).standard_normal(48000) * 0.25
        y = resynthesize(compress(stft(x), 0.3), length=x.size)
        worst = max(worst, np.max(np.abs(y - x)[512:-512]) / np.max(np.abs(x)))
    assert record(2, worst < 1e-6, f"worst interior error / peak = {worst:.3e} (limit 1e-6)")


# 3 ----------------------------------------------------------------------


def test_criterion_03_identity_configuration():
    x = torch.tensor(D.synthetic_music(3.0, seed=1))[None]
    trip, phase = analyze(x)
    exact = []
    for variant in VARIANTS:
        torch.manual_seed(0)
        model = Generator(GeneratorConfig(base_channels=16, variant=variant)).double()
        with torch.no_grad():
            model.mask_decoder.final_conv.weight.zero_()
            model.mask_decoder.final_conv.bias.fill_(1.0)
            model.complex_decoder.final_conv.weight.zero_()
            model.complex_decoder.final_conv.bias.zero_()
        out = model(trip, phase)
        exact.append(
            torch.equal(out.mask, torch.ones_like(out.mask))
            and torch.equal(out.re, trip.re)
            and torch.equal(out.im, trip.im)
        )
    assert record(3, all(exact), f"bitwise X_r == Y_r and X_i == Y_i for {sum(exact)}/5 variants")


# 4 ----------------------------------------------------------------------


def test_criterion_04_gradient_oracles():
    torch.manual_seed(0)
    block = randomize_(ConformerBlock(8, 2, 3).double(), seed=1)
    x = torch.randn(2, 4, 8, dtype=torch.float64, requires_grad=True)
    r = torch.randn(2, 4, 8, dtype=torch.float64)
    err_block = central_fd_check(lambda: (block(x) * r).sum(), [*block.parameters(), x], samples_per_tensor=4)

    mha = randomize_(MultiHeadAttention(8, 2).double(), seed=2)
    q, k, v = (torch.randn(2, 5, 8, dtype=torch.float64, requires_grad=True) for _ in range(3))
    r = torch.randn(2, 5, 8, dtype=torch.float64)
    err_mha = central_fd_check(lambda: (mha(q, k, v) * r).sum(), [*mha.parameters(), q, k, v])

    cfg = GeneratorConfig(base_channels=4, tfc_depth=1, num_heads=2, conv_kernel=3)
    model = randomize_(Generator(cfg).double(), scale=0.05, seed=3)
    g = torch.Generator().manual_seed(4)
    noisy = torch.complex(*(torch.randn(1, 8, 16, generator=g, dtype=torch.float64) for _ in range(2)))
    clean = torch.complex(*(torch.randn(1, 8, 16, generator=g, dtype=torch.float64) for _ in range(2)))
    trip, phase, target = compress(noisy), torch.angle(noisy), compress(clean)

    def l_ri():
        out = model(trip, phase)
        return ((out.re - target.re) ** 2).mean() + ((out.im - target.im) ** 2).mean()

    err_gen = central_fd_check(l_ri, list(model.parameters()), samples_per_tensor=1)
    worst = max(err_block, err_mha, err_gen)
    detail = f"rel err block {err_block:.1e}, split-source MHA {err_mha:.1e}, generator L_RI {err_gen:.1e} (limit 1e-4)"
    assert record(4, worst < 1e-4, detail)


# 5 ----------------------------------------------------------------------


def test_criterion_05_attention_oracle():
    worst = 0.0
    for case in range(20):
        torch.manual_seed(case)
        dim, heads = (8, 2) if case % 2 else (12, 3)
        mha = MultiHeadAttention(dim, heads).double()
        lq, lk = 1 + case % 6, 2 + case % 5
        q = torch.randn(2, lq, dim, dtype=torch.float64)
        k = torch.randn(2, lk, dim, dtype=torch.float64)
        v = torch.randn(2, lk, dim, dtype=torch.float64)
        worst = max(worst, float(np.max(np.abs(mha(q, k, v).detach().numpy() - brute_force_mha(mha, q, k, v)))))
    assert record(5, worst < 1e-10, f"max abs diff vs brute force over 20 cases = {worst:.2e} (limit 1e-10)")


# 6 ----------------------------------------------------------------------


def test_criterion_06_equivariance():
    checks = []
    for seed in range(5):
        torch.manual_seed(seed)
        block = randomize_(ConformerBlock(16, 4, 31).double(), scale=0.1, seed=seed)
        x = torch.randn(2, 7, 9, 16, dtype=torch.float64)
        gen = torch.Generator().manual_seed(100 + seed)
        pf, pt = torch.randperm(9, generator=gen), torch.randperm(7, generator=gen)
        checks.append(torch.equal(t_conformer(x[:, :, pf], block), t_conformer(x, block)[:, :, pf]))
        checks.append(torch.equal(f_conformer(x[:, pt], block), f_conformer(x, block)[:, pt]))
    assert record(6, all(checks), f"{sum(checks)}/{len(checks)} permutation checks bitwise equal")


# 7 ----------------------------------------------------------------------


def test_criterion_07_degradation_contracts():
    rng = np.random.default_rng(0)
    snr_err = 0.0
    for _ in range(50):
        s, n = rng.standard_normal(4000), rng.standard_normal(4000) * rng.uniform(0.01, 10)
        want = rng.uniform(-10, 40)
        y = D.mix_at_snr(s, n, want)
        snr_err = max(snr_err, abs(10 * math.log10(np.sum(s**2) / np.sum((y - s) ** 2)) - want))

    rirs, noises = D.load_banks(D.DegradationSpec())
    snrs = np.array([D.sample_degradation(D.DegradationSpec(seed=s), rirs, noises).snr_db for s in range(1000)])
    in_range = bool(snrs.min() >= 5.0 and snrs.max() <= 30.0)

    eq_err = 0.0
    t = np.arange(32000) / 16000
    for freq, band in ((100.0, 0), (500.0, 1), (2000.0, 2), (6000.0, 3)):
        for gain in (-15.0, 7.5):
            x = 0.5 * np.sin(2 * np.pi * freq * t)
            gains = [0.0] * 4
            gains[band] = gain
            y = D.band_eq(x, gains)
            ratio = np.sqrt(np.mean(y[2048:-2048] ** 2) / np.mean(x[2048:-2048] ** 2))
            eq_err = max(eq_err, abs(ratio / 10 ** (gain / 20) - 1))

    clean = D.synthetic_music(3.0, seed=2)
    a = D.degrade(clean, D.DegradationSpec(seed=11), index=3)
    b = D.degrade(clean, D.DegradationSpec(seed=11), index=3)
    peak_err = max(abs(np.max(np.abs(a.degraded)) - 0.95), abs(np.max(np.abs(a.clean)) - 0.95))
    deterministic = np.array_equal(a.degraded, b.degraded) and np.array_equal(a.clean, b.clean)

    ok = snr_err < 1e-9 and in_range and eq_err < 0.01 and peak_err < 1e-9 and deterministic
    detail = (
        f"SNR err {snr_err:.1e} dB; 1000 draws in [{snrs.min():.2f}, {snrs.max():.2f}] dB; "
        f"EQ err {100 * eq_err:.3f}%; peak err {peak_err:.1e}; deterministic={deterministic}"
    )
    assert record(7, ok, detail)


# 8 ----------------------------------------------------------------------


def test_criterion_08_metric_oracles():
    worst = {"sdr": 0.0, "fwsnr": 0.0, "mrs": 0.0, "l1_spec": 0.0}
    for seed in range(20):
        rng = np.random.default_rng(seed)
        ref = rng.standard_normal(4000) * 0.3
        est = ref + rng.uniform(0.05, 1.0) * rng.standard_normal(4000) * 0.3
        worst["sdr"] = max(worst["sdr"], abs(metrics.sdr(ref, est) - sdr_oracle(ref, est)))
        worst["fwsnr"] = max(worst["fwsnr"], abs(metrics.fwsnr(ref, est) - fwsnr_oracle(ref, est)))
        worst["mrs"] = max(worst["mrs"], abs(metrics.mrs(ref, est) - mrs_oracle(ref, est)))
        worst["l1_spec"] = max(worst["l1_spec"], abs(metrics.l1_spec(ref, est) - l1_oracle(ref, est)))
    ref = np.random.default_rng(99).standard_normal(16000) * 0.3
    half = metrics.sdr(ref, 0.5 * ref)
    double = metrics.mrs(ref, 2 * ref)
    limits = {"sdr": 1e-10, "fwsnr": 1e-9, "mrs": 1e-9, "l1_spec": 1e-12}
    ok = all(worst[k] < limits[k] for k in worst)
    ok = ok and abs(half - 6.0206) < 5e-5 and abs(double - 3 * (1 + math.log(2))) < 1e-9
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f"; sdr(ref, ref/2) = {half:.4f}; mrs(ref, 2ref) = {double:.6f}"
    assert record(8, ok, detail)


# 9 ----------------------------------------------------------------------


def overfit_pair():
    clean = D.synthetic_music(3.0, seed=0)
    ex = D.degrade(clean, D.DegradationSpec(seed=1))
    return PairSet(ids=["solo"], clean=[ex.clean], degraded=[ex.degraded])


def overfit(variant, workdir):
    data = overfit_pair()
    out = workdir / f"{variant}.ckpt"
    cfg = TrainConfig(
        variant=variant,
        lr=OVERFIT_LR,
        batch_size=1,
        epochs=OVERFIT_STEPS,
        max_steps=OVERFIT_STEPS,
        stop_loss_ratio=1.0 - LOSS_REDUCTION,
        out=str(out),
    )
    start = time.perf_counter()
    fit(cfg, GeneratorConfig(base_channels=16, variant=variant), train_data=data)
    log = [json.loads(line) for line in open(str(out) + ".metrics.jsonl")]
    first = log[0]["total"]
    model, stft_cfg, _, meta = load_model(out)
    trainer = Trainer(model, TrainConfig(variant=variant), stft_cfg)
    final = trainer.validation_loss(data.pairs()).total
    enhanced = enhance_waveform(model, data.degraded[0], stft_cfg)
    return {
        "variant": variant,
        "steps": len(log),
        "first": first,
        "final": final,
        "reduction": 1.0 - final / first,
        "sdr_degraded": metrics.sdr(data.clean[0], data.degraded[0]),
        "sdr_enhanced": metrics.sdr(data.clean[0], enhanced),
        "seconds": time.perf_counter() - start,
    }


def test_criterion_09_desk_scale_learning(tmp_path):
    runs = [overfit(v, tmp_path) for v in ("CPq", "C", "P", "PC", "CPv")]
    parts, ok = [], True
    for run in runs:
        good = run["reduction"] >= LOSS_REDUCTION
        text = f"{run['variant']} {100 * run['reduction']:.1f}% in {run['steps']} steps"
        if run["variant"] == "CPq":
            gain = run["sdr_enhanced"] - run["sdr_degraded"]
            good = good and gain >= SDR_GAIN_DB
            text += f", SDR {run['sdr_degraded']:.2f} -> {run['sdr_enhanced']:.2f} dB"
        ok = ok and good
        parts.append(text)
        print(json.dumps(run), flush=True)
    assert record(9, ok, "; ".join(parts) + f" (need >= {100 * LOSS_REDUCTION:.0f}% and CPq SDR gain >= {SDR_GAIN_DB} dB)")


# 10 ---------------------------------------------------------------------


def test_criterion_10_loss_algebra():
    w = LossWeights()
    worst, zeros = 0.0, True
    for seed in range(20):
        rng = np.random.default_rng(seed)
        re, im, er, ei = (rng.standard_normal((6, 8)) for _ in range(4))
        clean = CompressedSpecTriplet(np.hypot(re, im), re, im)
        est = CompressedSpecTriplet(np.hypot(er, ei), er, ei)
        x, xh = rng.standard_normal(100), rng.standard_normal(100)
        out = compute_loss(clean, est, x, xh)
        combo = 0.15 * out.l_mag + 0.85 * out.l_ri + 0.1 * out.l_time
        worst = max(worst, abs(out.total - combo) / abs(combo))
        same = compute_loss(clean, clean, x, x.copy())
        zeros = zeros and (same.l_mag, same.l_ri, same.l_time, same.total) == (0, 0, 0, 0)
    ok = worst < 1e-9 and zeros and (w.mag, w.ri, w.time) == (0.15, 0.85, 0.1)
    assert record(10, ok, f"max relative deviation {worst:.1e} (limit 1e-9); all terms zero on identical inputs: {zeros}")


# 11 ---------------------------------------------------------------------


def test_criterion_11_persistence(tmp_path):
    torch.manual_seed(5)
    cfg = GeneratorConfig(base_channels=8, num_heads=2, conv_kernel=15)
    trainer = Trainer(Generator(cfg), TrainConfig())
    path = trainer.save(tmp_path / "a.ckpt")
    loaded, stft_cfg, _, _ = load_model(path)
    x = D.synthetic_music(2.0, seed=3)
    same_output = np.array_equal(enhance_waveform(trainer.model, x), enhance_waveform(loaded, x, stft_cfg))
    resaved = Trainer(loaded, TrainConfig()).save(tmp_path / "b.ckpt")
    same_bytes = path.read_bytes() == resaved.read_bytes()

    data = PairSet()
    for i in range(3):
        ex = D.degrade(D.synthetic_music(1.0, seed=10 + i), D.DegradationSpec(seed=i))
        data.ids.append(str(i))
        data.clean.append(ex.clean)
        data.degraded.append(ex.degraded)
    tiny = GeneratorConfig(base_channels=4, tfc_depth=1, num_heads=2, conv_kernel=3)
    base = dict(epochs=3, batch_size=2, seed=7)
    full = tmp_path / "full.ckpt"
    fit(TrainConfig(out=str(full), **base), tiny, train_data=data)
    part = tmp_path / "part.ckpt"
    fit(TrainConfig(out=str(part), max_steps=3, **base), tiny, train_data=data)
    fit(TrainConfig(out=str(part), **base), tiny, resume=state_path(part), train_data=data)
    losses_full = [json.loads(line)["total"] for line in open(str(full) + ".metrics.jsonl")]
    losses_part = [json.loads(line)["total"] for line in open(str(part) + ".metrics.jsonl")]
    a, _, _ = checkpoint.load(state_path(full))
    b, _, _ = checkpoint.load(state_path(part))
    same_state = set(a) == set(b) and all(np.array_equal(a[k], b[k]) for k in a)
    same_steps = losses_full == losses_part and len(losses_full) == 6
    ok = same_output and same_bytes and same_state and same_steps
    detail = (
        f"reload enhancement bitwise={same_output}, resave bytes identical={same_bytes}; "
        f"resumed run: per-step losses identical={same_steps}, final params+moments bitwise={same_state}"
    )
    assert record(11, ok, detail)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s"]))
