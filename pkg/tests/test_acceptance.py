"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line.

Criterion 8 (the directional cross-validation study) trains 30 networks for
2000 steps each and dominates the runtime (roughly two hours on one core).
"""
import json
import math
import time
from dataclasses import replace

import numpy as np
import pytest

from gradcheck import TOLERANCE, check
from ilseg import cli, ildist, metrics, optim
from ilseg.ildist import IntensitySample, evaluate, fit_kde, shifted
from ilseg.losses import combined_loss, generalized_dice_loss, soft_bce
from ilseg.phantom import PhantomSpec, generate, generate_dataset
from ilseg.tensornet import ops
from ilseg.tensornet.checkpoint import load_checkpoint, save_checkpoint
from ilseg.tensornet.unet import UNetConfig, init_parameters
from ilseg.trainer import CaseData, ExperimentConfig, TRAINABLE, binarize, cross_validate, load_cases, predict
from ilseg.trainer import train_variant
from ilseg.volgrid import MaskVolume, SoftVolume, Volume, read_svol, write_svol
from test_ildist import brute_force_kde
from test_metrics import flood_fill_components, t_test_quadrature
from test_optim import reference_adamw


@pytest.fixture
def verdict(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {number}: {'PASS' if ok else 'FAIL'} | {detail}")
        assert ok, detail

    return emit


# ---------------------------------------------------------------- 1. KDE oracle


def test_criterion_1_kde_oracle(verdict):
    start = time.perf_counter()
    worst_c = worst_u = 0.0
    for seed in range(5):
        rng = np.random.default_rng(100 + seed)
        sample = IntensitySample(rng.normal(rng.uniform(60, 160), rng.uniform(8, 25), 500), 1)
        m = fit_kde(sample)
        grid = m.support_grid(0.5)
        ref = brute_force_kde(grid, sample.values, m.bandwidth) / m.norm_max
        worst_c = max(worst_c, float(np.max(np.abs(evaluate(m, grid) - ref))))
        u = fit_kde(sample, bin_width=0.0)
        ref_u = brute_force_kde(grid, sample.values, u.bandwidth) / u.norm_max
        worst_u = max(worst_u, float(np.max(np.abs(evaluate(u, grid) - np.clip(ref_u, 0, 1)))))
    elapsed = time.perf_counter() - start
    ok = worst_c <= 1e-3 and worst_u <= 1e-6 and elapsed < 10
    verdict(1, ok, f"compressed max err {worst_c:.2e} (<=1e-3), uncompressed {worst_u:.2e} (<=1e-6), {elapsed:.1f}s")


# ---------------------------------------------------------------- 2. normalization and shift


def test_criterion_2_normalization_and_shift(verdict):
    worst = 0.0
    shift_exact = True
    models = []
    for seed in range(5):
        rng = np.random.default_rng(200 + seed)
        models.append(fit_kde(IntensitySample(rng.normal(120, 15, 500), 1)))
    c = generate(PhantomSpec(seed=0))
    models.append(ildist.fit_from_pairs([(c.volume, c.mask)]))
    for m in models:
        worst = max(worst, abs(float(evaluate(m, m.support_grid(0.5)).max()) - 1.0))
        x = np.random.default_rng(1).uniform(-200, 500, 2000)
        shift_exact &= bool(np.array_equal(evaluate(shifted(m, 100.0), x), evaluate(m, x - 100.0)))
    ok = worst <= 1e-6 and shift_exact
    verdict(2, ok, f"max |grid max - 1| = {worst:.1e}; shifted(x) == model(x - 100) exactly: {shift_exact}")


# ---------------------------------------------------------------- 3. gradient suite


def _primitive_errors(seed):
    rng = np.random.default_rng(seed)
    errs = {}

    def lin(y):
        r = rng.normal(size=y.shape)
        return r

    x = rng.normal(size=(2, 2, 8, 8, 8))
    for k in (3, 1):
        w, b = rng.normal(size=(3, 2, k, k, k)), rng.normal(size=3)
        y, cache = ops.conv3d_forward(x, w, b)
        r = lin(y)
        dx, dw, db = ops.conv3d_backward(r, cache)
        f = lambda: float((ops.conv3d_forward(x, w, b)[0] * r).sum())  # noqa: E731
        errs[f"conv{k}"] = max(check(f, x, dx, rng, 100), check(f, w, dw, rng), check(f, b, db, rng))

    g_in = rng.normal(size=(2, 4, 4, 4, 4))
    gamma, beta = rng.normal(size=4), rng.normal(size=4)
    y, cache = ops.groupnorm_forward(g_in, gamma, beta, 2)
    r = lin(y)
    dx, dg, dbt = ops.groupnorm_backward(r, cache)
    f = lambda: float((ops.groupnorm_forward(g_in, gamma, beta, 2)[0] * r).sum())  # noqa: E731
    errs["groupnorm"] = max(check(f, g_in, dx, rng, 100), check(f, gamma, dg, rng), check(f, beta, dbt, rng))

    z = x.copy()
    z[np.abs(z) < 1e-3] = 0.5
    y, mask = ops.relu_forward(z)
    r = lin(y)
    errs["relu"] = check(lambda: float((ops.relu_forward(z)[0] * r).sum()), z, ops.relu_backward(r, mask), rng, 100)

    s = rng.normal(scale=2.5, size=(2, 2, 8, 8, 8))
    y, cache = ops.sigmoid_forward(s)
    r = lin(y)
    errs["sigmoid"] = check(lambda: float((ops.sigmoid_forward(s)[0] * r).sum()), s, ops.sigmoid_backward(r, cache),
                            rng, 100)

    y, cache = ops.maxpool2_forward(x)
    r = lin(y)
    errs["maxpool"] = check(lambda: float((ops.maxpool2_forward(x)[0] * r).sum()), x,
                            ops.maxpool2_backward(r, cache), rng, 100)

    u = rng.normal(size=(2, 2, 4, 4, 4))
    y, shape = ops.upsample2_forward(u)
    r = lin(y)
    errs["upsample"] = check(lambda: float((ops.upsample2_forward(u)[0] * r).sum()), u,
                             ops.upsample2_backward(r, shape), rng, 100)

    a, b2 = rng.normal(size=(2, 1, 8, 8, 8)), rng.normal(size=(2, 2, 8, 8, 8))
    y, sizes = ops.concat_forward([a, b2])
    r = lin(y)
    da, db2 = ops.concat_backward(r, sizes)
    f = lambda: float((ops.concat_forward([a, b2])[0] * r).sum())  # noqa: E731
    errs["concat"] = max(check(f, a, da, rng, 100), check(f, b2, db2, rng, 100))

    t = (rng.random((6, 6, 6)) < 0.3).astype(float)
    p = rng.uniform(0.05, 0.95, t.shape)
    errs["gdl"] = check(lambda: generalized_dice_loss(p, t)[0], p, generalized_dice_loss(p, t)[1], rng)
    yt = rng.random((6, 6, 6))
    errs["bce"] = check(lambda: soft_bce(p, yt)[0], p, soft_bce(p, yt)[1], rng)

    net = init_parameters(UNetConfig(2, 2, (4, 8, 12, 16), 2, "f64"), seed)
    xin = rng.normal(size=(2, 2, 8, 8, 8))
    ys = (rng.random((2, 8, 8, 8)) > 0.8).astype(float)
    yi = rng.random((2, 8, 8, 8))
    _, dpred = combined_loss(net.forward(xin), ys, yi, 1.0)
    grads, dxin = net.backward(dpred)
    f = lambda: combined_loss(net.forward(xin), ys, yi, 1.0)[0].total  # noqa: E731
    errs["unet"] = max([check(f, xin, dxin, rng, 20)] + [check(f, v, grads[n], rng, 3) for n, v in net.params.items()])
    return errs


def test_criterion_3_gradient_suite(verdict):
    start = time.perf_counter()
    worst = {}
    for seed in range(3):
        for name, e in _primitive_errors(seed).items():
            worst[name] = max(worst.get(name, 0.0), e)
    elapsed = time.perf_counter() - start
    name, top = max(worst.items(), key=lambda kv: kv[1])
    ok = top < TOLERANCE and elapsed < 300
    verdict(3, ok, f"{len(worst)} ops x 3 instances, max rel err {top:.1e} ({name}), {elapsed:.0f}s")


# ---------------------------------------------------------------- 4. loss anchors


def test_criterion_4_loss_anchors(verdict):
    rng = np.random.default_rng(4)
    t = (rng.random((8, 8, 8)) < 0.3).astype(float)
    perfect = generalized_dice_loss(t.copy(), t)[0]
    complement = generalized_dice_loss(1 - t, t)[0]
    half = np.full((4, 4, 4), 0.5)
    bce = soft_bce(half, half)[0]
    pred = rng.uniform(0.05, 0.95, (1, 2, 8, 8, 8))
    yi = rng.random((1, 8, 8, 8))
    seg, il = generalized_dice_loss(pred[:, 0], t[None])[0], soft_bce(pred[:, 1], yi)[0]
    linear = all(combined_loss(pred, t[None], yi, lam)[0].total == seg + lam * il for lam in (0.0, 0.5, 1.0, 3.0))
    cfg = ExperimentConfig()
    defaults = cfg.lam == 1.0 and cfg.lr == 3e-4 and cfg.weight_decay == 5e-4
    defaults &= optim.AdamWState().lr == 3e-4 and optim.AdamWState().weight_decay == 5e-4
    ok = perfect < 1e-5 and complement > 0.999 and abs(bce - math.log(2)) <= 1e-6 and linear and defaults
    verdict(4, ok, f"GDL perfect {perfect:.1e}, complement {complement:.6f}, BCE(0.5) - ln2 = {bce - math.log(2):.1e}, "
                   f"linear in lambda {linear}, defaults lam=1 lr=3e-4 wd=5e-4 {defaults}")


# ---------------------------------------------------------------- 5. optimizer oracle


def test_criterion_5_optimizer_oracle(verdict):
    worst = 0.0
    for theta0, grads, lr, wd in [(0.8, [1.0, 1.0], 3e-4, 5e-4), (-1.3, [0.3, -2.0], 1e-2, 5e-4), (2.0, [5.0, 5.0], 1e-3, 0.0)]:
        state = optim.AdamWState(lr=lr, weight_decay=wd)
        params = {"p.weight": np.array([theta0])}
        for g in grads:
            optim.step(state, params, {"p.weight": np.array([g])})
        worst = max(worst, abs(float(params["p.weight"][0]) - reference_adamw(theta0, grads, lr, wd)))
    verdict(5, worst <= 1e-12, f"two-step scalar AdamW vs reference: max |diff| = {worst:.1e} (<=1e-12)")


# ---------------------------------------------------------------- 6. overfit oracle


def test_criterion_6_overfit(verdict):
    c = generate(PhantomSpec(shape=(32, 32, 32), seed=0))
    case = CaseData("single", c.volume, c.mask)
    results = {}
    for variant in TRAINABLE:
        cfg = ExperimentConfig.desk(variant=variant, steps=500)
        start = time.perf_counter()
        model = ildist.fit_from_pairs([(case.volume, case.mask)], cfg.diffusion)
        res = train_variant(cfg, [case], model)
        pred = binarize(predict(res.net, case.volume, cfg, model), cfg.threshold)
        results[variant] = (metrics.dice(pred, case.mask), time.perf_counter() - start)
    ok = all(d > 0.9 and t < 600 for d, t in results.values())
    detail = ", ".join(f"{v} Dice {d:.3f} ({t:.0f}s)" for v, (d, t) in results.items())
    verdict(6, ok, f"500 steps on one 32^3 phantom: {detail}")


# ---------------------------------------------------------------- 7. metrics oracles


def test_criterion_7_metrics_oracles(verdict):
    rng = np.random.default_rng(7)
    cc_ok = True
    for _ in range(100):
        mask = rng.random((16, 16, 16)) < rng.uniform(0.02, 0.12)
        got = [sorted(map(tuple, i.voxels.tolist())) for i in metrics.extract_instances(mask)]
        cc_ok &= got == flood_fill_components(mask)

    cases = [tuple(rng.random((2, 12, 12, 12)) < 0.08) for _ in range(6)]
    tp = sum(int((p & g).sum()) for p, g in cases)
    size = sum(int(p.sum() + g.sum()) for p, g in cases)
    err = abs(metrics.global_dice(cases) - 2 * tp / size)
    direct = [2 * (p & g).sum() / (p.sum() + g.sum()) for p, g in cases]
    err = max(err, abs(metrics.per_case_dice(cases)[0] - float(np.mean(direct))))
    for p, g in cases:
        insts = metrics.extract_instances(g)
        for inst, value in zip(insts, metrics.per_tumor_dice(insts, p, 2)[2]):
            lo = np.maximum(np.array(inst.bbox[0]) - 2, 0)
            hi = np.minimum(np.array(inst.bbox[1]) + 2, 12)
            box = tuple(slice(a, b) for a, b in zip(lo, hi))
            own = np.zeros_like(g)
            own[tuple(inst.voxels.T)] = True
            pb = p[box] & ~(g[box] & ~own[box])
            err = max(err, abs(value - 2 * (pb & own[box]).sum() / (pb.sum() + own[box].sum())))

    vol = np.zeros((10, 10, 10), dtype=bool)
    vol[0:5, 0:5, 0:5] = True
    at = metrics.extract_instances(vol, spacing=(1.0, 1.0, 1.0))
    below = metrics.extract_instances(vol, spacing=(1.0, 1.0, 124 / 125))
    boundary = len(metrics.size_filter(at, 125)) == 1 and len(metrics.size_filter(below, 125)) == 0

    a, b = rng.random(8), rng.random(8)
    t, p = metrics.paired_t_test(a, b)
    t_ref, p_ref = t_test_quadrature(a, b)
    p_err = abs(p - p_ref)
    ok = cc_ok and err <= 1e-9 and boundary and p_err <= 1e-6
    verdict(7, ok, f"flood fill match {cc_ok}, Dice max err {err:.1e}, 125 mm^3 boundary {boundary}, "
                   f"t-test |p - quadrature| {p_err:.1e}")


# ---------------------------------------------------------------- 8. directional study


def test_criterion_8_directional_study(verdict, tmp_path):
    generate_dataset(PhantomSpec(), 20, tmp_path / "data")
    start = time.perf_counter()
    lines, wins, exact = [], 0, True
    for seed in range(3):
        cases = load_cases(tmp_path / "data" / "manifest.json")
        cfg = ExperimentConfig.desk(seed=seed, steps=2000, folds=5)
        reports, outcomes, _ = cross_validate(cfg, cases, ["seg", "seg_pp", "seg_il"])
        means = {r.variant: float(np.mean(r.per_case)) for r in reports}
        wins += means["seg_il"] >= means["seg"] - 0.02
        by_case = {c.case_id: c for c in cases}
        seg = {(o.fold, cid): p for o in outcomes if o.variant == "seg" for cid, p in o.probabilities.items()}
        for o in outcomes:
            if o.variant != "seg_pp":
                continue
            for cid, prob in o.probabilities.items():
                y_il = ildist.likelihood_volume(by_case[cid].volume, o.model, cfg.diffusion).data
                exact &= bool(np.array_equal(prob.data, seg[(o.fold, cid)].data * y_il))
        lines.append(f"seed {seed}: seg {means['seg']:.3f} seg_pp {means['seg_pp']:.3f} seg_il {means['seg_il']:.3f}")
    hours = (time.perf_counter() - start) / 3600
    ok = wins >= 2 and exact and hours < 4
    verdict(8, ok, f"seg_il >= seg - 0.02 in {wins}/3 seeds; seg_pp == seg * Y_IL exact: {exact}; "
                   f"{hours:.2f} h; " + "; ".join(lines))


# ---------------------------------------------------------------- 9. reproducibility


def test_criterion_9_reproducibility(verdict, tmp_path):
    (tmp_path / "spec.json").write_text(json.dumps({"shape": [32, 32, 32]}))
    assert cli.main(["gen-phantoms", "--out", str(tmp_path / "data"), "--spec", str(tmp_path / "spec.json"),
                     "--n", "6"]) == 0
    (tmp_path / "cfg.json").write_text(json.dumps({"steps": 20, "folds": 3}))
    csvs = []
    for name in ("a", "b"):
        out = tmp_path / name
        code = cli.main(["compare", "--out", str(out), "--data", str(tmp_path / "data"), "--config",
                         str(tmp_path / "cfg.json"), "--preset", "desk"])
        assert code == 0
        csvs.append({f: (out / f).read_bytes() for f in ("metrics.csv", "per_case.csv", "per_tumor.csv")})
    same_csv = csvs[0] == csvs[1]

    rng = np.random.default_rng(9)
    grids = [Volume(rng.normal(size=(5, 6, 7)), (0.7, 1.0, 2.5)), MaskVolume(rng.random((4, 4, 4)) > 0.5),
             SoftVolume(rng.random((3, 5, 2)))]
    svol_ok = True
    for i, g in enumerate(grids):
        write_svol(g, tmp_path / f"g{i}.svol")
        back = read_svol(tmp_path / f"g{i}.svol")
        svol_ok &= type(back) is type(g) and back.data.tobytes() == g.data.tobytes() and back.spacing_mm == g.spacing_mm

    net = init_parameters(UNetConfig(1, 2, (4, 8, 16, 32)), 3)
    state = optim.AdamWState()
    optim.step(state, net.params, {k: np.full_like(v, 0.01) for k, v in net.params.items()})
    save_checkpoint(tmp_path / "a.snet", net, state, {"k": 1})
    net2, state2, extra = load_checkpoint(tmp_path / "a.snet")
    save_checkpoint(tmp_path / "b.snet", net2, state2, extra)
    ckpt_ok = (tmp_path / "a.snet").read_bytes() == (tmp_path / "b.snet").read_bytes()
    ckpt_ok &= all(net.params[k].tobytes() == net2.params[k].tobytes() for k in net.params)
    ok = same_csv and svol_ok and ckpt_ok
    verdict(9, ok, f"compare twice byte-identical CSVs {same_csv}; SVOL round trip {svol_ok}; "
                   f"checkpoint round trip {ckpt_ok}")
