"""Acceptance criteria, each at its stated tolerance, on the ``acceptance`` preset.

The trained system comes from the artifact cache ($AVATARFIT_CACHE, default
~/.cache/avatarfit); a cold cache trains every stage first (about an hour on
one core). Every criterion records one PASS/FAIL line, printed in the pytest
terminal summary and written to ``acceptance_results.json`` in the workdir.

    pytest tests/test_acceptance.py -v
"""
from __future__ import annotations

import copy
import json
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest
import torch

from avatarfit.config import preset
from avatarfit.conversion import argmax_convert
from avatarfit.engine.render import N_LABELS
from avatarfit.evalharness import ablation, contracts, pipeline
from avatarfit.evalharness.system import ArtifactCache, Builder
from avatarfit.losses import (
    LossKit,
    adversarial_losses,
    hinge_terms,
    identity_loss,
    imitator_loss,
    mapper_loss,
    perceptual_loss,
    semantic_color_loss,
    SEMANTIC_CLASSES,
)
from avatarfit.mapper import scaled_softmax

from .conftest import ACCEPTANCE_LINES
from .oracles import central_difference, relative_error, scaled_softmax_reference

pytestmark = pytest.mark.acceptance

# another preset (e.g. "smoke") only exercises the harness; thresholds are for "acceptance"
PRESET = os.environ.get("AVATARFIT_ACCEPTANCE_PRESET", "acceptance")
WORKDIR = Path(os.environ.get("AVATARFIT_ACCEPTANCE_WORKDIR", "runs/acceptance"))
RESULTS: dict[str, dict] = {}

TITLES = {
    1: "round-trip recovery on clean selfies",
    2: "Frechet distance decreases across stages",
    3: "relaxed beats straight-through mapper training",
    4: "search conversion dominates argmax",
    5: "interpolation sweeps are spike-free",
    6: "finite-difference gradient checks",
    7: "loss formulas vs brute force",
    8: "stylizer normalization contract",
    9: "determinism",
}


def record(number: int, passed: bool, detail: dict) -> None:
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {TITLES[number]} | " + ", ".join(
        f"{k}={_fmt(v)}" for k, v in detail.items())
    ACCEPTANCE_LINES[number] = line
    RESULTS[str(number)] = {"passed": bool(passed), "title": TITLES[number], **_plain(detail)}
    WORKDIR.mkdir(parents=True, exist_ok=True)
    (WORKDIR / "acceptance_results.json").write_text(json.dumps(RESULTS, indent=1, sort_keys=True) + "\n")
    print(line)


def _fmt(v):
    return f"{v:.6g}" if isinstance(v, float) else str(v)


def _plain(d):
    if isinstance(d, dict):
        return {k: _plain(v) for k, v in d.items()}
    if isinstance(d, (list, tuple)):
        return [_plain(v) for v in d]
    if isinstance(d, (np.floating, np.integer, np.bool_)):
        return d.item()
    return d


# -- shared fixtures -----------------------------------------------------------------
@pytest.fixture(scope="module")
def built():
    cfg = preset(PRESET)
    builder = Builder(cfg, ArtifactCache(), WORKDIR)
    start = time.monotonic()
    system = builder.build()
    return builder, system, time.monotonic() - start


@pytest.fixture(scope="module")
def clean_report(built):
    _, system, _ = built
    start = time.monotonic()
    rep = pipeline.evaluate(system)
    seconds = time.monotonic() - start
    rep.save(WORKDIR / "eval_clean")
    return rep, seconds


@pytest.fixture(scope="module")
def corrupted_report(built):
    _, system, _ = built
    rep = pipeline.evaluate(system, corrupted=True)
    rep.save(WORKDIR / "eval_corrupted")
    return rep


# -- 1 -------------------------------------------------------------------------------
MIN_ACCURACY = 0.70
MAX_MAE = 0.08
MAX_EVAL_SECONDS = 30 * 60


def test_criterion_1_round_trip_recovery(clean_report):
    rep, seconds = clean_report
    agg = rep.aggregate
    acc, mae = agg["search"]["mean_accuracy"], agg["search"]["mean_mae"]
    chance = float(np.mean(list(agg["search"]["chance"].values())))
    ok = acc >= MIN_ACCURACY and mae <= MAX_MAE and seconds <= MAX_EVAL_SECONDS and agg["search"]["n"] == 500
    record(1, ok, {"n": agg["search"]["n"], "accuracy": acc, "argmax_accuracy": agg["argmax"]["mean_accuracy"],
                   "chance": chance, "mae": mae, "eval_seconds": seconds,
                   "per_attribute": agg["search"]["accuracy"]})
    assert agg["search"]["n"] == 500
    assert acc >= MIN_ACCURACY, f"discrete recovery {acc:.4f} < {MIN_ACCURACY}"
    assert mae <= MAX_MAE, f"continuous MAE {mae:.4f} > {MAX_MAE}"
    assert seconds <= MAX_EVAL_SECONDS


# -- 2 -------------------------------------------------------------------------------
def test_criterion_2_frechet_trend(corrupted_report):
    fd = corrupted_report.aggregate["frechet"]
    values = [fd[s] for s in pipeline.STAGES]
    ok = all(a > b for a, b in zip(values, values[1:]))
    record(2, ok, dict(zip(pipeline.STAGES, values)))
    assert ok, f"not strictly decreasing: {values}"


# -- 3 -------------------------------------------------------------------------------
def test_criterion_3_relaxation_beats_straight_through(built):
    builder, system, _ = built
    rows = ablation.compare_relaxation(builder, system)
    ok = len(rows) == 3 and all(r["relaxed"] < r["straight_through"] for r in rows)
    record(3, ok, {f"seed{r['seed']}": f"{r['relaxed']:.6f}<{r['straight_through']:.6f}" for r in rows})
    assert len(rows) == 3
    for r in rows:
        assert r["relaxed"] < r["straight_through"], r


# -- 4 -------------------------------------------------------------------------------
def _dominance(rep) -> dict:
    obj = np.array([[e.losses["objective_search"], e.losses["objective_argmax"]] for e in rep.entries])
    return {
        "objective_rate": float(np.mean(obj[:, 0] <= obj[:, 1])),
        "per_attribute_rate": float(np.mean([ablation.per_attribute_dominance(e) for e in rep.entries])),
        "search_accuracy": rep.aggregate["search"]["mean_accuracy"],
        "argmax_accuracy": rep.aggregate["argmax"]["mean_accuracy"],
    }


def test_criterion_4_search_dominates_argmax(clean_report, corrupted_report):
    """Per-attribute objective dominance on every sample, and aggregate accuracy of search >= argmax.

    ``objective_rate`` (whole-vector objective after all attributes are
    committed) is reported but not asserted: with the relaxed-vector start the
    later attributes are searched around earlier commitments, so it is not
    guaranteed.
    """
    clean, corrupt = _dominance(clean_report[0]), _dominance(corrupted_report)
    ok = all(d["per_attribute_rate"] == 1.0 and d["search_accuracy"] >= d["argmax_accuracy"] for d in (clean, corrupt))
    record(4, ok, {**{f"clean_{k}": v for k, v in clean.items()}, **{f"corrupted_{k}": v for k, v in corrupt.items()}})
    for d in (clean, corrupt):
        assert d["per_attribute_rate"] == 1.0
        assert d["search_accuracy"] >= d["argmax_accuracy"]


# -- 5 -------------------------------------------------------------------------------
def test_criterion_5_interpolation(built):
    _, system, _ = built
    s = contracts.interpolation_sweeps(system, n_pairs=100, steps=11, seed=0)
    ok = s["no_spike_rate"] == 1.0 and s["endpoints_exact"]
    record(5, ok, s)
    assert s["endpoints_exact"]
    assert s["max_spike_ratio"] <= 3.0


# -- 6 -------------------------------------------------------------------------------
STANDALONE_TOL, COMPOSITE_TOL = 1e-4, 1e-3


def _fd_error(fn, x: np.ndarray, coords) -> float:
    t = torch.from_numpy(x.copy()).requires_grad_(True)
    (grad,) = torch.autograd.grad(fn(t), t)

    def scalar(arr):
        with torch.no_grad():
            return float(fn(torch.from_numpy(arr)))

    return relative_error(grad.numpy().ravel()[coords], central_difference(scalar, x, coords))


def _double_kit(kit: LossKit) -> LossKit:
    return LossKit(copy.deepcopy(kit.extractor), copy.deepcopy(kit.embedder), copy.deepcopy(kit.segnet)).to(
        torch.float64)


def test_criterion_6_gradient_checks(built):
    _, system, _ = built
    kit = _double_kit(system.kit)
    imitator = copy.deepcopy(system.imitator)
    imitator.model.to(torch.float64)
    ev = system.eval
    errors: dict[str, float] = {}
    for seed in (0, 1, 2):
        rng = np.random.default_rng(seed)
        a = ev.renders[rng.integers(len(ev), size=2)].astype(np.float64).transpose(0, 3, 1, 2) / 255.0
        b = ev.selfies[rng.integers(len(ev), size=2)].astype(np.float64).transpose(0, 3, 1, 2) / 255.0
        a = np.clip(a + rng.uniform(-0.01, 0.01, a.shape), 0.0, 1.0)
        tb = torch.from_numpy(b)
        sa = kit.segment(torch.from_numpy(a))
        sb = kit.segment(tb)
        pix = rng.choice(a.size, size=20, replace=False)
        standalone = {
            "semantic_color": lambda x: semantic_color_loss(x, sa, tb, sb).sum(),
            "perceptual": lambda x: perceptual_loss(kit.extractor, x, tb).sum(),
            "identity": lambda x: identity_loss(kit.embedder, x, tb).sum(),
            "imitator_loss": lambda x: imitator_loss(kit, x, tb).total.sum(),
        }
        for name, fn in standalone.items():
            errors[f"{name}/{seed}"] = _fd_error(fn, a, pix)
        scores = rng.choice([-1, 1], 16) * rng.uniform(0.2, 0.8, 16) + rng.choice([-2.0, 0.0, 2.0], 16)
        errors[f"hinge_disc/{seed}"] = _fd_error(lambda s: adversarial_losses(s[:8], s[8:])[1], scores, np.arange(16))
        errors[f"hinge_gen/{seed}"] = _fd_error(lambda s: adversarial_losses(s[:8], s[8:])[0], scores, np.arange(16))
        # composite: mapper_loss through the trained imitator, w.r.t. the relaxed vector
        rv = system.mapper.map_latent(system.stylizer.encode(ev.selfies[int(rng.integers(len(ev)))]))
        v = np.array(rv.flatten().values, dtype=np.float64)[None]
        target = torch.from_numpy(a[:1])
        with torch.no_grad():
            seg_img = kit.segment(imitator.forward(torch.from_numpy(v)))
        seg_t = sa[:1]
        coords = rng.choice(v.size, size=10, replace=False)
        errors[f"mapper_through_imitator/{seed}"] = _fd_error(
            lambda x: mapper_loss(kit, target, imitator.forward(x), seg_t, seg_img).total.sum(), v, coords)
        weights = torch.from_numpy(rng.normal(size=(1, 3, system.config.image_size, system.config.image_size)))
        errors[f"imitator/{seed}"] = _fd_error(lambda x: (imitator.forward(x) * weights).sum(), v, coords)
    composite = {k: e for k, e in errors.items() if k.split("/")[0] in ("mapper_through_imitator", "imitator")}
    standalone_err = {k: e for k, e in errors.items() if k not in composite}
    ok = max(standalone_err.values()) < STANDALONE_TOL and max(composite.values()) < COMPOSITE_TOL
    record(6, ok, {"max_standalone": max(standalone_err.values()), "max_composite": max(composite.values()),
                   "checks": len(errors)})
    for k, e in standalone_err.items():
        assert e < STANDALONE_TOL, (k, e)
    for k, e in composite.items():
        assert e < COMPOSITE_TOL, (k, e)


# -- 7 -------------------------------------------------------------------------------
def _brute_mean(img, lab, k):
    tot, cnt = [0.0, 0.0, 0.0], 0
    for y in range(img.shape[1]):
        for x in range(img.shape[2]):
            if lab[y][x] == k:
                for c in range(3):
                    tot[c] += float(img[c, y, x])
                cnt += 1
    return None if cnt == 0 else [t / cnt for t in tot]


def _brute_color(a, la, b, lb):
    s = 0.0
    for k in SEMANTIC_CLASSES:
        ca, cb = _brute_mean(a, la, k), _brute_mean(b, lb, k)
        if ca is not None and cb is not None:
            s += sum((p - q) ** 2 for p, q in zip(ca, cb))
    return s


def _brute_norm(v):
    return math.sqrt(math.fsum(float(t) ** 2 for t in v))


def test_criterion_7_loss_formulas(built):
    _, system, _ = built
    kit = _double_kit(system.kit)
    errs: dict[str, float] = {}
    rng = np.random.default_rng(0)
    size = system.config.image_size
    for trial in range(3):
        a, b = rng.random((2, 3, size, size)), rng.random((2, 3, size, size))
        la, lb = rng.integers(0, N_LABELS, (2, size, size)), rng.integers(0, N_LABELS, (2, size, size))
        ta, tb = torch.from_numpy(a), torch.from_numpy(b)
        # semantic terms between two generator outputs and the color term share one definition
        got = semantic_color_loss(ta, torch.from_numpy(la), tb, torch.from_numpy(lb)).numpy()
        want = [_brute_color(a[i], la[i], b[i], lb[i]) for i in range(2)]
        errs["semantic"] = max(errs.get("semantic", 0.0), float(np.max(np.abs(got - want))))
        # hinge objective
        real, fake = rng.normal(0, 2, 9), rng.normal(0, 2, 7)
        rt, ft = hinge_terms(torch.from_numpy(real), torch.from_numpy(fake))
        want_r = math.fsum(min(0.0, -1.0 + r) for r in real) / len(real)
        want_f = math.fsum(min(0.0, -1.0 - f) for f in fake) / len(fake)
        errs["hinge"] = max(errs.get("hinge", 0.0), abs(float(rt) - want_r), abs(float(ft) - want_f))
        # mapper objective: weighted sum with independently computed terms
        sa, sb = torch.from_numpy(la), torch.from_numpy(lb)
        out = mapper_loss(kit, ta, tb, sa, sb)
        with torch.no_grad():
            ea, eb = kit.embedder(ta).numpy(), kit.embedder(tb).numpy()
            fa, fb = kit.extractor(ta).numpy(), kit.extractor(tb).numpy()
        for i in range(2):
            ident = 1.0 - math.fsum(float(p) * float(q) for p, q in zip(ea[i], eb[i]))
            perc = _brute_norm(fa[i] - fb[i])
            color = want[i]
            errs["mapper"] = max(errs.get("mapper", 0.0), abs(float(out.total[i]) - (0.4 * ident + 0.8 * perc
                                                                                      + 0.8 * color)))
            l1 = math.fsum(abs(float(p) - float(q)) for p, q in zip(a[i].ravel(), b[i].ravel())) / a[i].size
            imi = imitator_loss(kit, ta, tb).total[i]
            errs["imitator"] = max(errs.get("imitator", 0.0), abs(float(imi) - (l1 + 0.8 * perc + 1.0 * ident)))
        # scaled softmax
        for _ in range(50):
            x, beta = rng.normal(0, 3, 8), float(rng.uniform(1, 25))
            errs["scaled_softmax"] = max(errs.get("scaled_softmax", 0.0),
                                         float(np.max(np.abs(scaled_softmax(x, beta) - scaled_softmax_reference(x, beta)))))
    ok = max(errs.values()) <= 1e-6
    record(7, ok, {f"max_abs_err_{k}": v for k, v in errs.items()})
    for k, e in errs.items():
        assert e <= 1e-6, (k, e)


# -- 8 -------------------------------------------------------------------------------
def test_criterion_8_stylizer_contract(built):
    _, system, _ = built
    norm = contracts.stylizer_normalization(system)
    glasses = contracts.glasses_preservation(system)
    ok = norm["rate"] >= 0.9 and glasses["rate"] >= 0.9
    record(8, ok, {"normalization_rate": norm["rate"], "decoded_l1": norm["decoded_l1"],
                   "selfie_l1": norm["selfie_l1"], "glasses_rate": glasses["rate"], "glasses_n": glasses["n"],
                   "glasses_mean_iou": glasses["mean_iou"], "segmenter_ceiling": glasses["instrument_rate"]})
    assert norm["rate"] >= 0.9
    assert glasses["rate"] >= 0.9


# -- 9 -------------------------------------------------------------------------------
def _rounded(x):
    if isinstance(x, dict):
        return {k: _rounded(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_rounded(v) for v in x]
    return round(x, 6) if isinstance(x, float) else x


def test_criterion_9_determinism(built, clean_report):
    builder, system, _ = built
    # evaluation: a second pass over the same 100 samples reproduces metrics and images
    first = pipeline.evaluate(system, n=100)
    second = pipeline.evaluate(system, n=100)
    eval_same = _rounded(first.aggregate) == _rounded(second.aggregate) and first.hash() == second.hash()
    prefix_same = all(a.strict == b.strict for a, b in zip(first.entries, clean_report[0].entries[:100]))
    # training: one acceptance-scale mapper retrained without the cache matches the cached run
    ab = system.config.ablation
    cfg = ablation._ablation_cfg(system, seed=ab.seeds[0])
    _, _, cached_val = builder.mapper(system, cfg, n_train=ab.n_train, tag="determinism_cached")
    fresh = Builder(system.config, ArtifactCache(enabled=False), None)
    fresh.keys = dict(builder.keys)
    _, _, fresh_val = fresh.mapper(system, cfg, n_train=ab.n_train)
    train_same = round(cached_val, 6) == round(fresh_val, 6)
    ok = eval_same and prefix_same and train_same
    record(9, ok, {"eval_identical": eval_same, "matches_full_eval": prefix_same,
                   "mapper_val_cached": cached_val, "mapper_val_retrained": fresh_val})
    assert eval_same and prefix_same
    assert train_same


def test_acceptance_argmax_baseline_is_recorded(clean_report):
    """Argmax-only conversion on the same samples, the baseline the recovery threshold is read against."""
    rep = clean_report[0]
    system_truth = [e.truth for e in rep.entries]
    arg = [argmax_convert(e.relaxed) for e in rep.entries]
    acc = np.mean([[p == t for p, t in zip(a.discrete, tr.discrete)] for a, tr in zip(arg, system_truth)])
    assert acc == pytest.approx(rep.aggregate["argmax"]["mean_accuracy"], abs=1e-12)
