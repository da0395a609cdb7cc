"""Behavioral contracts of the trained stages, measured on held-out synthetic data."""
from __future__ import annotations

import numpy as np
import torch

from ..engine import Label, SelfieCorruption, synth_selfie
from ..imitator import localization_ratio, sweep_statistics
from ..losses import to_tensor
from .pipeline import _float_images


def _l1(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.abs(a - b).reshape(len(a), -1).mean(axis=1)


def stylizer_normalization(system, n: int | None = None) -> dict:
    """Share of corrupted held-out selfies whose decoded image is closer (mean L1) to the clean render."""
    ev = system.eval
    n = min(n or len(ev), len(ev))
    clean = _float_images(ev.renders[:n])
    selfies = _float_images(ev.selfies[:n])
    _, decoded = system.stylizer.stylize_many(ev.selfies[:n])
    d_dec, d_raw = _l1(decoded, clean), _l1(selfies, clean)
    return {"n": n, "rate": float(np.mean(d_dec < d_raw)), "decoded_l1": float(d_dec.mean()),
            "selfie_l1": float(d_raw.mean())}


def _iou(a: np.ndarray, b: np.ndarray) -> float:
    union = np.logical_or(a, b).sum()
    return float(np.logical_and(a, b).sum() / union) if union else 1.0


def glasses_preservation(system, n: int | None = None, min_iou: float = 0.5) -> dict:
    """Glasses-wearing held-out selfies whose decoded glasses mask overlaps the clean one (IoU >= ``min_iou``).

    Masks on decoded images come from the loss kit's segmentation network; the
    same network applied to the clean renders is reported as the instrument's
    own ceiling.
    """
    ev = system.eval
    n = min(n or len(ev), len(ev))
    g = system.schema.discrete_index("glasses_type")
    idx = [i for i in range(n) if ev.indices[i, g] != 0]
    if not idx:
        return {"n": 0, "rate": float("nan")}
    _, decoded = system.stylizer.stylize_many(ev.selfies[idx])
    truth = ev.segs[idx] == int(Label.GLASSES)
    with torch.no_grad():
        dec_lab = system.kit.segment(to_tensor(decoded)).argmax(1).numpy() == int(Label.GLASSES)
        ref_lab = system.kit.segment(to_tensor(ev.renders[idx])).argmax(1).numpy() == int(Label.GLASSES)
    dec_iou = np.array([_iou(p, t) for p, t in zip(dec_lab, truth)])
    ref_iou = np.array([_iou(p, t) for p, t in zip(ref_lab, truth)])
    return {"n": len(idx), "rate": float(np.mean(dec_iou >= min_iou)), "mean_iou": float(dec_iou.mean()),
            "instrument_rate": float(np.mean(ref_iou >= min_iou)), "min_iou": min_iou}


def latent_triplets(system, n: int = 500, seed: int = 0) -> dict:
    """Same avatar under two corruptions vs. a different avatar: share where the pair is closer in L2."""
    rng = np.random.default_rng(seed)
    ev = system.eval
    m = len(ev)
    a_imgs, b_imgs, c_imgs = [], [], []
    for t in range(n):
        i, j = rng.integers(m), rng.integers(m)
        while j == i:
            j = rng.integers(m)
        v, w = ev.vector(i), ev.vector(j)
        a_imgs.append(synth_selfie(system.engine, v, SelfieCorruption.sample(rng))[0])
        b_imgs.append(synth_selfie(system.engine, v, SelfieCorruption.sample(rng))[0])
        c_imgs.append(synth_selfie(system.engine, w, SelfieCorruption.sample(rng))[0])
    enc = system.stylizer.encode_many
    la, lb, lc = (enc(np.stack(x)).reshape(n, -1) for x in (a_imgs, b_imgs, c_imgs))
    same = np.linalg.norm(la - lb, axis=1)
    diff = np.linalg.norm(la - lc, axis=1)
    return {"n": n, "rate": float(np.mean(same < diff))}


def interpolation_sweeps(system, n_pairs: int = 100, steps: int = 11, seed: int = 0) -> dict:
    """Imitator sweeps between random strict pairs: spike ratio, monotonicity and endpoint identity."""
    imitator, schema = system.imitator, system.schema
    ratios, monotone, endpoints, lipschitz = [], [], [], []
    for k in range(n_pairs):
        v1, v2 = schema.random_strict([seed, k, 1]), schema.random_strict([seed, k, 2])
        frames = imitator.interpolation_sweep(v1, v2, steps)
        s = sweep_statistics(frames)
        ratios.append(s["max_over_mean"])
        monotone.append(s["monotone_from_start"])
        lipschitz.append(s["lipschitz"])
        endpoints.append(np.array_equal(frames[0], imitator.imitate(v1))
                         and np.array_equal(frames[-1], imitator.imitate(v2)))
    ratios = np.array(ratios)
    return {"n_pairs": n_pairs, "steps": steps, "max_spike_ratio": float(ratios.max()),
            "no_spike_rate": float(np.mean(ratios <= 3.0)), "monotone_rate": float(np.mean(monotone)),
            "endpoints_exact": bool(all(endpoints)), "lipschitz_max": float(np.max(lipschitz))}


def imitator_localization(system, n_vectors: int = 60, seed: int = 0) -> dict:
    """Share of single-attribute toggles whose imitator change concentrates where the engine image changes."""
    schema = system.schema
    rng = np.random.default_rng(seed)
    ratios = []
    for k in range(n_vectors):
        v = schema.random_strict([seed, 7, k])
        for a, n in enumerate(schema.cardinalities):
            other = int((v.discrete[a] + rng.integers(1, n)) % n)
            r = localization_ratio(system.imitator, system.engine, v, a, other)
            if r is not None:
                ratios.append(r)
    ratios = np.array(ratios)
    return {"n_toggles": len(ratios), "rate": float(np.mean(ratios > 1.0))}


def imitator_fidelity(system) -> float:
    """Mean absolute pixel error on the held-out validation tail of the training corpus."""
    from ..imitator import held_out_l1

    _, val = system.fit_split()
    return held_out_l1(system.imitator, val.vectors(), val.renders)
