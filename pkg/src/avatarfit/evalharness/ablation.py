"""Ablation runners: loss-term combinations and pipeline-stage removals."""
from __future__ import annotations

import logging
import time
from dataclasses import replace

import numpy as np

from ..config import weights_from_terms
from ..mapper import MapperTrainConfig
from .pipeline import _float_images, run_pipeline_batch, summarize

log = logging.getLogger(__name__)

# the six loss combinations compared by the user study being mirrored
LOSS_ARMS: tuple[tuple[str, tuple[str, ...]], ...] = (
    ("ID", ("id",)),
    ("LPIPS", ("lpips",)),
    ("ID+LPIPS", ("id", "lpips")),
    ("ID+Color", ("id", "color")),
    ("LPIPS+Color", ("lpips", "color")),
    ("ID+LPIPS+Color", ("id", "lpips", "color")),
)


def _ablation_cfg(system, **changes) -> MapperTrainConfig:
    ab = system.config.ablation
    base = replace(system.config.mapper.train, epochs=ab.epochs)
    return replace(base, **changes)


def _eval_with(system, mapper, n: int, use_stylizer: bool = True, corrupted: bool = False) -> dict:
    ev = system.eval
    n = min(n, len(ev))
    saved = system.mapper
    system.mapper = mapper
    try:
        selfies = ev.selfies[:n] if corrupted else ev.renders[:n]
        entries = run_pipeline_batch(system, selfies, [ev.vector(i) for i in range(n)], list(range(n)),
                                     use_stylizer=use_stylizer)
    finally:
        system.mapper = saved
    agg = summarize(entries, _float_images(ev.renders[:n]), system.kit.extractor)
    return {"entries": entries, "aggregate": agg}


def per_attribute_dominance(entry) -> bool:
    """In every first-pass candidate table, the committed asset scores no worse than the argmax asset."""
    return all(tab[int(np.argmin(tab))] <= tab[int(np.argmax(p))]
               for tab, p in zip(entry.conversion.tables[0], entry.relaxed.discrete))


def ablate_losses(builder, system, seed: int | None = None, max_seconds: float | None = None) -> list[dict]:
    """One mapper per loss combination at the ablation budget; recovery measured after search conversion."""
    ab = system.config.ablation
    seed = ab.seeds[0] if seed is None else seed
    rows = []
    start = time.monotonic()
    for name, terms in LOSS_ARMS:
        if max_seconds is not None and time.monotonic() - start > max_seconds:
            rows.append({"arm": name, "terms": list(terms), "completed": False})
            continue
        cfg = _ablation_cfg(system, weights=weights_from_terms(terms), seed=seed)
        mapper, _, val = builder.mapper(system, cfg, n_train=ab.n_train, tag=f"ablate_{name}")
        agg = _eval_with(system, mapper, ab.n_eval)["aggregate"]
        rows.append({
            "arm": name, "terms": list(terms), "completed": True, "seed": seed,
            "mean_accuracy": agg["search"]["mean_accuracy"], "mean_mae": agg["search"]["mean_mae"],
            "accuracy": agg["search"]["accuracy"], "final_val_loss": val,
        })
        log.info("loss ablation %s: acc %.4f", name, rows[-1]["mean_accuracy"])
    return rows


def compare_relaxation(builder, system, seeds=None) -> list[dict]:
    """Final validation mapper_loss of relaxed vs straight-through training, equal seed and budget."""
    ab = system.config.ablation
    rows = []
    for seed in (ab.seeds if seeds is None else seeds):
        row = {"seed": seed}
        for mode in ("relaxed", "straight_through"):
            _, _, val = builder.mapper(system, _ablation_cfg(system, mode=mode, seed=seed), n_train=ab.n_train,
                                       tag=f"mode_{mode}_{seed}")
            row[mode] = val
        rows.append(row)
    return rows


def ablate_pipeline(builder, system, full_entries=None) -> dict:
    """No-stylizer, relaxation-mode and conversion-mode arms."""
    ab = system.config.ablation
    seed = ab.seeds[0]
    full_mapper, _, _ = builder.mapper(system, _ablation_cfg(system, seed=seed), n_train=ab.n_train,
                                       tag="pipeline_full")
    raw_mapper, _, _ = builder.mapper(system, _ablation_cfg(system, seed=seed), n_train=ab.n_train,
                                      raw_targets=True, tag="pipeline_no_stylizer")
    full = _eval_with(system, full_mapper, ab.n_eval, corrupted=True)
    raw = _eval_with(system, raw_mapper, ab.n_eval, use_stylizer=False, corrupted=True)
    if full_entries is None:
        full_entries = full["entries"]
    dominance = [per_attribute_dominance(e) for e in full_entries]
    return {
        "stylizer": {"full": full["aggregate"]["search"], "no_stylizer": raw["aggregate"]["search"]},
        "relaxation": compare_relaxation(builder, system, seeds=(seed,)),
        "conversion": {
            "search": summarize(full_entries, None, None).get("search"),
            "argmax": summarize(full_entries, None, None).get("argmax"),
            "per_attribute_dominance_rate": float(np.mean(dominance)),
        },
    }
