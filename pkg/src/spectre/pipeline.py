"""Run orchestration shared by the CLI and the acceptance suite."""
from __future__ import annotations

from dataclasses import replace

import numpy as np

from .errors import ConfigError
from .nn import ModelConfig
from .signal import PreprocessConfig, SynthConfig, preprocess, stack_segments, synthesize_dataset
from .spectral import SpectralCodebook, StftConfig, fit_codebook
from .train import OptimConfig, RunReport, finetune_loop, pretrain_loop

TARGET_KIND = {"stft_clusters": "stft", "raw_clusters": "raw"}


def synthetic_split(synth: SynthConfig, prep: PreprocessConfig, test_segments: int = 0):
    """Synthesize one recording, preprocess it and split off the last windows.

    Scaling statistics come from the training windows only.
    """
    n_train = synth.segments
    segs = synthesize_dataset(replace(synth, segments=n_train + test_segments))
    segs = preprocess(segs, prep, n_fit=n_train)
    return segs[:n_train], segs[n_train:]


def arrays(segments):
    x, y = stack_segments(segments)
    return x.astype(np.float32), None if y is None else y.astype(np.float32)


def codebook_for(target: str, x: np.ndarray, k: int, seed: int, patch_len: int,
                 stft_cfg: StftConfig = StftConfig()) -> SpectralCodebook:
    if target not in TARGET_KIND:
        raise ConfigError(f"pretrain_target {target!r} has no codebook")
    return fit_codebook(x, k, seed, patch_len, TARGET_KIND[target], stft_cfg)


def check_codebook(cb: SpectralCodebook, target: str, cfg: ModelConfig):
    if target not in TARGET_KIND:
        raise ConfigError(f"pretrain_target {target!r} does not use a codebook")
    if cb.feature_kind != TARGET_KIND[target]:
        raise ConfigError(f"codebook holds {cb.feature_kind!r} clusters, pretrain_target is {target!r}")
    if cb.k != cfg.k:
        raise ConfigError(f"codebook has K={cb.k}, model expects k={cfg.k}")
    if cb.patch_len != cfg.patch_len:
        raise ConfigError(f"codebook patch_len {cb.patch_len} != model patch_len {cfg.patch_len}")


def run_cell(cfg: ModelConfig, target: str, seed: int, train, test,
             pre_opt: OptimConfig, ft_opt: OptimConfig, codebook: SpectralCodebook | None = None,
             log=None, log_every: int = 0):
    """Pre-train (unless ``target == 'none'``) then fine-tune one ablation cell.

    All three seeds equal ``seed``. Returns (model, pretrain report or None, finetune report).
    """
    seeds = {"data": seed, "model": seed, "mask": seed}
    x_tr, y_tr = train
    model, pre_rep = None, None
    if target != "none":
        cb = codebook if codebook is not None else codebook_for(target, x_tr, cfg.k, seed, cfg.patch_len)
        check_codebook(cb, target, cfg)
        model, pre_rep = pretrain_loop(cfg, pre_opt, x_tr, cb.labels_for(x_tr), seeds, target,
                                       log=log, log_every=log_every)
    model, ft_rep = finetune_loop(cfg, ft_opt, x_tr, y_tr, seeds, model=model, eval_data=test,
                                  pretrain_target=target, log=log, log_every=log_every)
    return model, pre_rep, ft_rep


def run_ablation(cfg: ModelConfig, train, test, pre_opt: OptimConfig, ft_opt: OptimConfig,
                 seeds=(0, 1, 2), pe_types=("cyrope", "absolute"),
                 targets=("stft_clusters", "raw_clusters", "none"), log=None, log_every: int = 0):
    """Run every (pe_type, target) cell for every seed with shared seeds.

    Codebooks depend only on (target, seed), so cells that differ only in
    ``pe_type`` reuse the same pseudo-labels.
    """
    reports = []
    for seed in seeds:
        books = {t: codebook_for(t, train[0], cfg.k, seed, cfg.patch_len) for t in targets if t != "none"}
        for pe in pe_types:
            for target in targets:
                if log:
                    log(f"cell pe={pe} target={target} seed={seed}")
                _, pre, ft = run_cell(replace(cfg, pe_type=pe), target, seed, train, test,
                                      pre_opt, ft_opt, books.get(target), log, log_every)
                reports.append((pe, target, seed, pre, ft))
    return reports


def _cell_stats(values):
    v = np.asarray(values, dtype=np.float64)
    return {"mean": float(v.mean()), "std": float(v.std(ddof=1)) if len(v) > 1 else 0.0,
            "per_seed": [float(a) for a in v]}


def ablation_table(reports) -> dict:
    """Comparison table (rows: pe_type x pretrain target) and ordering checks.

    A claim ``a > b`` holds when mean(a) - mean(b) exceeds the larger of the
    two cells' across-seed standard deviations.
    """
    cells = {}
    for pe, target, seed, _pre, ft in reports:
        cell = cells.setdefault((pe, target), {"seeds": [], "r2": [], "mse": [], "mae": []})
        m = ft.metrics["test"] if "test" in ft.metrics else ft.metrics["train"]
        cell["seeds"].append(seed)
        for key in ("r2", "mse", "mae"):
            cell[key].append(m[key])
    rows = []
    for (pe, target), c in cells.items():
        rows.append({"pe_type": pe, "pretrain_target": target, "seeds": c["seeds"],
                     "r2": _cell_stats(c["r2"]), "mse": _cell_stats(c["mse"]),
                     "mae": _cell_stats(c["mae"])})
    by_key = {(r["pe_type"], r["pretrain_target"]): r for r in rows}

    def claim(a, b):
        if a not in by_key or b not in by_key:
            return None
        ra, rb = by_key[a]["r2"], by_key[b]["r2"]
        margin = ra["mean"] - rb["mean"]
        bar = max(ra["std"], rb["std"])
        return {"better": f"{a[0]}+{a[1]}", "worse": f"{b[0]}+{b[1]}", "margin": margin,
                "required": bar, "holds": bool(margin > bar)}

    orderings = [c for c in (
        claim(("cyrope", "stft_clusters"), ("cyrope", "none")),
        claim(("cyrope", "stft_clusters"), ("absolute", "stft_clusters")),
    ) if c is not None]
    seed_sets = {tuple(r["seeds"]) for r in rows}
    return {
        "metric": "test R^2 (mean over defined DoFs), mean and sample std across seeds",
        "rows": rows,
        "orderings": orderings,
        "ordering_holds": all(o["holds"] for o in orderings) if orderings else None,
        "seeds_shared": len(seed_sets) == 1,
    }


def reports_of(reports) -> list[RunReport]:
    out = []
    for *_, pre, ft in reports:
        if pre is not None:
            out.append(pre)
        out.append(ft)
    return out
