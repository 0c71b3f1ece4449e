"""Ablation and baseline-comparison drivers.

Each driver composes cached pipeline stages, so sweeps that share a dataset
or a student reuse the artifact instead of recomputing it, and emits a CSV
table plus SVG plots under reports/.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from ..datagen import SamplingStrategy
from ..envs import PendulumConfig, Perturbation, id_cells
from ..eval import eval_perturbation, eval_perturbation_ood, fpc, mode_histogram
from ..policy import cvae_infer, load_expert, load_policy
from . import svg
from .config import ExperimentConfig
from .pipeline import (
    MissingArtifact,
    Pipeline,
    pend_cfg_from,
    stage_collect,
    stage_experts,
    stage_student,
    student_cfg_from,
)


def worker_cap() -> int:
    try:
        return max(1, int(os.environ.get("PDP_THREADS", "1")))
    except ValueError:
        return 1


def _map_ordered(fn, items):
    cap = worker_cap()
    if cap <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=cap) as pool:
        return list(pool.map(fn, items))


def _id_eval(pipe: Pipeline, bundle, label: str) -> dict:
    from ..eval import id_kick_batch

    cfg = pipe.cfg
    env_cfg = pend_cfg_from(cfg)
    kicks = id_kick_batch(env_cfg, cfg["eval.n_episodes"], cfg["eval.seed"])
    res = eval_perturbation(bundle, env_cfg, kicks, seed=cfg["eval.seed"], exec_steps=cfg["eval.exec_steps"])
    return {"label": label, "success_id": res["success_rate"], "histogram": res["histogram"],
            "signatures": res["signatures"]}


def _expert_id_signatures(pipe: Pipeline) -> np.ndarray:
    """Ground-truth recovery signatures: each cell expert on its own ID kicks."""
    cfg = pipe.cfg
    env_cfg = pend_cfg_from(cfg)
    pts = []
    per = max(1, cfg["eval.n_episodes"] // 4)
    for i, cell in enumerate(id_cells(env_cfg)):
        path = pipe.out / f"experts/cell{i}.pdpw"
        if not path.exists():
            raise MissingArtifact(f"missing expert checkpoint {path}")
        expert = load_expert(path)
        res = eval_perturbation(expert, env_cfg, [cell] * per, seed=cfg["eval.seed"] + 7 + i)
        pts.extend([s.point for s in res["signatures"] if s is not None])
    return np.asarray(pts)


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(repr(v) if isinstance(v, float) else str(v) for v in row) + "\n")


# ---------------------------------------------------------------------------
# strategy ablation (three sampling strategies x seeds)
# ---------------------------------------------------------------------------


def ablate_strategy(cfg: ExperimentConfig, out_dir) -> dict:
    pipe = Pipeline(cfg, out_dir)
    stage_experts(pipe)
    scfg = student_cfg_from(cfg)
    results = {}
    for kind in ("CleanClean", "NoisyNoisy", "NoisyClean"):
        strategy = SamplingStrategy(kind, cfg["collect.noise_level"])
        ds_rel = stage_collect(pipe, strategy)
        per_seed = []
        for seed in cfg["seeds"]:
            rel = stage_student(pipe, ds_rel, scfg, int(seed), tag=f"student[{kind},h{scfg.horizon},{seed}]")
            bundle = load_policy(pipe.out / rel)
            per_seed.append(_id_eval(pipe, bundle, f"{kind}_seed{seed}"))
        results[kind] = per_seed
    rows = []
    for kind, per_seed in results.items():
        state, action = {"CleanClean": ("Clean", "Clean"), "NoisyNoisy": ("Noisy", "Noisy"),
                         "NoisyClean": ("Noisy", "Clean")}[kind]
        succ = [r["success_id"] for r in per_seed]
        rows.append([state, action, float(np.mean(succ)), float(np.min(succ)), float(np.max(succ)), len(succ)])
    _write_csv(pipe.out / "reports/strategy_ablation.csv",
               ["state", "action", "success_id_mean", "success_id_min", "success_id_max", "n_seeds"], rows)
    svg.line_plot(
        pipe.out / "reports/strategy_ablation.svg",
        {"ID success": (list(range(len(rows))), [r[2] for r in rows])},
        "Sampling-strategy ablation (0=CC, 1=NN, 2=NC)", "strategy", "ID success",
    )
    summary = {kind: float(np.mean([r["success_id"] for r in per_seed])) for kind, per_seed in results.items()}
    (pipe.out / "reports/strategy_ablation.json").write_text(json.dumps(summary, sort_keys=True, indent=1) + "\n")
    return {"per_seed": results, "summary": summary}


# ---------------------------------------------------------------------------
# noise / horizon ablation (Table-4-style two blocks)
# ---------------------------------------------------------------------------


def ablate_noise_horizon(cfg: ExperimentConfig, out_dir) -> dict:
    pipe = Pipeline(cfg, out_dir)
    stage_experts(pipe)
    gt_points = _expert_id_signatures(pipe)
    seed = int(cfg["seeds"][0])
    rows = []
    cache = {}

    def run_cell(sigma: float, horizon: int) -> dict:
        key = (round(float(sigma), 6), int(horizon))
        if key in cache:
            return cache[key]
        kind = "CleanClean" if sigma == 0.0 else "NoisyClean"
        strategy = SamplingStrategy(kind, float(sigma))
        ds_rel = stage_collect(pipe, strategy)
        scfg = student_cfg_from(cfg, horizon=int(horizon))
        rel = stage_student(pipe, ds_rel, scfg, seed, tag=f"student[{kind}{sigma},h{horizon},{seed}]")
        bundle = load_policy(pipe.out / rel)
        idr = _id_eval(pipe, bundle, f"s{sigma}_h{horizon}")
        env_cfg = pend_cfg_from(cfg)
        ood = eval_perturbation_ood(bundle, env_cfg, cfg["eval.n_episodes"], cfg["eval.seed"] + 1,
                                    exec_steps=cfg["eval.exec_steps"])
        pts = np.asarray([s.point for s in idr["signatures"] if s is not None]).reshape(-1, 2)
        out = {
            "noise": float(sigma), "horizon": int(horizon),
            "success_id": idr["success_id"], "success_ood": ood["success_rate"],
            "fpc": fpc(pts, gt_points),
        }
        cache[key] = out
        return out

    noise_h = int(cfg["ablate.noise_horizon"])
    for sigma in cfg["ablate.noise_levels"]:
        rows.append(run_cell(sigma, noise_h))
    for horizon in cfg["ablate.horizons"]:
        rows.append(run_cell(cfg["collect.noise_level"], int(horizon)))
    _write_csv(
        pipe.out / "reports/noise_horizon.csv",
        ["noise", "horizon", "success_id", "success_ood", "fpc"],
        [[r["noise"], r["horizon"], r["success_id"], r["success_ood"], r["fpc"]] for r in rows],
    )
    n_noise = len(cfg["ablate.noise_levels"])
    svg.line_plot(
        pipe.out / "reports/noise_sweep.svg",
        {
            "ID": ([r["noise"] for r in rows[:n_noise]], [r["success_id"] for r in rows[:n_noise]]),
            "OOD": ([r["noise"] for r in rows[:n_noise]], [r["success_ood"] for r in rows[:n_noise]]),
        },
        f"Noise-level sweep (horizon {noise_h})", "noise level", "success",
    )
    svg.line_plot(
        pipe.out / "reports/horizon_sweep.svg",
        {
            "ID": ([r["horizon"] for r in rows[n_noise:]], [r["success_id"] for r in rows[n_noise:]]),
            "OOD": ([r["horizon"] for r in rows[n_noise:]], [r["success_ood"] for r in rows[n_noise:]]),
        },
        f"Horizon sweep (noise {cfg['collect.noise_level']})", "action horizon", "success",
    )
    (pipe.out / "reports/noise_horizon.json").write_text(json.dumps(rows, sort_keys=True, indent=1) + "\n")
    return {"rows": rows}


# ---------------------------------------------------------------------------
# baselines and multimodality protocol
# ---------------------------------------------------------------------------


def mirrored_large_kicks(env_cfg: PendulumConfig, magnitude: float, n: int) -> list[Perturbation]:
    """Mirror-symmetric large perturbations at the canonical onset."""
    return [
        Perturbation(env_cfg.id_onset_time, magnitude, 1 if i % 2 == 0 else -1, env_cfg.kick_steps)
        for i in range(n)
    ]


def multimodal_ground_truth(pipe: Pipeline, kicks: list[Perturbation]) -> np.ndarray:
    """Expert responses to the large kicks: the matching-direction high-magnitude
    cell expert drives each episode."""
    cfg = pipe.cfg
    env_cfg = pend_cfg_from(cfg)
    cells = id_cells(env_cfg)
    high = {c.direction: i for i, c in enumerate(cells) if c.magnitude == env_cfg.id_magnitudes[1]}
    pts = []
    for direction in (-1, 1):
        sub = [k for k in kicks if k.direction == direction]
        if not sub:
            continue
        expert = load_expert(pipe.out / f"experts/cell{high[direction]}.pdpw")
        res = eval_perturbation(expert, env_cfg, sub, seed=cfg["eval.seed"] + 31 + direction)
        pts.extend([s.point for s in res["signatures"] if s is not None])
    return np.asarray(pts).reshape(-1, 2)


def latent_traversal_variance(bundle, obs_windows: np.ndarray, span: float = 2.0, n: int = 64) -> float:
    """Spread of decoded actions across prior latent draws, averaged over a
    batch of conditioning windows."""
    from ..numerics import Rng

    zs = Rng(17).normal((n, bundle.config.cvae_latent)) * (span / 2.0)
    outs = []
    for i in range(min(16, obs_windows.shape[0])):
        obs = np.tile(bundle.normalize_obs(obs_windows[i : i + 1]), (n, 1, 1))
        outs.append(cvae_infer(bundle.net, obs, z=zs).reshape(n, -1))
    return float(np.var(np.stack(outs), axis=1).mean())


def run_baselines(cfg: ExperimentConfig, out_dir) -> dict:
    """Diffusion vs MLP vs C-VAE(beta sweep) on the mirrored-large-kick
    multimodality protocol, plus the recovery-signature scatter."""
    pipe = Pipeline(cfg, out_dir)
    stage_experts(pipe)
    env_cfg = pend_cfg_from(cfg)
    strategy = SamplingStrategy(cfg["collect.strategy"], cfg["collect.noise_level"])
    ds_rel = stage_collect(pipe, strategy)
    seed = int(cfg["seeds"][0])
    kicks = mirrored_large_kicks(env_cfg, cfg["eval.mm_magnitude"], cfg["eval.mm_rollouts"])
    gt_points = multimodal_ground_truth(pipe, kicks)

    policies = [("diffusion", None, student_cfg_from(cfg, kind="diffusion")),
                ("mlp", None, student_cfg_from(cfg, kind="mlp"))]
    for beta in cfg["ablate.cvae_betas"]:
        policies.append((f"cvae", float(beta), student_cfg_from(cfg, kind="cvae", cvae_beta=float(beta))))

    rows = []
    scatter_groups = {"ground truth": gt_points}
    traversals = {}
    from ..datagen import Dataset

    ds = Dataset.load(pipe.out / ds_rel)
    probe_idx = ds.valid_window_indices(cfg["student.obs_history"], 1)
    probe_obs, _, _ = ds.window_batch(probe_idx[:: max(1, probe_idx.size // 16)][:16],
                                      cfg["student.obs_history"], 1)

    for name, beta, scfg in policies:
        tag = f"student[{name}{'' if beta is None else beta},h{scfg.horizon},{seed}]"
        rel = stage_student(pipe, ds_rel, scfg, seed, tag=tag)
        bundle = load_policy(pipe.out / rel)
        res = eval_perturbation(bundle, env_cfg, kicks, seed=cfg["eval.seed"] + 5,
                                exec_steps=cfg["eval.exec_steps"])
        pts = np.asarray([s.point for s in res["signatures"] if s is not None]).reshape(-1, 2)
        hist = res["histogram"]
        label = name if beta is None else f"{name}(beta={beta})"
        row = {
            "method": name, "beta": float("nan") if beta is None else beta,
            "success_rate": res["success_rate"],
            "cw": hist["cw"], "ccw": hist["ccw"], "direct": hist["direct"], "failed": hist["failed"],
            "fpc": fpc(pts, gt_points),
            "traversal_var": float("nan"),
        }
        if name == "cvae":
            row["traversal_var"] = latent_traversal_variance(bundle, probe_obs)
            traversals[beta] = row["traversal_var"]
        rows.append(row)
        scatter_groups[label] = pts
    _write_csv(
        pipe.out / "reports/baselines.csv",
        ["method", "beta", "success_rate", "cw", "ccw", "direct", "failed", "fpc", "traversal_var"],
        [[r["method"], r["beta"], r["success_rate"], r["cw"], r["ccw"], r["direct"], r["failed"],
          r["fpc"], r["traversal_var"]] for r in rows],
    )
    svg.scatter_plot(pipe.out / "reports/recovery_signatures.svg", scatter_groups,
                     "Recovery signatures after mirrored large kicks", "angle at band re-entry",
                     "angular velocity", markers={"ground truth": "x"})
    if traversals:
        betas = sorted(traversals)
        svg.line_plot(pipe.out / "reports/cvae_beta_traversal.svg",
                      {"traversal variance": (betas, [traversals[b] for b in betas])},
                      "C-VAE latent-traversal output variance", "beta", "variance")
    (pipe.out / "reports/baselines.json").write_text(
        json.dumps(rows, sort_keys=True, indent=1, default=float) + "\n")
    return {"rows": rows, "gt_points": gt_points}
