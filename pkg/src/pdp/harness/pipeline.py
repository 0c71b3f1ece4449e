"""Experiment orchestration: staged pipelines with content-hash caching.

A stage reruns only when the hash of its inputs (config subset, upstream
artifact hashes, package version) changes; the manifest records hashes,
seeds, and outputs per stage, with wall times kept in a separate block so
manifests from identical reruns compare bit-exactly.
"""

from __future__ import annotations

import hashlib
import json
import time
from pathlib import Path

import numpy as np

from .. import __version__
from ..datagen import Dataset, SamplingStrategy, collect_perturb, collect_tracking, recovery_episodes, tracking_recovery_episodes
from ..envs import MotionLibraryConfig, PendulumConfig, Perturbation, PointMassConfig, id_cells, motion_library, split_library
from ..eval import (
    EvalReport,
    eval_perturbation,
    eval_perturbation_ood,
    eval_token_generation,
    eval_tracking,
    fpc,
    id_kick_batch,
    mode_histogram,
)
from ..expert import PpoConfig, train_pendulum_expert, train_tracking_expert
from ..kernels import active_backend
from ..numerics import Rng
from ..policy import StudentConfig, cvae_infer, load_expert, load_policy, save_expert, save_policy, train_policy
from .config import ExperimentConfig
from . import svg


class MissingArtifact(RuntimeError):
    pass


def _hash_obj(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode("utf-8")).hexdigest()[:16]


def _file_sha(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()[:16]


class Pipeline:
    def __init__(self, cfg: ExperimentConfig, out_dir):
        self.cfg = cfg
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        for sub in ("experts", "datasets", "students", "eval", "reports"):
            (self.out / sub).mkdir(exist_ok=True)
        self.manifest_path = self.out / "manifest.json"
        if self.manifest_path.exists():
            self.manifest = json.loads(self.manifest_path.read_text())
        else:
            self.manifest = {"stages": {}, "timings": {}, "version": __version__, "backend": active_backend()}
        self.manifest["version"] = __version__
        self.manifest["backend"] = active_backend()
        self.manifest["config"] = cfg.json_values()

    def _save_manifest(self) -> None:
        self.manifest_path.write_text(json.dumps(self.manifest, sort_keys=True, indent=1) + "\n")

    def stage(self, name: str, inputs: dict, outputs: list[str], fn) -> dict:
        """Run `fn` unless the recorded input hash matches and outputs are intact."""
        key = _hash_obj({"inputs": inputs, "version": __version__})
        rec = self.manifest["stages"].get(name)
        paths = [self.out / rel for rel in outputs]
        if rec and rec["input_hash"] == key and all(p.exists() for p in paths):
            if all(rec["outputs"].get(rel) == _file_sha(p) for rel, p in zip(outputs, paths)):
                return {"cached": True, "stage": rec}
        t0 = time.time()
        fn()
        missing = [rel for rel, p in zip(outputs, paths) if not p.exists()]
        if missing:
            raise RuntimeError(f"stage {name} did not produce {missing}")
        rec = {
            "input_hash": key,
            "outputs": {rel: _file_sha(p) for rel, p in zip(outputs, paths)},
            "seeds": inputs.get("seeds", []),
            "version": __version__,
        }
        self.manifest["stages"][name] = rec
        self.manifest["timings"][name] = round(time.time() - t0, 3)
        self._save_manifest()
        return {"cached": False, "stage": rec}


# ---------------------------------------------------------------------------
# config -> module objects
# ---------------------------------------------------------------------------


def pend_cfg_from(cfg: ExperimentConfig) -> PendulumConfig:
    e = cfg.section("env")
    return PendulumConfig(
        dt=e["dt"], gravity=e["gravity"], length=e["length"], mass=e["mass"], damping=e["damping"],
        torque_limit=e["torque_limit"], kick_scale=e["kick_scale"], kick_steps=e["kick_steps"],
        id_magnitudes=(e["id_low"], e["id_high"]), id_onset_time=e["id_onset"],
        ood_onset_range=(e["ood_onset_min"], e["ood_onset_max"]),
        ood_magnitude_range=(e["id_low"], e["id_high"]),
        post_onset_window=e["post_onset_window"], fall_angle=e["fall_angle"], fall_hold=e["fall_hold"],
        fall_spin_windings=e["fall_spin_windings"], upright_band=e["upright_band"],
    )


def pm_cfg_from(cfg: ExperimentConfig) -> PointMassConfig:
    p = cfg.section("pm")
    return PointMassConfig(dt=p["dt"], mass=p["mass"], damping=p["damping"], force_limit=p["force_limit"],
                           fail_threshold=p["fail_threshold"])


def ppo_cfg_from(cfg: ExperimentConfig) -> PpoConfig:
    x = cfg.section("expert")
    return PpoConfig(
        gamma=x["gamma"], lam=x["lam"], clip=x["clip"], actor_lr=x["actor_lr"], critic_lr=x["critic_lr"],
        horizon_length=x["horizon_length"], num_envs=x["num_envs"], mini_epochs=x["mini_epochs"],
        batch_size=x["batch_size"], exploration_noise=x["exploration_noise"], iterations=x["iterations"],
    )


def student_cfg_from(cfg: ExperimentConfig, **over) -> StudentConfig:
    s = cfg.section("student")
    base = dict(
        kind=s["kind"], obs_history=s["obs_history"], horizon=s["horizon"], model_dim=s["model_dim"],
        n_heads=s["n_heads"], enc_layers=s["enc_layers"], dec_layers=s["dec_layers"], dropout=s["dropout"],
        mlp_ratio=s["mlp_ratio"], diffusion_steps=s["diffusion_steps"], schedule_shift=s["schedule_shift"],
        clip_x0=s["clip_x0"], unscaled_forward=s["unscaled_forward"], train_steps=s["train_steps"],
        batch_size=s["batch_size"], lr=s["lr"], weight_decay=s["weight_decay"], warmup=s["warmup"],
        mlp_hidden=tuple(int(h) for h in s["mlp_hidden"]), cvae_hidden=tuple(int(h) for h in s["cvae_hidden"]),
        cvae_latent=s["cvae_latent"], cvae_beta=s["cvae_beta"],
    )
    base.update(over)
    return StudentConfig(**base)


def motions_from(cfg: ExperimentConfig):
    m = cfg.section("motions")
    lib = motion_library(MotionLibraryConfig(
        families=tuple(m["families"]), count_per_family=m["count_per_family"], duration=m["duration"],
        dt=cfg["pm.dt"], seed=m["seed"], test_every=m["test_every"],
    ))
    return split_library(lib, m["test_every"])


# ---------------------------------------------------------------------------
# perturbation-application stages
# ---------------------------------------------------------------------------


def expert_paths(pipe: Pipeline, cfg: ExperimentConfig) -> list[str]:
    if cfg["application"] == "perturb":
        return [f"experts/cell{i}.pdpw" for i in range(4)]
    train, _ = motions_from(cfg)
    fams = sorted({m.family for m in train})
    return [f"experts/{fam}.pdpw" for fam in fams]


def stage_experts(pipe: Pipeline) -> list[str]:
    cfg = pipe.cfg
    outs = expert_paths(pipe, cfg)
    inputs = {"env": cfg.section("env") if cfg["application"] == "perturb" else cfg.section("pm"),
              "motions": cfg.section("motions"), "expert": cfg.section("expert"),
              "application": cfg["application"], "seeds": [cfg["expert.seed"]]}

    def run():
        ppo = ppo_cfg_from(cfg)
        if cfg["application"] == "perturb":
            env_cfg = pend_cfg_from(cfg)
            for i, cell in enumerate(id_cells(env_cfg)):
                policy, curve = train_pendulum_expert(env_cfg, cell, ppo, seed=cfg["expert.seed"] + i,
                                                      success_criterion=cfg["expert.success_criterion"])
                save_expert(pipe.out / f"experts/cell{i}.pdpw", policy)
                _write_curve(pipe.out / f"experts/cell{i}_curve.csv", curve)
        else:
            env_cfg = pm_cfg_from(cfg)
            train, test = motions_from(cfg)
            fams = sorted({m.family for m in train})
            for i, fam in enumerate(fams):
                frefs = [m for m in train if m.family == fam]
                trefs = [m for m in test if m.family == fam]
                policy, curve = train_tracking_expert(env_cfg, frefs, ppo, seed=cfg["expert.seed"] + i,
                                                      eval_refs=trefs or frefs,
                                                      error_criterion=cfg["expert.error_criterion"])
                save_expert(pipe.out / f"experts/{fam}.pdpw", policy)
                _write_curve(pipe.out / f"experts/{fam}_curve.csv", curve)

    pipe.stage("experts", inputs, outs, run)
    return outs


def _write_curve(path: Path, curve: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("iteration,mean_reward,actor_loss,value_loss,eval\n")
        for row in curve:
            fh.write(f"{row['iteration']},{row['mean_reward']!r},{row['actor_loss']!r},{row['value_loss']!r},{row['eval']!r}\n")


def load_perturb_experts(pipe: Pipeline, env_cfg: PendulumConfig):
    cells = id_cells(env_cfg)
    pairs = []
    for i, cell in enumerate(cells):
        path = pipe.out / f"experts/cell{i}.pdpw"
        if not path.exists():
            raise MissingArtifact(f"missing expert checkpoint {path}; run the train-expert stage first")
        pairs.append((cell, load_expert(path)))
    return pairs


def build_perturb_dataset(env_cfg: PendulumConfig, experts, strategy: SamplingStrategy,
                          per_cell: int, recovery_frac: float, recovery_length: int,
                          seed: int, cap: int) -> Dataset:
    """Kick shards for every ID cell plus recovery-episode shards (sigma > 0)."""
    ds = Dataset(obs_dim=4, act_dim=1, provenance={
        "app": "perturb", "strategy": strategy.kind, "noise_level": strategy.noise_level,
        "seed": seed, "experts": [p.task_subset_id for _, p in experts],
    })
    rng = Rng(seed)
    for ci, (cell, pol) in enumerate(experts):
        shard = collect_perturb(pol, env_cfg, cell, strategy, rng.spawn(f"kick{ci}"), per_cell)
        ds.extend(shard)
        if strategy.sigma > 0 and recovery_frac > 0:
            n_rec = max(1, int(per_cell * recovery_frac / recovery_length))
            rec = recovery_episodes(pol, env_cfg, (np.pi, 2.0), rng.spawn(f"rec{ci}"), count=n_rec,
                                    strategy=strategy, length=recovery_length)
            ds.extend(rec)
        if ds.n_transitions >= cap:
            break
    ds.finalize_normalization()
    return ds


def stage_collect(pipe: Pipeline, strategy: SamplingStrategy, tag: str = "") -> str:
    cfg = pipe.cfg
    name = tag or f"collect[{strategy.kind},{strategy.noise_level}]"
    rel = f"datasets/{name.replace('collect[', '').rstrip(']').replace(',', '_')}.pdpd"
    expert_outs = expert_paths(pipe, cfg)
    upstream = {o: pipe.manifest["stages"].get("experts", {}).get("outputs", {}).get(o) for o in expert_outs}
    inputs = {"collect": cfg.section("collect"), "strategy": [strategy.kind, strategy.noise_level],
              "experts": upstream, "application": cfg["application"], "seeds": [cfg["collect.seed"]]}

    def run():
        if cfg["application"] == "perturb":
            env_cfg = pend_cfg_from(cfg)
            experts = load_perturb_experts(pipe, env_cfg)
            ds = build_perturb_dataset(
                env_cfg, experts, strategy, cfg["collect.transitions_per_task"],
                cfg["collect.recovery_frac"], cfg["collect.recovery_length"], cfg["collect.seed"],
                cfg["collect.max_transitions"],
            )
        else:
            ds = build_pointmass_dataset(pipe, strategy)
        ds.save(pipe.out / rel)

    pipe.stage(name, inputs, [rel], run)
    return rel


def build_pointmass_dataset(pipe: Pipeline, strategy: SamplingStrategy) -> Dataset:
    cfg = pipe.cfg
    env_cfg = pm_cfg_from(cfg)
    train, _ = motions_from(cfg)
    fams = sorted({m.family for m in train})
    token_mode = cfg["application"] == "token_gen"
    ds = Dataset(obs_dim=4 if token_mode else 8, act_dim=2, provenance={
        "app": cfg["application"], "strategy": strategy.kind, "noise_level": strategy.noise_level,
        "seed": cfg["collect.seed"],
    })
    rng = Rng(cfg["collect.seed"])
    canonical = canonical_token_refs(cfg) if token_mode else None
    for i, fam in enumerate(fams):
        path = pipe.out / f"experts/{fam}.pdpw"
        if not path.exists():
            raise MissingArtifact(f"missing expert checkpoint {path}; run the train-expert stage first")
        expert = load_expert(path)
        if token_mode:
            refs = [r for t, r in canonical if r.family == fam]
            tokens = [t for t, r in canonical if r.family == fam]
        else:
            refs = [m for m in train if m.family == fam]
            tokens = None
        shard = collect_tracking(expert, env_cfg, refs, strategy, rng.spawn(f"fam{i}"),
                                 cfg["collect.transitions_per_task"], store_token_obs=token_mode, tokens=tokens)
        ds.extend(shard)
        if strategy.sigma > 0 and cfg["collect.recovery_frac"] > 0:
            n_rec = max(1, int(cfg["collect.transitions_per_task"] * cfg["collect.recovery_frac"] / 50))
            rec = tracking_recovery_episodes(expert, env_cfg, refs, rng.spawn(f"rec{i}"), count=n_rec,
                                             strategy=strategy, store_token_obs=token_mode, tokens=tokens)
            ds.extend(rec)
        if ds.n_transitions >= cfg["collect.max_transitions"]:
            break
    ds.finalize_normalization()
    return ds


def canonical_token_refs(cfg: ExperimentConfig):
    """Token vocabulary: index 0 reference of each family, tokens 0..V-1."""
    train, _ = motions_from(cfg)
    fams = sorted({m.family for m in train})
    out = []
    for t, fam in enumerate(fams):
        ref = next(m for m in train if m.family == fam and m.index == 0)
        out.append((t, ref))
    return out


def stage_student(pipe: Pipeline, dataset_rel: str, scfg: StudentConfig, seed: int, tag: str = "") -> str:
    cfg = pipe.cfg
    name = tag or f"student[{scfg.kind},h{scfg.horizon},{seed}]"
    rel = f"students/{name.replace('student[', '').rstrip(']').replace(',', '_')}.pdpw"
    ds_path = pipe.out / dataset_rel
    if not ds_path.exists():
        raise MissingArtifact(f"missing dataset {ds_path}; run the collect stage first")
    inputs = {"student": scfg.to_json(), "dataset_sha": _file_sha(ds_path), "seed": seed, "seeds": [seed]}

    def run():
        ds = Dataset.load(ds_path)
        vocab = 0
        if cfg["application"] == "token_gen":
            vocab = len(canonical_token_refs(cfg))
        bundle = train_policy(ds, scfg, seed=seed, token_vocab=vocab)
        save_policy(pipe.out / rel, bundle)
        _write_loss_curve(pipe.out / (rel[:-5] + "_loss.csv"), bundle.loss_curve)

    pipe.stage(name, inputs, [rel], run)
    return rel


def _write_loss_curve(path: Path, curve: list) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("step,loss\n")
        for step, loss in curve:
            fh.write(f"{step},{loss!r}\n")


# ---------------------------------------------------------------------------
# evaluation stages
# ---------------------------------------------------------------------------


def evaluate_policy_file(pipe: Pipeline, student_rel: str, label: str, ood: bool = True) -> EvalReport:
    cfg = pipe.cfg
    path = pipe.out / student_rel
    if not path.exists():
        raise MissingArtifact(f"missing policy checkpoint {path}; run the train-policy stage first")
    bundle = load_policy(path)
    if cfg["application"] == "perturb":
        return _evaluate_perturb_bundle(pipe, bundle, label, ood)
    if cfg["application"] == "track":
        return _evaluate_track_bundle(pipe, bundle, label)
    return _evaluate_token_bundle(pipe, bundle, label)


def _evaluate_perturb_bundle(pipe: Pipeline, bundle, label: str, ood: bool) -> EvalReport:
    cfg = pipe.cfg
    env_cfg = pend_cfg_from(cfg)
    n = cfg["eval.n_episodes"]
    kicks = id_kick_batch(env_cfg, n, cfg["eval.seed"])
    res = eval_perturbation(bundle, env_cfg, kicks, seed=cfg["eval.seed"], exec_steps=cfg["eval.exec_steps"])
    report = EvalReport(label=label, n_episodes=n, success_id=res["success_rate"],
                        success_rate=res["success_rate"], mode_histogram=res["histogram"],
                        seeds=[cfg["eval.seed"]])
    if ood:
        res_ood = eval_perturbation_ood(bundle, env_cfg, n, cfg["eval.seed"] + 1,
                                        exec_steps=cfg["eval.exec_steps"])
        report.success_ood = res_ood["success_rate"]
    return report


def _evaluate_track_bundle(pipe: Pipeline, bundle, label: str) -> EvalReport:
    cfg = pipe.cfg
    env_cfg = pm_cfg_from(cfg)
    _, test = motions_from(cfg)
    res = eval_tracking(bundle, env_cfg, test, seed=cfg["eval.seed"], exec_steps=cfg["eval.exec_steps"])
    return EvalReport(label=label, n_episodes=len(test), success_rate=res["success_rate"],
                      e_gmpjpe=res["e_gmpjpe"], e_mpjpe=res["e_mpjpe"], e_vel=res["e_vel"],
                      e_acc=res["e_acc"], seeds=[cfg["eval.seed"]])


def _evaluate_token_bundle(pipe: Pipeline, bundle, label: str) -> EvalReport:
    cfg = pipe.cfg
    env_cfg = pm_cfg_from(cfg)
    canon = canonical_token_refs(cfg)
    refs = [r for _, r in canon]
    tokens = [t for t, _ in canon]
    res = eval_token_generation(bundle, env_cfg, refs, tokens, seed=cfg["eval.seed"],
                                exec_steps=cfg["eval.exec_steps"])
    return EvalReport(label=label, n_episodes=len(refs), success_rate=res["success_rate"],
                      e_gmpjpe=res["mean_err"], seeds=[cfg["eval.seed"]],
                      extra={"per_token_err": res["per_token_err"]})


def write_reports(out_dir: Path, name: str, reports: list[EvalReport]) -> tuple[Path, Path]:
    csv_path = out_dir / f"{name}.csv"
    json_path = out_dir / f"{name}.json"
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write(",".join(EvalReport.CSV_FIELDS) + "\n")
        for r in reports:
            fh.write(r.csv_row() + "\n")
    json_path.write_text(json.dumps([r.to_json() for r in reports], sort_keys=True, indent=1) + "\n")
    return csv_path, json_path


# ---------------------------------------------------------------------------
# full pipeline
# ---------------------------------------------------------------------------


def run_pipeline(cfg: ExperimentConfig, out_dir) -> dict:
    """experts -> collect -> per-seed students -> evaluate -> report."""
    pipe = Pipeline(cfg, out_dir)
    stage_experts(pipe)
    strategy = SamplingStrategy(cfg["collect.strategy"], cfg["collect.noise_level"])
    ds_rel = stage_collect(pipe, strategy)
    scfg = student_cfg_from(cfg)
    reports = []
    for seed in cfg["seeds"]:
        rel = stage_student(pipe, ds_rel, scfg, int(seed))
        reports.append(evaluate_policy_file(pipe, rel, label=f"{scfg.kind}_seed{seed}"))
    write_reports(pipe.out / "eval", "summary", reports)
    agg = EvalReport(
        label=f"{scfg.kind}_mean",
        n_episodes=sum(r.n_episodes for r in reports),
        success_rate=float(np.mean([r.success_rate for r in reports])),
        success_id=float(np.mean([r.success_id for r in reports])),
        success_ood=float(np.mean([r.success_ood for r in reports])),
        seeds=[int(s) for s in cfg["seeds"]],
    )
    write_reports(pipe.out / "reports", "pipeline_summary", reports + [agg])
    pipe._save_manifest()
    return pipe.manifest
