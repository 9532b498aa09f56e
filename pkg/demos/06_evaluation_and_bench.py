"""
Paired evaluation across timing modes, and latency
==================================================

Every mode flies the same seeded worlds, so success rates can be compared
pairwise.  The checkpoint from the desk-scale study is used when present;
otherwise the harness flies an obstacle-blind straight-to-goal controller,
which ignores perception and so scores the same in every mode.
"""
from pathlib import Path

from asyncnav.env import MODES, EnvConfig
from asyncnav.harness import ExperimentConfig, bench_latency, bench_table, mcnemar_exact, run_modes
from asyncnav.world import WorldConfig

ckpt = Path(__file__).resolve().parent.parent / "results" / "toy_curriculum" / "proposed_s0" / "policy.ckpt"
env = EnvConfig(world=WorldConfig(path_length=10.0, width=6.0))
cfg = ExperimentConfig(env=env, trials=40, seed=1, density=0.2, v_des=3.0,
                       checkpoint=str(ckpt) if ckpt.exists() else None)
print("controller:", ckpt.name if ckpt.exists() else "reference")
rep = run_modes(cfg, MODES)
print(rep.table())

n10, n01, p = mcnemar_exact(rep.outcomes("ideal"), rep.outcomes("sync_baseline"))
print(f"ideal vs sync_baseline: {n10} worlds only ideal solved, {n01} only the baseline, exact p = {p:.3f}")

print(bench_table(bench_latency(sizes=(1000, 20000), repetitions=30)))
