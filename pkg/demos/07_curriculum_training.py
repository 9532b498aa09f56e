"""
Two-stage training at toy scale
===============================

Stage I trains with synchronous perception (age always zero) until the
rolling success rate reaches a threshold; Stage II continues from those
weights with 10 Hz perception and a 50 ms pipeline.  The budget here is
tiny so the script finishes in a couple of minutes; see
experiments/toy_curriculum.py for the full study.
"""
from asyncnav.env import EnvConfig
from asyncnav.harness import ExperimentConfig, run_modes
from asyncnav.learn import TrainConfig, train, two_stage
from asyncnav.schedule import ScheduleConfig
from asyncnav.world import WorldConfig

env = EnvConfig(world=WorldConfig(path_length=6.0, width=4.0, density=0.1))
cfg = TrainConfig(env=env, stages=two_stage(ScheduleConfig(), 3, 3), n_envs=8, horizon=64, seed=0)


def show(r):
    print(f"it {r['iteration']:2d} {r['stage']:12s} episodes {r['episodes']:2d} success {r['success_rate']:.2f}"
          f" mean AoI {r['mean_aoi']:.3f} entropy {r['entropy']:.3f}")


result = train(cfg, progress=show)
rep = run_modes(ExperimentConfig(env=env, trials=10, seed=0), ("proposed", "ideal"),
                policies={"proposed": result.policy, "ideal": result.policy})
print(rep.table())
