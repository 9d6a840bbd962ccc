"""Train a small predictor end to end, with an interruption in the middle.

Generates a 16x16 sprite dataset, trains a one-block model for 300 steps,
stops the first invocation after 200 steps, and resumes.  The resumed run
retraces the schedule exactly, so the final log is identical to what an
uninterrupted run would have written.  Artifacts land in demos/_out and
are reused by the evaluation and prediction demos.
"""

from pathlib import Path

from framecast.data import Dataset, SpriteSceneSpec, generate_dataset
from framecast.model import Model, ModelSpec
from framecast.training import TrainSpec, train

OUT = Path(__file__).resolve().parent / "_out"
DATA = OUT / "sprites16.bin"
RUN = OUT / "run16"


def echo_every(n: int):
    def echo(line: str):
        step = int(line.split()[0].partition("=")[2])
        if step == 1 or step % n == 0 or " eval_mse=" in line:
            print(" ", line)
    return echo


def main():
    OUT.mkdir(exist_ok=True)
    scene = SpriteSceneSpec(size=16, frames=12, num_sprites=2, sprite_size=4,
                            v_min=1.0, v_max=3.0, seed=3)
    dataset = generate_dataset(scene, n_train=64, n_test=8)
    dataset.save(DATA)
    print(f"dataset: {dataset.train.shape[0]} train / {dataset.test.shape[0]} test "
          f"sequences of {dataset.train.shape[1]} frames")

    mspec = ModelSpec(frames_in=6, frames_out=6, channels=1, height=16,
                      width=16, patch=4, embed_dim=16, depth=1, num_heads=4,
                      window=4, reduction=2, num_groups=8, ffn_expansion=2,
                      drop_path=0.0)
    model = Model(mspec, seed=0)
    print(f"model: {model.num_parameters()} parameters")

    tspec = TrainSpec(total_steps=300, batch_size=8, base_lr=3e-3,
                      eval_every=100, eval_subset=8, seed=0)

    print("\nfirst invocation, stopping after 200 steps:")
    train(model, dataset, tspec, RUN, stop_after=200, echo=echo_every(50))

    print("\nsecond invocation, resuming from the checkpoint:")
    resumed = Model(mspec, seed=0)  # weights come from ckpt_last.bin
    hist = train(resumed, dataset, tspec, RUN, resume=True, echo=echo_every(50))

    print(f"\nfinal eval mse {hist['eval'][-1][1]:.5f}, "
          f"best {hist['best_mse']:.5f}")
    print(f"run directory: {RUN}")
    for name in ("metrics.log", "ckpt_last.bin", "ckpt_best.bin"):
        print(f"  {name}: {(RUN / name).stat().st_size} bytes")


if __name__ == "__main__":
    main()
