"""Export predicted frames as images, then run an autoregressive rollout.

The direct model from demo 03 maps six observed frames to six future
frames in one shot and its frames go out as binary PGM files.  The
second half trains a small causal model in AR mode, where inference
appends each predicted frame to the input window, so the horizon is a
free parameter at prediction time.  Run 03_train_small.py first.
"""

import sys
from pathlib import Path

import numpy as np

from framecast.cli import write_pgm
from framecast.data import Dataset
from framecast.model import Model, ModelSpec, model_from_checkpoint
from framecast.training import TrainSpec, train

OUT = Path(__file__).resolve().parent / "_out"
SHADES = " .:-=+*#%@"


def ascii_frame(frame: np.ndarray) -> str:
    rows = []
    for row in np.clip(frame, 0.0, 1.0):
        idx = (row * (len(SHADES) - 1) + 0.5).astype(np.int32)
        rows.append("".join(SHADES[i] for i in idx))
    return "\n".join(rows)


def side_by_side(left: np.ndarray, right: np.ndarray, gap: str = "   |   "):
    for a, b in zip(ascii_frame(left).splitlines(), ascii_frame(right).splitlines()):
        print(f"  {a}{gap}{b}")


def main():
    ckpt = OUT / "run16" / "ckpt_last.bin"
    if not ckpt.exists():
        sys.exit("no checkpoint found; run demos/03_train_small.py first")

    dataset = Dataset.load(OUT / "sprites16.bin")
    model, _ = model_from_checkpoint(ckpt)
    fin, fout = model.spec.frames_in, model.spec.frames_out

    seq = dataset.test[:1].astype(np.float32) / 255.0
    pred = model.predict(seq[:, :fin], steps=fout)

    frames_dir = OUT / "frames"
    frames_dir.mkdir(exist_ok=True)
    for t in range(fout):
        write_pgm(frames_dir / f"pred_{t + 1:03d}.pgm", pred[0, t, 0])
    print(f"wrote {fout} PGM frames to {frames_dir}")

    print(f"\ntruth (left) vs prediction (right) at +1:")
    side_by_side(seq[0, fin, 0], pred[0, 0, 0])
    print("  (a model this small hedges with blur; that is already enough")
    print("   to beat copy-last on MSE, as demo 04 shows)")

    print("\n== autoregressive rollout ==")
    spec = ModelSpec(frames_in=6, frames_out=6, channels=1, height=16,
                     width=16, patch=4, embed_dim=16, depth=1, num_heads=4,
                     window=4, reduction=2, num_groups=8, ffn_expansion=2,
                     drop_path=0.0, ar_mode=True)
    ar = Model(spec, seed=0)
    # AR training is teacher-forced next-frame prediction, so the merge
    # layer disappears and any horizon is reachable at inference time
    tspec = TrainSpec(total_steps=150, batch_size=8, base_lr=3e-3, seed=0)
    print("training a small AR model for 150 steps ...")
    train(ar, dataset, tspec, OUT / "run16_ar", echo=None)

    horizon = 9  # more frames than the model was ever trained on at once
    roll = ar.rollout(seq[:, :fin], steps=horizon)
    print(f"rollout of {horizon} frames from {fin} observed: shape {roll.shape}")
    print(f"\nAR prediction at +1 (left) and +{horizon} (right):")
    side_by_side(roll[0, 0, 0], roll[0, horizon - 1, 0])


if __name__ == "__main__":
    main()
