"""Score the demo checkpoint against the copy-last-frame baseline.

Every prediction task has a floor: repeat the last observed frame and
hope nothing moves.  This walks the full evaluation path (load model,
predict the held-out split, compute MSE/MAE/SSIM/PSNR per frame) for
both the trained model and that baseline.  Run 03_train_small.py first.
"""

import sys
from pathlib import Path

import numpy as np

from framecast import metrics
from framecast.data import Dataset
from framecast.model import model_from_checkpoint

OUT = Path(__file__).resolve().parent / "_out"


def main():
    ckpt = OUT / "run16" / "ckpt_last.bin"
    if not ckpt.exists():
        sys.exit("no checkpoint found; run demos/03_train_small.py first")

    dataset = Dataset.load(OUT / "sprites16.bin")
    model, extra = model_from_checkpoint(ckpt)
    fin, fout = model.spec.frames_in, model.spec.frames_out
    print(f"checkpoint from step {extra['step']}, "
          f"{model.num_parameters()} parameters, {fin} frames in / {fout} out")

    seqs = dataset.test.astype(np.float32) / 255.0
    truth = seqs[:, fin:fin + fout]
    pred = model.predict(seqs[:, :fin], steps=fout)
    copy_last = np.repeat(seqs[:, fin - 1:fin], fout, axis=1)

    report = metrics.evaluate(pred, truth)
    floor = metrics.evaluate(copy_last, truth)
    print(f"\n{'':>12} {'model':>12} {'copy-last':>12}")
    for name in ("mse", "mae", "ssim", "psnr"):
        print(f"{name:>12} {report[name]:>12.5f} {floor[name]:>12.5f}")
    print("\nper-frame mse over the prediction horizon:")
    for t, v in enumerate(report["per_frame"]["mse"]):
        bar = "#" * int(round(v * 400))
        print(f"  +{t + 1}: {v:.5f} {bar}")

    print("\ncanonical json report:")
    print(metrics.report_json(report).decode()[:120] + " ...")


if __name__ == "__main__":
    main()
