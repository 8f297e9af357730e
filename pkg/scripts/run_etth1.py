"""Full ETTh1 run at L=96, H=96 with the default config.

Expects ETTh1.csv under $WAVERORA_DATA (or data/, or the cwd). Trains on CPU
for up to the default epoch budget, then prints test MSE/MAE next to the
published reference band (0.381 / 0.402, +-15%). Expect 30-60 minutes.
"""

import argparse
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from waverora.data import SplitSpec, WindowSpec, load_csv, split, standardize, windows
from waverora.model import ModelConfig, build_model
from waverora.trainer import TrainConfig, evaluate, train, write_history

REF_MSE, REF_MAE = 0.381, 0.402


def find_dataset():
    candidates = []
    root = os.environ.get("WAVERORA_DATA")
    if root:
        candidates.append(os.path.join(root, "ETTh1.csv"))
    candidates += ["data/ETTh1.csv", "ETTh1.csv"]
    for path in candidates:
        if os.path.exists(path):
            return path
    return None


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--csv", help="path to ETTh1.csv (default: search)")
    parser.add_argument("--out", default="runs/etth1", help="output directory")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--epochs", type=int, default=10)
    args = parser.parse_args(argv)

    path = args.csv or find_dataset()
    if path is None:
        print("ETTh1.csv not found; set $WAVERORA_DATA or pass --csv", file=sys.stderr)
        return 2

    ds = load_csv(path, name="ETTh1", frequency="1h")
    cfg = ModelConfig(lookback=96, horizon=96, variables=ds.variables)
    tcfg = TrainConfig(seed=args.seed, max_epochs=args.epochs)
    wspec = WindowSpec(cfg.lookback, cfg.horizon)
    train_r, val_r, test_r = split(ds, SplitSpec((0.6, 0.2, 0.2)), wspec)
    scaled, _, _ = standardize(ds, train_r)

    os.makedirs(args.out, exist_ok=True)
    model = build_model(cfg, seed=args.seed)
    result = train(
        model,
        windows(scaled, train_r, wspec),
        windows(scaled, val_r, wspec),
        tcfg,
        checkpoint_path=os.path.join(args.out, "model.ckpt"),
    )
    write_history(os.path.join(args.out, "history.csv"), result.history)
    report = evaluate(model, windows(scaled, test_r, wspec))

    print(f"epochs run: {len(result.history)}  best val MSE: {result.best_val_mse:.4f}")
    print(f"test MSE {report.mse:.4f}  (reference {REF_MSE}, band "
          f"{REF_MSE * 0.85:.4f}..{REF_MSE * 1.15:.4f})")
    print(f"test MAE {report.mae:.4f}  (reference {REF_MAE}, band "
          f"{REF_MAE * 0.85:.4f}..{REF_MAE * 1.15:.4f})")
    in_band = REF_MSE * 0.85 < report.mse < REF_MSE * 1.15 and \
        REF_MAE * 0.85 < report.mae < REF_MAE * 1.15
    print("inside band" if in_band else "outside band: check protocol details "
          "(epochs, learning rate, split handling) before reading much into it")
    return 0


if __name__ == "__main__":
    sys.exit(main())
