"""Train one restart per architecture on Study I and score it on both mixed-path variants."""
import argparse
import time

from ppann import calib, matgen, picnn

ap = argparse.ArgumentParser()
ap.add_argument("--case", default="A")
ap.add_argument("--epochs", type=int, default=7000)
ap.add_argument("--seed", type=int, default=0)
ap.add_argument("--kinds", default="Type1,Type2,Type3")
args = ap.parse_args()

cal = matgen.build("I", "calib", args.case)
tests = {m: matgen.build("I", "test", args.case, mixed=m) for m in matgen.MIXED_MODES}
cfg = calib.TrainConfig(epochs=args.epochs, seed=args.seed, restarts=1)
for kind in args.kinds.split(","):
    t0 = time.perf_counter()
    res, model = calib.train_single(cfg, cal, None, picnn.default_config(kind), args.seed)
    scores = "  ".join(f"test[{m}]={calib.unweighted_log10_mse(model, ds):.3f}"
                       for m, ds in tests.items())
    print(f"{args.case} {kind}: calib={res.calib_log10_mse:.3f}  {scores}  "
          f"({time.perf_counter() - t0:.0f}s)", flush=True)
