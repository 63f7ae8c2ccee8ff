"""One restart of the vector study with each optimizer; prints accuracy and monotonicity."""
import argparse

import numpy as np

from ppann import calib, kinematics as kin, matgen, picnn

ap = argparse.ArgumentParser()
ap.add_argument("--seed", type=int, default=0)
ap.add_argument("--epochs", type=int, default=7000)
args = ap.parse_args()

cal = matgen.build("vector", "calib")
test = matgen.build("vector", "test")
pcfg = picnn.default_config("Type1M", 2)
rng = np.random.default_rng(1)
F = kin.sample_deformation(rng, 2000)
t = rng.uniform(0, 1, (2000, 2))
for opt in ("adam", "quasi-newton"):
    cfg = calib.TrainConfig(optimizer=opt, epochs=args.epochs, seed=args.seed, restarts=1,
                            normalize_stress=True, study="vector")
    scale = calib.stress_scale_for(cal)
    res, model = calib.train_single(cfg, cal, test, pcfg, args.seed, scale=scale)
    d = model.dpsi_dt(F, t)
    print(f"{opt}: loss={res.final_loss:.3e} calib={res.calib_log10_mse:.3f} "
          f"test={res.test_log10_mse:.3f} min dpsi/dt={d.min():.3e} "
          f"iters={len(res.loss_history)} {res.note} ({res.wall_time:.0f}s)", flush=True)
