"""Reference-seed calibration run for the acceptance thresholds."""
import sys
import time

import numpy as np

from facepose.losses import LossWeights
from facepose.metrics import EvalConfig, evaluate
from facepose.network import ModelConfig, Phase, PhaseSchedule, predict, train
from facepose.synthetic import gen_synthetic

SEED = 0
t0 = time.time()
train_data = gen_synthetic(2000, seed=100, image_size=56)
val_data = gen_synthetic(500, seed=200, image_size=56)
print(f"data generated in {time.time()-t0:.1f}s", flush=True)

e1, e2, e3 = (int(v) for v in sys.argv[1:4]) if len(sys.argv) > 3 else (5, 5, 10)
lr1, lr2, lr3 = (float(v) for v in sys.argv[4:7]) if len(sys.argv) > 6 else (0.1, 0.02, 0.02)
pose_list = [int(v) for v in sys.argv[7:]] or [9]

schedule = PhaseSchedule(phases=(
    Phase(e1, 8, lr1, frozenset({"backbone", "pose_head"})),
    Phase(e2, 8, lr2, frozenset({"pose_head"})),
    Phase(e3, 8, lr3, frozenset()),
))
print(f"schedule: {e1}/{e2}/{e3} epochs at lr {lr1}/{lr2}/{lr3}", flush=True)

for pose_params in pose_list:
    cfg = ModelConfig(pose_params=pose_params, seed=SEED)
    t1 = time.time()
    model, history = train(cfg, schedule, train_data, LossWeights())
    print(f"np={pose_params}: trained in {(time.time()-t1)/60:.1f} min", flush=True)
    for r in history.records[::1000]:
        d = r.loss
        print(f"  step {r.step} ph{r.phase} total={d.total:.4f} obj={d.l_obj:.4f} "
              f"xy={d.l_xy:.4f} wh={d.l_wh:.4f} cls={d.l_cls:.4f} pose={d.l_pose:.4f}",
              flush=True)
    d = history.records[-1].loss
    print(f"  final total={d.total:.4f} obj={d.l_obj:.4f} xy={d.l_xy:.4f} "
          f"wh={d.l_wh:.4f} pose={d.l_pose:.4f}", flush=True)

    images = np.stack([img for img, _ in val_data])
    annotations = [ann for _, ann in val_data]
    from facepose.grid import GridTensor, activate, split_channels
    from facepose.network import _forward
    raw, _ = _forward(model, images[:50].astype(float))
    act = activate(GridTensor(raw), cfg.grid_spec())
    ch = split_channels(act, cfg.grid_spec())
    print("  obj stats: max", round(float(ch.obj.max()), 4),
          "p99.9", round(float(np.quantile(ch.obj, 0.999)), 4),
          "mean", round(float(ch.obj.mean()), 5), flush=True)

    for conf in (0.5, 0.4, 0.3, 0.2, 0.1):
        preds = predict(model, images, conf_threshold=conf, nms_iou_threshold=0.45)
        preds_by_image = {ann.image_id: d for ann, d in zip(annotations, preds)}
        report = evaluate(preds_by_image, annotations, EvalConfig(pose_params=pose_params))
        mae = "None" if report.mae_avg is None else f"{report.mae_avg:.2f}"
        print(f"  conf={conf}: mean_iou={report.mean_iou:.4f} mae_avg={mae} "
              f"matched={report.matched_count} missed={report.missed_count} "
              f"spurious={report.spurious_count}", flush=True)

print(f"total elapsed {(time.time()-t0)/60:.1f} min")
