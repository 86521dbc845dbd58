"""Pilot run for the degree-1 detection criterion (throwaway tuning script)."""
import sys
import time

import torch

from hiervad.presets import preset
from hiervad.hierarchy import VideoAnomalyModel
from hiervad.scoring import evaluate
from hiervad.synthetic import GeneratorConfig, generate_synthetic
from hiervad.training import LossConfig, build_training_samples, train

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 3
lr = float(sys.argv[2]) if len(sys.argv) > 2 else 3e-4
frames = int(sys.argv[3]) if len(sys.argv) > 3 else 80

t0 = time.time()
gen = GeneratorConfig(
    frames_per_video=frames,
    train_videos={1: 20, 2: 0, 3: 0},
    test_videos=10,
    event_frames=24,
    seed=7,
)
ds = generate_synthetic(gen)
print(f"dataset: {time.time()-t0:.1f}s")

spec = preset("ped2")
torch.manual_seed(0)
model = VideoAnomalyModel(spec)
samples = build_training_samples(ds.train[1], spec)
print("samples:", samples.count)

cfg = LossConfig(epochs=epochs, learning_rate=lr)
t1 = time.time()
history = train(model, samples, cfg, seed=0)
train_time = time.time() - t1
print(f"train: {train_time/60:.1f} min ({train_time/epochs:.0f} s/epoch)")
for i, h in enumerate(history):
    print(f"  epoch {i}: total={h.total:.3f} pred={h.prediction:.3f} div={h.diversity:.4f} siam={h.siamese:.4f}")

t2 = time.time()
series, summary = evaluate(model, ds.test, degree=1)
print(f"eval: {time.time()-t2:.1f}s  AUC(degree1) = {summary['auc']:.4f}")
print("per-degree:", summary["per_degree_auc"])
print(f"total wall: {(time.time()-t0)/60:.1f} min")
