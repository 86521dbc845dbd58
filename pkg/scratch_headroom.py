"""Headroom probe: direct single-stack training on degree-3 data (throwaway)."""
import sys
import time

import numpy as np
import torch

from hiervad.hierarchy import VideoAnomalyModel, build_spec
from hiervad.scoring import evaluate
from hiervad.synthetic import GeneratorConfig, generate_synthetic
from hiervad.training import LossConfig, build_training_samples, train

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 5
lr = float(sys.argv[2]) if len(sys.argv) > 2 else 3e-4

t0 = time.time()
gen = GeneratorConfig(
    frames_per_video=80,
    train_videos={1: 0, 2: 0, 3: 12},
    test_videos=10,
    event_frames=24,
    seed=7,
)
ds = generate_synthetic(gen)

spec = build_spec({"appearance": [["s", "s"]]}, fusion_weights={"appearance": 1.0})
torch.manual_seed(0)
model = VideoAnomalyModel(spec)
samples = build_training_samples(ds.train[3], spec)
print("deg3 samples:", samples.count)
train(model, samples, LossConfig(epochs=epochs, learning_rate=lr), seed=0)

series, summary = evaluate(model, ds.test, degree=3)
print(f"AUC under degree-3 labels: {summary['auc']:.4f}")
sums = {"square": [], "circle": [], "triangle": []}
for s, video in zip(series, ds.test):
    for i, f in enumerate(s.frame_indices):
        classes = video.classes_per_frame[f]
        key = "triangle" if 3 in classes else ("circle" if 2 in classes else "square")
        sums[key].append(s.scores[i])
print({k: round(float(np.mean(v)), 3) for k, v in sums.items()})
print(f"wall: {(time.time()-t0)/60:.1f} min")
