"""Acceptance suite: one test per criterion, one printed PASS/FAIL line each.

Criteria 8-10 train real models on the synthetic dataset at desk scale, so
this module takes minutes. Run as
``pytest tests/test_acceptance.py -v -s``.
"""

import time

import numpy as np
import pytest
import torch

from hiervad import memory
from hiervad.blocks import cosine_score
from hiervad.config import ArchitectureSpec, BlockSpec, StackSpec, StreamSpec
from hiervad.hierarchy import VideoAnomalyModel, set_tolerance
from hiervad.presets import preset
from hiervad.scoring import evaluate, frame_auc, normalize_scores, psnr_score
from hiervad.synthetic import GeneratorConfig, generate_synthetic
from hiervad.training import (
    LossConfig,
    batch_losses,
    build_training_samples,
    default_schedule,
    train,
    train_progressive,
)
from oracles import naive_psnr, naive_read, naive_update, pairwise_auc, relative_error

KERNELS = ("student_t_distance", "literal_dot")


def report(number: int, name: str, passed: bool, detail: str = "") -> None:
    status = "PASS" if passed else "FAIL"
    suffix = f" ({detail})" if detail else ""
    print(f"\nACCEPTANCE {number:2d} {name}: {status}{suffix}", flush=True)


def micro_spec(stacks, frame=(16, 16), window=2, tolerance_map=None, patterns=4, **kw):
    stream_specs = {
        "appearance": StreamSpec(
            stacks=tuple(
                StackSpec(
                    blocks=tuple(
                        BlockSpec(size_class=None, hidden_layers=4, pattern_count=patterns)
                        for _ in range(n_blocks)
                    ),
                    degree=i + 1,
                )
                for i, n_blocks in enumerate(stacks)
            )
        )
    }
    kw.setdefault("base_channels", 4)
    kw.setdefault("n_scales", 2)
    kw.setdefault("siamese_hidden", 16)
    kw.setdefault("siamese_dim", 8)
    spec = ArchitectureSpec(
        streams=stream_specs, frame_size=frame, window=window, motion_window=window,
        fusion_weights={"appearance": 1.0},
        tolerance_map=tolerance_map or {1: tuple(range(len(stacks)))}, **kw,
    )
    spec.validate()
    return spec


# -------------------------------------------------------------------------
# criterion 1: attention weights are stochastic in the right direction
# -------------------------------------------------------------------------
def test_criterion_1_attention_stochasticity():
    rng = np.random.default_rng(101)
    started = time.monotonic()
    worst = 0.0
    for _ in range(100):
        m, n, c = (int(v) for v in rng.integers(1, 12, size=3))
        queries = torch.tensor(rng.uniform(-1, 1, size=(m, c)))
        patterns = torch.tensor(rng.uniform(0.01, 0.99, size=(n, c)))
        for kernel in KERNELS:
            _, read_w = memory.read(patterns, queries, kernel)
            scores = memory.attention_scores(queries, patterns, kernel)
            update_w = scores / scores.sum(dim=0, keepdim=True)
            worst = max(
                worst,
                float((read_w.sum(dim=-1) - 1).abs().max()),
                float((update_w.sum(dim=0) - 1).abs().max()),
            )
            assert (read_w >= 0).all() and (update_w >= 0).all()
    elapsed = time.monotonic() - started
    ok = worst < 1e-6 and elapsed < 10.0
    report(1, "attention stochasticity", ok, f"max dev {worst:.2e}, {elapsed:.1f}s")
    assert worst < 1e-6
    assert elapsed < 10.0


# -------------------------------------------------------------------------
# criterion 2: read/update match naive oracles
# -------------------------------------------------------------------------
def test_criterion_2_memory_oracle_equivalence():
    rng = np.random.default_rng(202)
    worst = 0.0
    for i in range(50):
        m, n, c = (int(v) for v in rng.integers(1, 8, size=3))
        queries = torch.tensor(rng.uniform(-1, 1, size=(m, c)))
        patterns = torch.tensor(rng.uniform(0.05, 0.95, size=(n, c)))
        kernel = KERNELS[i % 2]
        got_recon, got_w = memory.read(patterns, queries, kernel)
        ref_recon, ref_w = naive_read(patterns.numpy(), queries.numpy(), kernel)
        got_update = memory.update(patterns, queries, kernel)
        ref_update = naive_update(patterns.numpy(), queries.numpy(), kernel)
        worst = max(
            worst,
            float(np.abs(got_recon.numpy() - ref_recon).max()),
            float(np.abs(got_w.numpy() - ref_w).max()),
            float(np.abs(got_update.numpy() - ref_update).max()),
        )
    ok = worst < 1e-6
    report(2, "memory oracle equivalence", ok, f"max dev {worst:.2e}")
    assert ok


# -------------------------------------------------------------------------
# criterion 3: analytic gradients of the total loss vs central differences
# -------------------------------------------------------------------------
def test_criterion_3_gradient_check():
    torch.manual_seed(303)
    spec = micro_spec(stacks=(2,))
    model = VideoAnomalyModel(spec).double()
    rng = np.random.default_rng(303)
    x = {"appearance": torch.tensor(rng.uniform(size=(3, 2, 16, 16)))}
    y = {"appearance": torch.tensor(rng.uniform(size=(3, 1, 16, 16)))}
    cfg = LossConfig(lambda_diversity=0.13, lambda_siamese=0.28)

    def loss_value() -> float:
        total, _, _ = batch_losses(model, x, y, cfg)
        return float(total.detach())

    model.zero_grad(set_to_none=True)
    total, _, _ = batch_losses(model, x, y, cfg)
    total.backward()

    params = [(name, p) for name, p in model.named_parameters()]
    entries = []
    per_param = max(1, 220 // len(params))
    for name, p in params:
        flat = p.detach().reshape(-1)
        count = min(per_param, flat.numel())
        for j in rng.choice(flat.numel(), size=count, replace=False):
            entries.append((name, p, int(j)))
    assert len(entries) >= 200

    h = 1e-5
    worst = 0.0
    for name, p, j in entries:
        analytic = 0.0 if p.grad is None else float(p.grad.reshape(-1)[j])
        with torch.no_grad():
            original = float(p.reshape(-1)[j])
            p.reshape(-1)[j] = original + h
            up = loss_value()
            p.reshape(-1)[j] = original - h
            down = loss_value()
            p.reshape(-1)[j] = original
        fd = (up - down) / (2 * h)
        worst = max(worst, float(relative_error(analytic, fd)))
    ok = worst < 1e-4
    report(3, "gradient check vs finite differences", ok,
           f"{len(entries)} entries, max rel err {worst:.2e}")
    assert ok


# -------------------------------------------------------------------------
# criterion 4: residual telescoping and exact prediction integration
# -------------------------------------------------------------------------
def test_criterion_4_residual_telescoping():
    torch.manual_seed(404)
    spec = micro_spec(stacks=(3,))
    model = VideoAnomalyModel(spec).double()
    x = torch.rand(2, 2, 16, 16, dtype=torch.float64)
    out = model({"appearance": x})["appearance"]
    assert len(out.block_outputs) == 3
    telescoped = x - sum(o.reconstruction for _, _, o in out.block_outputs)
    residual_dev = float((out.final_residual - telescoped).abs().max())
    pred = out.block_outputs[0][2].prediction
    for _, _, o in out.block_outputs[1:]:
        pred = pred + o.prediction
    exact = bool(torch.equal(out.prediction, pred))
    ok = residual_dev < 1e-5 and exact
    report(4, "residual telescoping", ok, f"residual dev {residual_dev:.2e}, sum exact={exact}")
    assert residual_dev < 1e-5
    assert exact


# -------------------------------------------------------------------------
# criterion 5: masking semantics and progressive freezing
# -------------------------------------------------------------------------
def test_criterion_5_masking_semantics():
    torch.manual_seed(505)
    spec3 = micro_spec(stacks=(1, 1, 1), tolerance_map={1: (0, 1, 2)})
    model3 = VideoAnomalyModel(spec3).double()
    spec2 = micro_spec(stacks=(1, 1), tolerance_map={1: (0, 1)})
    model2 = VideoAnomalyModel(spec2).double()
    dst = model2.streams["appearance"].stacks
    src = model3.streams["appearance"].stacks
    dst[0].load_state_dict(src[0].state_dict())
    dst[1].load_state_dict(src[2].state_dict())
    x = torch.rand(2, 2, 16, 16, dtype=torch.float64)
    masked = model3.forward({"appearance": x}, masks={"appearance": [False, True, False]})
    removed = model2({"appearance": x})
    identical = bool(
        torch.equal(masked["appearance"].prediction, removed["appearance"].prediction)
        and torch.equal(
            masked["appearance"].final_residual, removed["appearance"].final_residual
        )
    )

    # progressive phase: frozen stack must see exactly zero gradient
    spec = micro_spec(stacks=(1, 1), tolerance_map={1: (0,), 2: (0, 1)})
    torch.manual_seed(506)
    model = VideoAnomalyModel(spec)
    rng = np.random.default_rng(506)
    from hiervad.data import Video

    videos = [
        Video("v", rng.uniform(size=(14, 16, 16)).astype(np.float32), [[1]] * 14, "train")
    ]
    datasets = {1: build_training_samples(videos, spec), 2: build_training_samples(videos, spec)}
    cfg = LossConfig(epochs=1, learning_rate=1e-3)
    schedule = default_schedule(spec)
    train_progressive(model, datasets, schedule[:1], cfg, seed=506)
    frozen_before = [
        p.detach().clone() for p in model.streams["appearance"].stacks[0].parameters()
    ]
    train_progressive(model, datasets, schedule[1:], cfg, seed=507)
    frozen_unchanged = all(
        torch.equal(a, b.detach())
        for a, b in zip(frozen_before, model.streams["appearance"].stacks[0].parameters())
    )
    zero_grad = all(
        p.grad is None or bool(torch.all(p.grad == 0))
        for p in model.streams["appearance"].stacks[0].parameters()
    )
    ok = identical and frozen_unchanged and zero_grad
    report(5, "masking semantics", ok,
           f"bypass-identical={identical}, frozen-unchanged={frozen_unchanged}, "
           f"zero-grad={zero_grad}")
    assert identical and frozen_unchanged and zero_grad


# -------------------------------------------------------------------------
# criterion 6: siamese cosine contract
# -------------------------------------------------------------------------
def test_criterion_6_siamese_contract():
    torch.manual_seed(606)
    spec = micro_spec(stacks=(1,))
    model = VideoAnomalyModel(spec).double()
    block = model.streams["appearance"].stacks[0].blocks[0]
    q = torch.rand(4, block.query_count, block.query_dim, dtype=torch.float64)
    _, _, self_score = block.siamese(q, q.clone())
    self_ok = float((self_score - 1).abs().max()) < 1e-6

    rng = np.random.default_rng(606)
    worst_sym = worst_scale = 0.0
    for _ in range(100):
        f = torch.tensor(rng.normal(size=(1, 16)))
        g = torch.tensor(rng.normal(size=(1, 16)))
        s = float(cosine_score(f, g))
        worst_sym = max(worst_sym, abs(s - float(cosine_score(g, f))))
        c = float(rng.uniform(0.1, 50))
        worst_scale = max(worst_scale, abs(s - float(cosine_score(c * f, c * g))))
    ok = self_ok and worst_sym < 1e-6 and worst_scale < 1e-6
    report(6, "siamese contract", ok,
           f"self=1 ok={self_ok}, sym dev {worst_sym:.2e}, scale dev {worst_scale:.2e}")
    assert ok


# -------------------------------------------------------------------------
# criterion 7: scoring oracles
# -------------------------------------------------------------------------
def test_criterion_7_scoring_oracle():
    rng = np.random.default_rng(707)
    worst_psnr = 0.0
    for _ in range(50):
        pred = rng.uniform(0.01, 1.0, size=(1, 8, 8))
        target = rng.uniform(0.0, 1.0, size=(1, 8, 8))
        worst_psnr = max(worst_psnr, abs(psnr_score(pred, target) - naive_psnr(pred, target)))
    auc_exact = True
    for _ in range(20):
        n = int(rng.integers(6, 51))
        scores = np.round(rng.uniform(size=n), 2)
        labels = rng.integers(0, 2, size=n)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        if frame_auc((scores, labels)) != pairwise_auc(scores, labels):
            auc_exact = False
    ok = worst_psnr < 1e-8 and auc_exact
    report(7, "scoring oracle", ok, f"psnr dev {worst_psnr:.2e}, auc exact={auc_exact}")
    assert worst_psnr < 1e-8
    assert auc_exact


# -------------------------------------------------------------------------
# desk-scale training analogs (criteria 8-10)
# -------------------------------------------------------------------------
TRAIN_BUDGET_SECONDS = 30 * 60
GEN_CONFIG = GeneratorConfig(
    frames_per_video=80,
    train_videos={1: 20, 2: 10, 3: 10},
    test_videos=10,
    event_frames=24,
    seed=7,
)


@pytest.fixture(scope="module")
def synth():
    return generate_synthetic(GEN_CONFIG)


def test_criterion_8_detection_analog(synth):
    spec = preset("ped2")
    torch.manual_seed(0)
    model = VideoAnomalyModel(spec)
    samples = build_training_samples(synth.train[1], spec)
    started = time.monotonic()
    train(model, samples, LossConfig(epochs=3, learning_rate=3e-4), seed=0)
    train_seconds = time.monotonic() - started
    _, summary = evaluate(model, synth.test, degree=1)
    auc = summary["auc"]
    ok = auc >= 0.85 and train_seconds < TRAIN_BUDGET_SECONDS
    report(8, "degree-1 detection analog", ok,
           f"AUC {auc:.4f} (>=0.85), trained {train_seconds/60:.1f} min")
    assert train_seconds < TRAIN_BUDGET_SECONDS
    assert auc >= 0.85


def test_criterion_9_flexible_detection_analog(synth):
    spec = preset("toy3")
    torch.manual_seed(0)
    model = VideoAnomalyModel(spec)
    datasets = {d: build_training_samples(v, spec) for d, v in synth.train.items()}
    cfg = LossConfig(epochs=5, learning_rate=3e-4)
    train_progressive(model, datasets, default_schedule(spec), cfg, seed=0)

    aucs = {}
    series_by_tol = {}
    for degree in (1, 2, 3):
        model.apply_tolerance(degree)
        series, summary = evaluate(model, synth.test, degree=degree)
        aucs[degree] = summary["auc"]
        series_by_tol[degree] = series

    wins = total = 0
    for s1, s2, video in zip(series_by_tol[1], series_by_tol[2], synth.test):
        for i, frame in enumerate(s1.frame_indices):
            classes = video.classes_per_frame[frame]
            if 2 in classes and 3 not in classes:  # degree-2 normal frames
                total += 1
                if s1.scores[i] > s2.scores[i]:
                    wins += 1
    win_rate = wins / total
    ok = win_rate >= 0.90 and all(aucs[d] >= 0.80 for d in (1, 2, 3))
    report(9, "flexible-detection analog", ok,
           f"AUCs d1={aucs[1]:.3f} d2={aucs[2]:.3f} d3={aucs[3]:.3f} (>=0.80), "
           f"tol1>tol2 on degree-2 normals {win_rate:.3f} (>=0.90)")
    for degree in (1, 2, 3):
        assert aucs[degree] >= 0.80, f"degree {degree} AUC {aucs[degree]:.3f}"
    assert win_rate >= 0.90


def test_criterion_10_ablation_directions(synth):
    from hiervad.hierarchy import build_spec

    variants = {
        "full": {},
        "no_siamese": {"use_siamese": False},
        "no_patterns": {"use_memory": False},
        "no_diversity": {},
    }
    train_videos = synth.train[1][:12]
    aucs = {}
    for name, overrides in variants.items():
        spec = build_spec({"appearance": [["s", "s"]]}, fusion_weights={"appearance": 1.0})
        for key, value in overrides.items():
            setattr(spec, key, value)
        torch.manual_seed(0)
        model = VideoAnomalyModel(spec)
        samples = build_training_samples(train_videos, spec)
        cfg = LossConfig(
            epochs=3,
            learning_rate=3e-4,
            lambda_siamese=0.0 if name == "no_siamese" else 0.28,
            lambda_diversity=0.0 if name in ("no_diversity", "no_patterns") else 0.13,
        )
        train(model, samples, cfg, seed=0)
        _, summary = evaluate(model, synth.test, degree=1)
        aucs[name] = summary["auc"]
    best_other = max(v for k, v in aucs.items() if k != "full")
    ok = aucs["full"] >= best_other - 0.01
    detail = ", ".join(f"{k}={v:.3f}" for k, v in aucs.items())
    report(10, "ablation direction check", ok, detail)
    assert ok, aucs
