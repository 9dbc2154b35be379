"""Shared fixtures: a small synthetic dataset and a briefly trained teacher.

Both are session-scoped because synthesis and training dominate test time;
every test treats them as read-only.
"""

import pytest

from mattelab import distill, synth


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("tinyset")
    cfg = synth.SynthConfig(size=64, clip_len=3, num_clips=6, num_test_clips=3,
                            occlusion_ratio=0.5, seed=3)
    records = synth.synth_dataset(cfg, str(root))
    return {
        "root": str(root),
        "manifest": str(root / "manifest.jsonl"),
        "cfg": cfg,
        "records": records,
    }


@pytest.fixture(scope="session")
def tiny_teacher(tiny_dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny_teacher")
    cfg = distill.TrainConfig(steps=25, batch_size=2, clip_len=3, lr=1e-3,
                              seed=5, ckpt_every=10)
    path = distill.train_stage1(tiny_dataset["manifest"], str(out), cfg)
    return {"ckpt": path, "out": str(out), "cfg": cfg}
