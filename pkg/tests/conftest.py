import json

import numpy as np
import pytest

from oemb.data import write_video_features
from oemb.synthetic import concept_corpus


def write_dataset(root, n_train=60, n_valid=20, n_test=20, seed=0, d_w=8, d_v=12):
    """Concept corpus on disk: word table, VFEA files, one manifest per split, run config."""
    rng = np.random.default_rng(seed)
    n_concepts = 12
    words = [f"w{c}" for c in range(n_concepts)]
    word_vecs = rng.normal(size=(n_concepts, d_w))
    video_vecs = rng.normal(size=(n_concepts, d_v))
    with open(root / "words.txt", "w", encoding="utf-8") as fh:
        for w, v in zip(words, word_vecs):
            fh.write(w + " " + " ".join(repr(float(x)) for x in v) + "\n")
    (root / "feats").mkdir()
    counts = {"train": n_train, "valid": n_valid, "test": n_test}
    for split, n in counts.items():
        lines = []
        for i in range(n):
            concepts = rng.choice(n_concepts, size=2, replace=False)
            sid = f"{split}{i:03d}"
            frames = video_vecs[concepts].sum(axis=0) + 0.3 * rng.normal(
                size=(int(rng.integers(2, 6)), d_v))
            write_video_features(root / "feats" / f"{sid}.vfea", frames)
            lines.append(json.dumps({
                "id": sid, "split": split, "features": f"feats/{sid}.vfea",
                "tokens": [words[c] for c in concepts] + ["unk"],
                "activity_labels": [f"act{c} obj{c}" for c in concepts]}))
        (root / f"{split}.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")
    config = {"arch": "m1", "batch_size": 10, "d_e": 8, "d_a": 4, "monitor_size": 15,
              "max_epochs": 3, "patience": 2, "rng_seed": 3,
              "word_table": "words.txt", "train_manifest": "train.jsonl",
              "valid_manifest": "valid.jsonl", "test_manifest": "test.jsonl",
              "checkpoint_dir": "ckpt"}
    (root / "config.json").write_text(json.dumps(config), encoding="utf-8")
    return root / "config.json"


@pytest.fixture
def dataset(tmp_path):
    return write_dataset(tmp_path)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def concept_world():
    return concept_corpus(1, np.random.default_rng(0))[1]
