"""Smoke test for the ccl_py extension.

Build and install first:

    maturin build --release -m crates/python/Cargo.toml -o dist
    pip install dist/ccl_py-*.whl
    python python/smoke_test.py
"""

import math
import os
import tempfile

import ccl_py


def main():
    fs = ccl_py.synth(num_classes=3, per_class=100, dim=16, noise=0.1, cooc_rate=0.2, seed=1)
    assert len(fs) == 300 and fs.dim == 16
    assert sorted(set(fs.label)) == [0, 1, 2]

    partitions, counts = ccl_py.finch(fs.features)
    assert len(partitions) == len(counts) >= 2
    assert all(a > b for a, b in zip(counts, counts[1:]))
    print("finch cluster counts", counts)

    labels = ccl_py.ward_hac(fs.normalized().features, 3)
    assert ccl_py.wcp(labels, fs.label) > 0.95
    p, r, f = ccl_py.bcubed(labels, fs.label)
    assert 0.0 < f <= 1.0 and math.isclose(f, 2 * p * r / (p + r))
    assert ccl_py.wcp([0, 0, 1, 1, 1], [0, 1, 1, 1, 0]) == 0.6

    km = ccl_py.kmeans(fs.normalized().features, 3, seed=0)
    assert ccl_py.wcp(km, fs.label) > 0.95

    assert ccl_py.contrastive_loss([0.0, 0.0], [0.3, 0.4], 1) == 0.5 * 0.5 ** 2
    assert ccl_py.contrastive_loss([0.0, 0.0], [0.3, 0.4], 0) == 0.5 * 0.5 ** 2

    cfg = ccl_py.PipelineConfig()
    cfg.set("train.epochs", 4)
    cfg.set("model.hidden_dim", 32)
    cfg.set("pipeline.seed", 3)
    with tempfile.TemporaryDirectory() as out:
        cfg.set("paths.output_dir", out)
        report = ccl_py.run_pipeline(fs, cfg)
        print("base acc %.4f  ccl acc %.4f" % (report["base"]["acc"], report["ccl"]["acc"]))
        assert len(report["labels"]) == len(fs)
        assert report["ccl"]["acc"] == ccl_py.wcp(report["labels"], fs.label)

        model = ccl_py.SiameseModel.load(os.path.join(out, "model.ccl"))
        assert (model.input_dim, model.hidden_dim) == (16, 32)
        emb = model.embed(fs)
        assert emb.dim == 32 and emb.label == fs.label
        _, relabeled, scores = ccl_py.cluster(emb, 3)
        assert relabeled == report["labels"]
        assert scores["acc"] == report["ccl"]["acc"]

        path = os.path.join(out, "fs.ccl")
        fs.save(path)
        again = ccl_py.FeatureSet.load(path)
        assert again.features == fs.features and again.track_id == fs.track_id

    try:
        cfg.set("pipeline.partition_index", 50)
        ccl_py.run_pipeline(fs, cfg)
    except ValueError as e:
        assert "L = " in str(e)
    else:
        raise AssertionError("expected an out-of-range partition error")

    print("ok")


if __name__ == "__main__":
    main()
