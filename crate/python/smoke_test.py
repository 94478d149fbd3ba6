"""Smoke test for the pyactmax extension module.

Build and install first:
    pip install maturin
    maturin build --release -m crates/python/Cargo.toml
    pip install target/wheels/pyactmax-*.whl
"""

import math
import os
import tempfile

import pyactmax


def main():
    t = pyactmax.Tensor([1, 2, 2], [0.0, 0.5, 0.5, 1.0])
    assert t.shape == [1, 2, 2]
    assert t.tolist() == [0.0, 0.5, 0.5, 1.0]
    assert math.isclose(pyactmax.total_variation(t), 1.0 + 0.5 * math.sqrt(2.0))

    data = pyactmax.generate_dataset("sharp_square", 32, 32, train=16, val=8, test=4, seed=3)
    assert [len(data[s]) for s in ("train", "val", "test")] == [16, 8, 4]
    assert sum(label for _, label in data["train"]) == 8
    image = data["train"][0][0]
    assert image.shape == [1, 32, 32]
    assert 0.0 <= image.min() and image.max() <= 1.0

    model, metrics = pyactmax.train(data["train"], data["val"], batch_size=8, max_epochs=2)
    assert len(metrics) == 2
    assert all(math.isfinite(m["val_loss"]) for m in metrics)
    assert model.conv_filters == [8, 16, 32, 64, 64]
    assert model.predict(image) in (0, 1)

    f, grad = model.channel_objective_grad(image, 3, 0)
    assert grad.shape == image.shape
    assert math.isclose(f, model.channel_objective(image, 3, 0))

    result = pyactmax.ascend(model, 2, 1, lam=10.0, iterations=20, transforms=["jitter", "tv_denoise"],
                             transform_every=5)
    assert len(result.trace) == 20
    assert result.final[3] > result.trace[0][3]
    assert result.trace_table().startswith("iteration\tf\tR\ttotal")

    baseline = pyactmax.random_baseline(model, 2, count=20, seed=1)
    assert len(baseline) == 16 and all(len(v) == 20 for v in baseline)

    noisy = pyactmax.apply_transform("rotation", image, seed=1)
    assert noisy.shape == image.shape
    clean = pyactmax.switching_bilateral_filter(image, threshold=1.0)
    assert clean.tolist() == image.tolist()
    smooth = pyactmax.tv_denoise(image, weight=0.1, steps=10)
    assert pyactmax.total_variation(smooth) <= pyactmax.total_variation(image)

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "model.bin")
        model.save(path)
        loaded = pyactmax.Model.load(path)
        assert loaded.logit(image) == model.logit(image)
        assert loaded.metadata["epochs_run"] == 2

    try:
        model.channel_objective(image, 6, 0)
    except ValueError as e:
        assert "layer" in str(e)
    else:
        raise AssertionError("layer 6 accepted")

    print("pyactmax smoke test passed")


if __name__ == "__main__":
    main()
