"""Smoke test for the spikehar Python extension.

Build and install first:
    pip install --no-build-isolation ./crates/python
"""

import math
import tempfile
from pathlib import Path

import spikehar


def check_neuron():
    cfg = spikehar.LifConfig(tau=0.75, v_th=0.5, reset="soft")
    trace = spikehar.lif_forward([[0.7], [0.1], [0.6]], cfg)
    # v_pre = 0.7 -> spike, 0.75*0.2 + 0.1 = 0.25, 0.75*0.25 + 0.6 = 0.7875 -> spike
    assert trace["spikes"] == [[1.0], [0.0], [1.0]], trace
    grad = spikehar.lif_backward([[0.0], [1.0], [0.0]], [[0.7], [0.1], [0.6]], cfg)
    assert grad[2] == [0.0], "gradient leaked backwards in time"
    assert grad[1][0] != 0.0
    assert spikehar.surrogate_grad([0.5, 0.0, 1.0, 0.75], 0.5) == [1.0, 0.0, 0.0, 0.5]
    assert math.isclose(spikehar.cosine_lr(30, 1e-3, 60), 5e-4)


def check_model():
    data = spikehar.Dataset.synthetic(classes=3, per_class=30, steps=32, channels=3, seed=1)
    train, val, test = data.prepare(split_seed=1000)
    assert len(train) + len(val) + len(test) == len(data) == 90

    snn = spikehar.Model.reference(3, 32, 3, neuron="lif", seed=1000)
    ann = spikehar.Model.reference(3, 32, 3, neuron="relu", seed=1000)
    assert snn.parameter_count == ann.parameter_count
    assert [n for n, _ in snn.op_counts()] == ["conv1d_1", "conv1d_2", "conv1d_3", "dense_1", "dense_2"]

    trained, history = spikehar.train(snn, train, val, epochs=3, batch_size=32, lr=1e-3, seed=1000)
    assert [h["epoch"] for h in history] == [1, 2, 3]
    acc = trained.evaluate(test)
    assert 0.0 <= acc <= 1.0
    preds = trained.predict([test.window(i) for i in range(4)])
    assert len(preds) == 4 and all(0 <= p < 3 for p in preds)

    sparsity = trained.sparsity(test)
    assert 0.0 <= sparsity["weighted_average"] <= 1.0
    energy = trained.energy(test)
    assert energy["ratio"] > 0.0
    assert math.isclose(ann.energy(test)["ratio"], 1.0)

    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "model.ckpt"
        trained.save(str(path))
        again = spikehar.Model.load(str(path))
        assert again.predict([test.window(0)]) == trained.predict([test.window(0)])
    print(f"test accuracy after 3 epochs: {acc:.3f}, spike sparsity {sparsity['weighted_average']:.3f}, "
          f"energy ratio {energy['ratio']:.3f}")


def check_errors():
    try:
        spikehar.LifConfig(tau=1.5)
    except ValueError:
        pass
    else:
        raise AssertionError("tau outside [0, 1] accepted")
    try:
        spikehar.Dataset.load_ucihar("/nonexistent")
    except OSError:
        pass
    else:
        raise AssertionError("missing dataset accepted")


if __name__ == "__main__":
    check_neuron()
    check_model()
    check_errors()
    print("ok")
