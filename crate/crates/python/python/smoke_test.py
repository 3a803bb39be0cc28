"""Smoke test for the pyrectiflow extension: train, sample, measure."""

import math
import tempfile

import pyrectiflow as rf


def main():
    sched = rf.NoiseSchedule()
    assert sched.steps == 1000
    assert sched.alpha_bar(0) == 1.0
    assert 0.0 < sched.alpha_bar(1000) < 1e-4

    line = [[float(i), 2.0 * i] for i in range(5)]
    assert abs(rf.straightness(line) - 1.0) < 1e-12
    times = [i / 4 for i in range(5)]
    assert abs(rf.kinetic_energy(line, times) - 80.0) < 1e-9
    assert abs(rf.second_derivative(line, times)) < 1e-9

    data = rf.toy_data("two_gaussians", 2000, seed=0)
    assert len(data) == 2000 and len(data[0]) == 2
    assert abs(rf.frechet_distance(data[:1000], data[:1000])) < 1e-6

    model = rf.train("flow", data, steps=300, batch_size=128, learning_rate=1e-3, seed=0)
    assert model.paradigm == "flow"
    assert model.item_shape == [2]
    assert len(model.losses) == 300
    assert model.losses[-1] < model.losses[0]

    samples = model.sample("euler", steps=20, count=500, seed=1)
    assert len(samples) == 500
    assert all(math.isfinite(v) for s in samples for v in s)
    fd_trained = rf.frechet_distance(samples, data[1000:1500])
    noise = rf.Model("flow").sample("euler", steps=20, count=500, seed=1)
    fd_untrained = rf.frechet_distance(noise, data[1000:1500])
    assert fd_trained < fd_untrained, (fd_trained, fd_untrained)

    c = model.curvature(steps=20, n=20, seed=2)
    assert c["mean"] >= 1.0 and c["degenerate"] == 0

    with tempfile.TemporaryDirectory() as d:
        model.save(d)
        again = rf.Model.load(d)
        assert again.sample("euler", steps=20, count=8, seed=1) == samples[:8]

    try:
        model.sample("ddim", steps=10, count=4)
    except ValueError:
        pass
    else:
        raise AssertionError("ddim on a flow model should fail")

    print(f"ok: FD trained {fd_trained:.4f}, untrained {fd_untrained:.4f}, C {c['mean']:.4f}")


if __name__ == "__main__":
    main()
