"""Smoke test for the pyptychodip extension.

Build and install first, e.g.

    pip install maturin
    maturin build --release -m crates/python/Cargo.toml
    pip install target/wheels/pyptychodip-*.whl

then run `python python/smoke_test.py [path/to/model.dipm]`.
"""

import cmath
import math
import os
import sys

import pyptychodip as pd


def blob(h, w):
    cy, cx = (h - 1) / 2, (w - 1) / 2
    return [
        math.exp(-((r - cy) ** 2 + (c - cx) ** 2) / 18.0)
        for r in range(h)
        for c in range(w)
    ]


def close(a, b, tol):
    return all(abs(x - y) <= tol for x, y in zip(a, b))


def main():
    op = pd.Operator(28, 28)
    print(op)
    assert op.object_dims == (47, 47)
    assert op.ptychograph_dims == (20, 20, 9, 9)
    assert op.roi == (9, 9, 28, 28)

    image = blob(28, 28)
    obj = op.embed(image)
    x = op.forward(obj)
    back = op.inverse(x)
    assert close(back, obj, 1e-10), "pseudoinverse round trip"
    assert close([z.real for z in op.crop(back)], image, 1e-10)

    amps = op.amplitudes(image)
    assert close(amps, [abs(z) for z in x], 1e-12)

    # AP and DM from the same random start
    for method in ("AP", "DM"):
        rec = op.reconstruct(amps, method=method, iterations=30, seed=1, truth=image)
        assert len(rec) == 31 and rec.iterations[0] == 0
        assert rec.e0[-1] < rec.e0[0], (method, rec.e0[0], rec.e0[-1])
        print(f"{method}: E0 {rec.e0[0]:.3f} -> {rec.e0[-1]:.3f}, PSNR {rec.psnr[-1]:.1f} dB")

    # E0 is blind to a global complex factor
    est = [z * cmath.exp(0.7j) * 2.5 for z in obj]
    value, gamma = pd.e0(obj, est, 47, 47)
    assert value < 1e-12 and abs(abs(gamma) - 0.4) < 1e-12

    assert abs(pd.bessel_i0(1.0) - 1.2660658777520084) < 1e-14
    phases = pd.sample_von_mises(2.0, 0.0, 20000, 3)
    r = math.hypot(sum(map(math.cos, phases)), sum(map(math.sin, phases))) / len(phases)
    assert abs(r - 0.6977746579640) < 0.02, r
    noisy = pd.add_phase_noise(x, 1.0, 5)
    assert close([abs(z) for z in noisy], [abs(z) for z in x], 1e-12)

    try:
        pd.Operator(28, 28, shift=0)
    except ValueError as e:
        print("rejected:", e)
    else:
        raise AssertionError("shift 0 accepted")

    model_path = sys.argv[1] if len(sys.argv) > 1 else "models/dip_vm.dipm"
    if os.path.exists(model_path):
        model = pd.Model.load(model_path)
        rec = op.reconstruct(
            amps, method="DIP", iterations=5, seed=1, model=model, truth=image, precision="f32"
        )
        print(f"DIP ({model.parameter_count} parameters): E0 {rec.e0[0]:.3f} -> {rec.e0[-1]:.3f}")
    else:
        print("no model at", model_path, "- skipping DIP")

    print("smoke test ok")


if __name__ == "__main__":
    main()
