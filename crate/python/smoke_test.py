"""Build the extension module and exercise it from Python.

Usage: python3 python/smoke_test.py [--no-build]
"""

import math
import pathlib
import shutil
import subprocess
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def build(dest):
    subprocess.run(
        [
            "cargo",
            "build",
            "--release",
            "-p",
            "facestyle-py",
            "--features",
            "extension-module",
        ],
        cwd=ROOT,
        check=True,
    )
    lib = ROOT / "target" / "release" / "libpyfacestyle.so"
    shutil.copy(lib, dest / "pyfacestyle.so")


def close(a, b, tol=1e-12):
    return abs(a - b) <= tol * max(1.0, abs(b))


def main():
    here = pathlib.Path(__file__).resolve().parent
    if "--no-build" not in sys.argv:
        build(here)
    sys.path.insert(0, str(here))
    import pyfacestyle as fs

    sched = fs.NoiseSchedule()
    abars = sched.alpha_bars()
    assert len(abars) == 1000
    assert all(b < a for a, b in zip(abars, abars[1:]))
    assert sched.plan(10) == [999 - 100 * i for i in range(10)]
    print("alpha_bar[999] =", abars[999])

    f = fs.residual_contraction_factor(0.25, 0.1)
    assert close(f, 0.4, 1e-15), f
    assert close(fs.stability_bound(0.25), 1.0 / 3.0)
    assert close(fs.stability_bound(0.25, "mean", 4), 4.0 / 3.0)

    # one refinement contracts the residual by exactly the factor
    z = fs.Latent((1, 1, 3), [0.3, -0.2, 0.5])
    eps = fs.Latent((1, 1, 3), [0.1, 0.4, -0.3])
    xc = fs.Latent((1, 1, 3), [0.0, 0.1, 0.2])
    x0 = fs.estimate_x0(z, eps, 0.25)
    grad = fs.content_loss_grad(x0, xc, 0.25)
    x0r = fs.estimate_x0(z, fs.refine_noise(eps, grad, 0.1), 0.25)
    pre = [a - b for a, b in zip(x0.tolist(), xc.tolist())]
    post = [a - b for a, b in zip(x0r.tolist(), xc.tolist())]
    assert all(abs(q - f * p) < 1e-12 for p, q in zip(pre, post))

    target = fs.Latent((3, 4, 4), [math.sin(i) * 0.8 for i in range(48)])
    pm = fs.Predictor.point_mass(target)
    start = fs.Latent((3, 4, 4), [math.cos(i) for i in range(48)])
    latents, losses = fs.sample(start, pm, sched, 10, target)
    assert len(latents) == 11 and len(losses) == 10
    assert max(abs(a - b) for a, b in zip(latents[-1].tolist(), target.tolist())) < 1e-8

    zt = fs.invert(target, pm, sched)
    back, _ = fs.sample(zt, pm, sched, 6, target, 0.0)
    assert max(abs(a - b) for a, b in zip(back[-1].tolist(), target.tolist())) < 1e-8

    assert fs.face_area_category((0, 0, 0, 10, 10), 100, 100) == (0.01, 1)
    assert fs.face_area_category((0, 0, 0, 40, 50), 100, 100) == (0.2, 2)
    assert fs.face_area_category((0, 0, 0, 50, 50), 100, 100)[1] == 3
    assert close(fs.cosine_similarity([1.0, 0.0], [1.0, 1.0]), math.sqrt(0.5))
    assert close(fs.improvement_percent(0.32, 0.169), 89.349112426035, 1e-9)
    assert fs.improvement_percent(0.5, 0.0) is None

    img, boxes = fs.synth_fixture(3, 96, 96, 2, 12, 24)
    assert len(boxes) == 2
    assert 'factor = 8' in fs.PipelineConfig().to_toml()
    cfg = fs.PipelineConfig('[codec]\nmode = "identity"\n')
    plain = cfg.stylize(img)
    mosaic = cfg.stylize(img, boxes=boxes)
    assert plain.psnr(img) > 60.0 and mosaic.psnr(img) > 40.0

    rec = fs.score_image("img", "s", img, mosaic, boxes)
    noise = fs.Image(96, 96, 3, [0.5 + 0.1 * math.sin(i * 0.37) for i in range(96 * 96 * 3)])
    base = fs.score_image("img", "s", img, noise, boxes)
    report = fs.build_report([rec], [base], "mosaic", "noise")
    assert "improvement_pct" in report.to_csv()
    (cat, style, cand, _, _), = report.rows()
    assert cat == rec.category and style == "s" and cand > 0.9

    with tempfile.TemporaryDirectory() as tmp:
        p = pathlib.Path(tmp) / "x.png"
        img.save(str(p))
        again = fs.Image.load(str(p))
        assert (again.width, again.height, again.channels) == (96, 96, 3)

    try:
        fs.Latent((1, 2, 2), [0.0])
    except ValueError as e:
        assert "4" in str(e) or "length" in str(e), e
    else:
        raise AssertionError("shape mismatch accepted")

    print("smoke test ok")


if __name__ == "__main__":
    main()
