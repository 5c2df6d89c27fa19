use pyo3::prelude::*;
use pyo3::types::PyDict;

fn run(code: &str) {
    Python::attach(|py| {
        let module = pyo3::wrap_pymodule!(pyfacestyle::pyfacestyle)(py);
        let globals = PyDict::new(py);
        globals.set_item("fs", module).unwrap();
        let code = std::ffi::CString::new(code).unwrap();
        py.run(&code, Some(&globals), None)
            .unwrap_or_else(|e| panic!("{e}"));
    });
}

#[test]
fn schedule_and_factor() {
    run(r#"
s = fs.NoiseSchedule()
assert s.plan(4) == [999, 749, 499, 249]
assert abs(fs.residual_contraction_factor(0.25, 0.1) - 0.4) < 1e-15
assert fs.stability_bound(0.5) == 1.0
"#);
}

#[test]
fn errors_map_to_python_exceptions() {
    run(r#"
for bad, exc in [
    (lambda: fs.Latent((1, 2, 2), [0.0]), ValueError),
    (lambda: fs.content_loss(fs.Latent.zeros((1, 1, 1)), fs.Latent.zeros((1, 1, 1)), "max"), ValueError),
    (lambda: fs.Image.load("/nonexistent/x.png"), OSError),
    (lambda: fs.cosine_similarity([0.0, 0.0], [1.0, 0.0]), ValueError),
]:
    try:
        bad()
    except exc:
        pass
    else:
        raise AssertionError("no error")
"#);
}

#[test]
fn guided_sampling_reports_losses() {
    run(r#"
import math
s = fs.NoiseSchedule()
c = fs.Latent((1, 3, 3), [math.sin(i) for i in range(9)])
st = fs.Latent((1, 3, 3), [math.cos(i) for i in range(9)])
p = fs.Predictor.style_pull(c, st, 0.5)
lat, losses = fs.sample(fs.Latent.zeros((1, 3, 3)), p, s, 5, c, 0.25, "sum", True)
assert len(lat) == 6 and len(losses) == 5
plain, none = fs.sample(fs.Latent.zeros((1, 3, 3)), p, s, 5, c)
assert fs.content_loss(lat[-1], c) < fs.content_loss(plain[-1], c)
"#);
}
