//! Python bindings for the facestyle core.
//!
//! Images and latents cross the boundary as small wrapper classes holding
//! flat row-major buffers; face boxes are `(id, x, y, w, h)` tuples.

use pyo3::prelude::*;

#[pyo3::pymodule]
pub mod pyfacestyle {
    use std::path::PathBuf;

    use facestyle::denoise::{
        GaussianPriorPredictor, NoisePredictor, PointMassPredictor, StylePullPredictor,
    };
    use facestyle::evalkit::{self, Embedder, EmbeddingVector, ToyEmbedder};
    use facestyle::guidance::{self, GuidanceConfig, LambdaScale, Reduction};
    use facestyle::mosaic::{BicubicUpscaler, FaceBox};
    use facestyle::pipeline::{self, Stylizer};
    use facestyle::{codec, imageio, sampler, schedule};
    use pyo3::exceptions::{PyArithmeticError, PyOSError, PyRuntimeError, PyValueError};

    use super::*;

    type BoxTuple = (u32, usize, usize, usize, usize);
    type ReportRow = (u8, String, Option<f64>, Option<f64>, Option<f64>);

    fn err(e: facestyle::Error) -> PyErr {
        use facestyle::Error as E;
        let msg = e.to_string();
        match e {
            E::Io { .. } => PyOSError::new_err(msg),
            E::Numerical { .. } => PyArithmeticError::new_err(msg),
            E::Shape(_)
            | E::Parameter(_)
            | E::Index { .. }
            | E::Config(_)
            | E::Degenerate(_)
            | E::Format { .. }
            | E::Manifest { .. } => PyValueError::new_err(msg),
            _ => PyRuntimeError::new_err(msg),
        }
    }

    fn parse_reduction(name: &str) -> PyResult<Reduction> {
        match name {
            "sum" => Ok(Reduction::Sum),
            "mean" => Ok(Reduction::Mean),
            other => Err(PyValueError::new_err(format!(
                "reduction must be 'sum' or 'mean', got {other:?}"
            ))),
        }
    }

    fn face_boxes(list: Vec<BoxTuple>) -> Vec<FaceBox> {
        list.into_iter()
            .map(|(id, x, y, w, h)| FaceBox::new(id, x, y, w, h))
            .collect()
    }

    fn box_tuples(list: &[FaceBox]) -> Vec<BoxTuple> {
        list.iter().map(|b| (b.id, b.x, b.y, b.w, b.h)).collect()
    }

    #[pyclass(name = "Latent", from_py_object)]
    #[derive(Clone)]
    struct PyLatent(facestyle::Latent);

    #[pymethods]
    impl PyLatent {
        #[new]
        fn new(dims: (usize, usize, usize), data: Vec<f64>) -> PyResult<Self> {
            facestyle::Latent::new(dims, data).map(Self).map_err(err)
        }

        #[staticmethod]
        fn zeros(dims: (usize, usize, usize)) -> Self {
            Self(facestyle::Latent::zeros(dims))
        }

        #[getter]
        fn dims(&self) -> (usize, usize, usize) {
            self.0.dims()
        }

        fn tolist(&self) -> Vec<f64> {
            self.0.as_slice().to_vec()
        }

        fn __len__(&self) -> usize {
            self.0.len()
        }

        fn __repr__(&self) -> String {
            format!("Latent(dims={:?})", self.0.dims())
        }
    }

    #[pyclass(name = "Image", from_py_object)]
    #[derive(Clone)]
    struct PyImage(imageio::Image);

    #[pymethods]
    impl PyImage {
        /// Values in `[0, 1]`, interleaved per pixel.
        #[new]
        fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> PyResult<Self> {
            imageio::Image::new(width, height, channels, data)
                .map(Self)
                .map_err(err)
        }

        #[staticmethod]
        fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
            Self(imageio::Image::filled(width, height, channels, value))
        }

        #[staticmethod]
        fn load(path: PathBuf) -> PyResult<Self> {
            imageio::load_image(&path).map(Self).map_err(err)
        }

        fn save(&self, path: PathBuf) -> PyResult<()> {
            imageio::save_image(&self.0, &path).map_err(err)
        }

        #[getter]
        fn width(&self) -> usize {
            self.0.width()
        }

        #[getter]
        fn height(&self) -> usize {
            self.0.height()
        }

        #[getter]
        fn channels(&self) -> usize {
            self.0.channels()
        }

        fn get(&self, x: usize, y: usize, c: usize) -> PyResult<f64> {
            if x >= self.0.width() || y >= self.0.height() || c >= self.0.channels() {
                return Err(PyValueError::new_err("pixel index out of range"));
            }
            Ok(self.0.get(x, y, c))
        }

        fn tolist(&self) -> Vec<f64> {
            self.0.as_slice().to_vec()
        }

        fn psnr(&self, other: &PyImage) -> PyResult<f64> {
            imageio::psnr(&self.0, &other.0).map_err(err)
        }

        fn __repr__(&self) -> String {
            format!(
                "Image({}x{}x{})",
                self.0.width(),
                self.0.height(),
                self.0.channels()
            )
        }
    }

    #[pyclass(name = "NoiseSchedule", from_py_object)]
    #[derive(Clone)]
    struct PyNoiseSchedule(schedule::NoiseSchedule);

    #[pymethods]
    impl PyNoiseSchedule {
        #[new]
        #[pyo3(signature = (num_train_steps=1000, beta_start=0.00085, beta_end=0.012, kind="scaled_linear"))]
        fn new(
            num_train_steps: usize,
            beta_start: f64,
            beta_end: f64,
            kind: &str,
        ) -> PyResult<Self> {
            let kind = match kind {
                "scaled_linear" => schedule::BetaKind::ScaledLinear,
                "linear" => schedule::BetaKind::Linear,
                other => {
                    return Err(PyValueError::new_err(format!(
                        "unknown schedule kind {other:?}"
                    )))
                }
            };
            schedule::NoiseSchedule::new(num_train_steps, beta_start, beta_end, kind)
                .map(Self)
                .map_err(err)
        }

        #[getter]
        fn num_train_steps(&self) -> usize {
            self.0.num_train_steps()
        }

        fn betas(&self) -> Vec<f64> {
            self.0.betas().to_vec()
        }

        fn alpha_bars(&self) -> Vec<f64> {
            self.0.alpha_bars().to_vec()
        }

        fn alpha_bar(&self, t: usize) -> PyResult<f64> {
            self.0.alpha_bar(t).map_err(err)
        }

        /// Descending timesteps of an inference plan.
        fn plan(&self, steps: usize) -> PyResult<Vec<usize>> {
            self.0
                .plan(steps)
                .map(|p| p.timesteps().to_vec())
                .map_err(err)
        }
    }

    enum Inner {
        PointMass(PointMassPredictor),
        StylePull(StylePullPredictor),
        GaussianPrior(GaussianPriorPredictor),
    }

    #[pyclass(name = "Predictor")]
    struct PyPredictor(Inner);

    impl PyPredictor {
        fn inner(&self) -> &dyn NoisePredictor {
            match &self.0 {
                Inner::PointMass(p) => p,
                Inner::StylePull(p) => p,
                Inner::GaussianPrior(p) => p,
            }
        }
    }

    #[pymethods]
    impl PyPredictor {
        #[staticmethod]
        fn point_mass(target: &PyLatent) -> Self {
            Self(Inner::PointMass(PointMassPredictor::new(target.0.clone())))
        }

        #[staticmethod]
        fn style_pull(content: &PyLatent, style: &PyLatent, gamma: f64) -> PyResult<Self> {
            StylePullPredictor::new(&content.0, &style.0, gamma)
                .map(|p| Self(Inner::StylePull(p)))
                .map_err(err)
        }

        #[staticmethod]
        fn gaussian_prior(mu: &PyLatent, sigma2: f64) -> PyResult<Self> {
            GaussianPriorPredictor::new(mu.0.clone(), sigma2)
                .map(|p| Self(Inner::GaussianPrior(p)))
                .map_err(err)
        }

        fn predict(
            &self,
            z: &PyLatent,
            t: usize,
            schedule: &PyNoiseSchedule,
        ) -> PyResult<PyLatent> {
            self.inner()
                .predict(&z.0, t, &schedule.0)
                .map(PyLatent)
                .map_err(err)
        }
    }

    #[pyfunction]
    fn estimate_x0(z: &PyLatent, eps: &PyLatent, alpha_bar: f64) -> PyResult<PyLatent> {
        guidance::estimate_x0(&z.0, &eps.0, alpha_bar)
            .map(PyLatent)
            .map_err(err)
    }

    #[pyfunction]
    #[pyo3(signature = (x0, content, reduction="sum"))]
    fn content_loss(x0: &PyLatent, content: &PyLatent, reduction: &str) -> PyResult<f64> {
        guidance::content_loss(&x0.0, &content.0, parse_reduction(reduction)?).map_err(err)
    }

    #[pyfunction]
    #[pyo3(signature = (x0, content, alpha_bar, reduction="sum"))]
    fn content_loss_grad(
        x0: &PyLatent,
        content: &PyLatent,
        alpha_bar: f64,
        reduction: &str,
    ) -> PyResult<PyLatent> {
        guidance::content_loss_grad(&x0.0, &content.0, alpha_bar, parse_reduction(reduction)?)
            .map(PyLatent)
            .map_err(err)
    }

    #[pyfunction]
    fn refine_noise(eps: &PyLatent, grad: &PyLatent, lambda_c: f64) -> PyResult<PyLatent> {
        guidance::refine_noise(&eps.0, &grad.0, lambda_c)
            .map(PyLatent)
            .map_err(err)
    }

    #[pyfunction]
    fn ddim_step(
        z: &PyLatent,
        eps: &PyLatent,
        alpha_bar: f64,
        alpha_bar_prev: f64,
    ) -> PyResult<PyLatent> {
        guidance::ddim_step(&z.0, &eps.0, alpha_bar, alpha_bar_prev)
            .map(PyLatent)
            .map_err(err)
    }

    #[pyfunction]
    #[pyo3(signature = (alpha_bar, lambda_c, reduction="sum", element_count=1))]
    fn residual_contraction_factor(
        alpha_bar: f64,
        lambda_c: f64,
        reduction: &str,
        element_count: usize,
    ) -> PyResult<f64> {
        guidance::residual_contraction_factor(
            alpha_bar,
            lambda_c,
            parse_reduction(reduction)?,
            element_count,
        )
        .map_err(err)
    }

    #[pyfunction]
    #[pyo3(signature = (alpha_bar, reduction="sum", element_count=1))]
    fn stability_bound(alpha_bar: f64, reduction: &str, element_count: usize) -> PyResult<f64> {
        Ok(guidance::stability_bound(
            alpha_bar,
            parse_reduction(reduction)?,
            element_count,
        ))
    }

    fn guidance_config(lambda_c: f64, reduction: &str, relative: bool) -> PyResult<GuidanceConfig> {
        let mut cfg = GuidanceConfig::new(lambda_c, parse_reduction(reduction)?).map_err(err)?;
        if relative {
            cfg.lambda_scale = LambdaScale::StabilityRelative;
        }
        Ok(cfg)
    }

    /// Guided sampling; returns `(latents z_T..z_0, per-step losses)`.
    #[pyfunction]
    #[pyo3(signature = (start, predictor, schedule, steps, content, lambda_c=0.0, reduction="sum", stability_relative=false))]
    #[allow(clippy::too_many_arguments)]
    fn sample(
        start: &PyLatent,
        predictor: &PyPredictor,
        schedule: &PyNoiseSchedule,
        steps: usize,
        content: &PyLatent,
        lambda_c: f64,
        reduction: &str,
        stability_relative: bool,
    ) -> PyResult<(Vec<PyLatent>, Vec<f64>)> {
        let cfg = guidance_config(lambda_c, reduction, stability_relative)?;
        let plan = schedule.0.plan(steps).map_err(err)?;
        let trace = sampler::sample(
            &start.0,
            predictor.inner(),
            &schedule.0,
            &plan,
            &content.0,
            &cfg,
        )
        .map_err(err)?;
        Ok((
            trace.latents.into_iter().map(PyLatent).collect(),
            trace.losses,
        ))
    }

    #[pyfunction]
    #[pyo3(signature = (content, predictor, schedule, steps=6, fixed_point_iters=2))]
    fn invert(
        content: &PyLatent,
        predictor: &PyPredictor,
        schedule: &PyNoiseSchedule,
        steps: usize,
        fixed_point_iters: usize,
    ) -> PyResult<PyLatent> {
        let cfg = sampler::InversionConfig {
            steps,
            fixed_point_iters,
        };
        sampler::invert(&content.0, predictor.inner(), &schedule.0, &cfg)
            .map(PyLatent)
            .map_err(err)
    }

    fn codec_config(pool: usize) -> codec::CodecConfig {
        if pool <= 1 {
            codec::CodecConfig::identity()
        } else {
            codec::CodecConfig::pool(pool)
        }
    }

    /// `pool` of 0 or 1 selects the identity codec.
    #[pyfunction]
    #[pyo3(signature = (image, pool=0))]
    fn encode(image: &PyImage, pool: usize) -> PyResult<PyLatent> {
        codec::encode(&image.0, &codec_config(pool))
            .map(PyLatent)
            .map_err(err)
    }

    #[pyfunction]
    #[pyo3(signature = (latent, pool=0))]
    fn decode(latent: &PyLatent, pool: usize) -> PyResult<PyImage> {
        codec::decode(&latent.0, &codec_config(pool))
            .map(PyImage)
            .map_err(err)
    }

    #[pyclass(name = "PipelineConfig", from_py_object)]
    #[derive(Clone)]
    struct PyPipelineConfig(facestyle::PipelineConfig);

    #[pymethods]
    impl PyPipelineConfig {
        #[new]
        #[pyo3(signature = (toml=None))]
        fn new(toml: Option<&str>) -> PyResult<Self> {
            match toml {
                Some(text) => facestyle::PipelineConfig::parse(text)
                    .map(Self)
                    .map_err(err),
                None => Ok(Self(facestyle::PipelineConfig::default())),
            }
        }

        #[staticmethod]
        fn load(path: PathBuf) -> PyResult<Self> {
            facestyle::PipelineConfig::load(&path)
                .map(Self)
                .map_err(err)
        }

        fn to_toml(&self) -> String {
            self.0.to_toml()
        }

        /// Stylize one image; with `boxes` the faces go through the mosaic path.
        #[pyo3(signature = (image, style=None, boxes=None))]
        fn stylize(
            &self,
            image: &PyImage,
            style: Option<&PyImage>,
            boxes: Option<Vec<BoxTuple>>,
        ) -> PyResult<PyImage> {
            let stylizer = self.0.stylizer(style.map(|s| s.0.clone())).map_err(err)?;
            let out = match boxes {
                None => pipeline::stylize_plain(&image.0, &stylizer),
                Some(list) => pipeline::stylize_with_mosaic(
                    &image.0,
                    &face_boxes(list),
                    &stylizer as &dyn Stylizer,
                    &BicubicUpscaler,
                    self.0.mosaic.tile_size,
                    self.0.mosaic.feather,
                )
                .map(|run| run.output),
            };
            out.map(PyImage).map_err(err)
        }
    }

    /// Seeded synthetic content image with non-overlapping square faces.
    #[pyfunction]
    fn synth_fixture(
        seed: u64,
        width: usize,
        height: usize,
        n_faces: usize,
        min_side: usize,
        max_side: usize,
    ) -> PyResult<(PyImage, Vec<BoxTuple>)> {
        let f = pipeline::synth_fixture(seed, width, height, n_faces, min_side..max_side)
            .map_err(err)?;
        Ok((PyImage(f.image), box_tuples(&f.boxes)))
    }

    #[pyfunction]
    fn synth_style(seed: u64, width: usize, height: usize) -> PyImage {
        PyImage(pipeline::synth_style(seed, width, height))
    }

    /// `(ratio, category number)` for a face box in a `width × height` image.
    #[pyfunction]
    fn face_area_category(face: BoxTuple, width: usize, height: usize) -> PyResult<(f64, u8)> {
        let (id, x, y, w, h) = face;
        evalkit::face_area_category(&FaceBox::new(id, x, y, w, h), width, height)
            .map(|(r, c)| (r, c.number()))
            .map_err(err)
    }

    #[pyfunction]
    fn cosine_similarity(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
        let a = EmbeddingVector::new(a).map_err(err)?;
        let b = EmbeddingVector::new(b).map_err(err)?;
        evalkit::cosine_similarity(&a, &b).map_err(err)
    }

    #[pyfunction]
    fn improvement_percent(candidate: f64, baseline: f64) -> Option<f64> {
        evalkit::improvement_percent(candidate, baseline)
    }

    #[pyfunction]
    #[pyo3(signature = (image, size=16))]
    fn embed(image: &PyImage, size: usize) -> PyResult<Vec<f64>> {
        ToyEmbedder { size }
            .embed(&image.0)
            .map(|v| v.values().to_vec())
            .map_err(err)
    }

    /// Mean cosine record for one image, or `None` when it has no faces.
    #[pyfunction]
    fn score_image(
        image_id: &str,
        style: &str,
        content: &PyImage,
        stylized: &PyImage,
        boxes: Vec<BoxTuple>,
    ) -> PyResult<Option<PyEvalRecord>> {
        evalkit::score_image(
            image_id,
            style,
            &content.0,
            &stylized.0,
            &face_boxes(boxes),
            &ToyEmbedder::default(),
        )
        .map(|r| r.map(PyEvalRecord))
        .map_err(err)
    }

    #[pyclass(name = "EvalRecord", from_py_object)]
    #[derive(Clone)]
    struct PyEvalRecord(evalkit::EvalRecord);

    #[pymethods]
    impl PyEvalRecord {
        #[getter]
        fn image_id(&self) -> String {
            self.0.image_id.clone()
        }

        #[getter]
        fn style(&self) -> String {
            self.0.style.clone()
        }

        #[getter]
        fn category(&self) -> u8 {
            self.0.category.number()
        }

        #[getter]
        fn face_ratio(&self) -> f64 {
            self.0.face_ratio
        }

        #[getter]
        fn cosine(&self) -> f64 {
            self.0.cosine
        }
    }

    #[pyclass(name = "EvalReport")]
    struct PyEvalReport(evalkit::EvalReport);

    #[pymethods]
    impl PyEvalReport {
        fn to_csv(&self) -> String {
            self.0.to_csv()
        }

        fn to_table(&self) -> String {
            self.0.to_table()
        }

        /// `(category, style, candidate_mean, baseline_mean, improvement)` rows.
        fn rows(&self) -> Vec<ReportRow> {
            self.0
                .cells
                .iter()
                .map(|c| {
                    (
                        c.category.number(),
                        c.style.clone(),
                        c.candidate.map(|s| s.mean),
                        c.baseline.map(|s| s.mean),
                        c.improvement,
                    )
                })
                .collect()
        }
    }

    #[pyfunction]
    #[pyo3(signature = (candidate, baseline, candidate_name="candidate", baseline_name="baseline"))]
    fn build_report(
        candidate: Vec<PyEvalRecord>,
        baseline: Vec<PyEvalRecord>,
        candidate_name: &str,
        baseline_name: &str,
    ) -> PyEvalReport {
        let c: Vec<_> = candidate.into_iter().map(|r| r.0).collect();
        let b: Vec<_> = baseline.into_iter().map(|r| r.0).collect();
        PyEvalReport(evalkit::build_report(&c, &b).named(candidate_name, baseline_name))
    }

    /// Runs an evaluation manifest with the toy embedder.
    #[pyfunction]
    fn run_eval(manifest: PathBuf) -> PyResult<PyEvalReport> {
        let m = evalkit::EvalManifest::load(&manifest).map_err(err)?;
        evalkit::run_eval(&m, &ToyEmbedder::default())
            .map(|o| PyEvalReport(o.report))
            .map_err(err)
    }
}
