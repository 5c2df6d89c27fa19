use facestyle::denoise::{CountingPredictor, GaussianPriorPredictor, StylePullPredictor};
use facestyle::guidance::{content_loss, estimate_x0, GuidanceConfig, Reduction};
use facestyle::latent::Latent;
use facestyle::sampler::{invert, sample, InversionConfig};
use facestyle::schedule::NoiseSchedule;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_latent(rng: &mut ChaCha8Rng, dims: (usize, usize, usize)) -> Latent {
    let n = dims.0 * dims.1 * dims.2;
    Latent::new(dims, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

struct Setup {
    schedule: NoiseSchedule,
    content: Latent,
    predictor: StylePullPredictor,
    start: Latent,
}

fn setup(seed: u64) -> Setup {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let schedule = NoiseSchedule::default();
    let content = random_latent(&mut rng, (3, 6, 6));
    let style = random_latent(&mut rng, (3, 6, 6));
    let predictor = StylePullPredictor::new(&content, &style, 0.5).unwrap();
    let start = random_latent(&mut rng, (3, 6, 6));
    Setup {
        schedule,
        content,
        predictor,
        start,
    }
}

fn final_loss(s: &Setup, lambda: f64) -> f64 {
    let plan = s.schedule.plan(10).unwrap();
    let cfg = GuidanceConfig::new(lambda, Reduction::Sum).unwrap();
    let z = sample(&s.start, &s.predictor, &s.schedule, &plan, &s.content, &cfg)
        .unwrap()
        .into_final();
    content_loss(&z, &s.content, Reduction::Sum).unwrap()
}

#[test]
fn final_loss_nonincreasing_over_stable_lambda_grid() {
    for seed in 0..5 {
        let s = setup(seed);
        let plan = s.schedule.plan(10).unwrap();
        let bound = plan
            .timesteps()
            .iter()
            .map(|&t| {
                let ab = s.schedule.alpha_bar(t).unwrap();
                ab / (1.0 - ab)
            })
            .fold(f64::INFINITY, f64::min);
        let losses: Vec<f64> = (0..=8)
            .map(|k| final_loss(&s, bound * k as f64 / 8.0))
            .collect();
        for w in losses.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "seed {seed}: {losses:?}");
        }
        assert!(losses[8] < losses[0]);
    }
}

#[test]
fn lambda_past_noisiest_bound_breaks_loss_descent() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let schedule = NoiseSchedule::default();
    let content = random_latent(&mut rng, (3, 6, 6));
    let mu = random_latent(&mut rng, (3, 6, 6));
    let start = random_latent(&mut rng, (3, 6, 6));
    let p = GaussianPriorPredictor::new(mu, 0.5).unwrap();
    let plan = schedule.plan(10).unwrap();
    let ab = schedule.alpha_bar(plan.timesteps()[0]).unwrap();
    let bound = ab / (1.0 - ab);

    let stable = GuidanceConfig::new(0.5 * bound, Reduction::Sum).unwrap();
    let trace = sample(&start, &p, &schedule, &plan, &content, &stable).unwrap();
    assert!(trace.losses.windows(2).take(4).all(|w| w[1] <= w[0]));

    for m in [30.0, 100.0] {
        let over = GuidanceConfig::new(m * bound, Reduction::Sum).unwrap();
        let trace = sample(&start, &p, &schedule, &plan, &content, &over).unwrap();
        let rises = trace.losses.windows(2).filter(|w| w[1] > w[0]).count();
        assert!(rises >= 3, "{m}: {:?}", trace.losses);
        assert!(
            *trace.losses.last().unwrap()
                > trace.losses.iter().cloned().fold(f64::INFINITY, f64::min)
        );
    }
}

#[test]
fn predictor_calls_follow_plan_lengths() {
    let s = setup(3);
    let counted = CountingPredictor::new(s.predictor.clone());
    for steps in [1, 4, 10] {
        let plan = s.schedule.plan(steps).unwrap();
        let before = counted.calls();
        let cfg = GuidanceConfig::new(0.1, Reduction::Sum).unwrap();
        sample(&s.start, &counted, &s.schedule, &plan, &s.content, &cfg).unwrap();
        assert_eq!(counted.calls() - before, steps);

        let before = counted.calls();
        let inv = InversionConfig {
            steps,
            fixed_point_iters: 2,
        };
        invert(&s.content, &counted, &s.schedule, &inv).unwrap();
        assert_eq!(counted.calls() - before, steps * 3);
    }
}

#[test]
fn first_recorded_loss_is_unrefined_estimate() {
    let s = setup(11);
    let plan = s.schedule.plan(10).unwrap();
    let cfg = GuidanceConfig::new(0.05, Reduction::Sum).unwrap();
    let trace = sample(&s.start, &s.predictor, &s.schedule, &plan, &s.content, &cfg).unwrap();
    assert_eq!(trace.losses.len(), 10);
    let first = estimate_x0(
        &trace.latents[0],
        &facestyle::denoise::NoisePredictor::predict(
            &s.predictor,
            &trace.latents[0],
            plan.timesteps()[0],
            &s.schedule,
        )
        .unwrap(),
        trace.alpha_bars[0],
    )
    .unwrap();
    let l0 = content_loss(&first, &s.content, Reduction::Sum).unwrap();
    assert!((l0 - trace.losses[0]).abs() <= 1e-9 * l0.max(1.0));
}
