use frontlab::evolve::{DomainPolicy, IcClass, ModelParams, SimState};
use frontlab::front::{classify_growth, lambda_radius, GrowthLaw, LevelSetSpec, LevelShape};
use frontlab::grid::{convolve, make_grid, sample_field, DiscreteKernel, Exterior, Field, KernelOperator};
use frontlab::reaction::{apply_F, apply_G, LocalTerm, ReactionSpec};
use frontlab::suites::certified_families;
use frontlab::tailprofiles::{build_profile, normalize_kernel, Family, Kernel};
use frontlab::theory::{find_tau0, lambda0, SubsolutionSpec};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn kernel(family: Family, dim: u32) -> Kernel {
    normalize_kernel(&build_profile(family).unwrap(), dim).unwrap()
}

fn competitive() -> ReactionSpec {
    let comp = kernel(Family::GaussianControl { rate: 1.0 }, 1);
    ReactionSpec::new(0.5, 2, LocalTerm::Fisher, 1.0, 1.0, Some(comp)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn convolution_is_positive_and_multiplies_mass(
        values in prop::collection::vec(0.0f64..1.0, 64),
        kvals in prop::collection::vec(0.0f64..1.0, 63),
    ) {
        let g = make_grid(1, 8.0, 128).unwrap();
        // support well inside the box
        let mut u = vec![0.0; 128];
        u[32..96].copy_from_slice(&values);
        let u = Field::from_values(g, u).unwrap();
        let mut kv = vec![0.0; 255];
        kv[96..159].copy_from_slice(&kvals);
        let k = DiscreteKernel::from_values(g, kv).unwrap();
        let c = convolve(&k, &u).unwrap();
        prop_assert!(c.min() >= -1e-12);
        let h = g.spacing();
        let lhs = h * c.values().iter().sum::<f64>();
        let rhs = (h * k.values().iter().sum::<f64>()) * (h * u.values().iter().sum::<f64>());
        prop_assert!((lhs - rhs).abs() <= 1e-8 * rhs.abs().max(1e-300));
    }

    #[test]
    fn reaction_stays_between_zero_and_linearization(values in prop::collection::vec(0.0f64..=1.0, 64)) {
        let g = make_grid(1, 8.0, 64).unwrap();
        let u = Field::from_values(g, values).unwrap();
        for spec in [ReactionSpec::fisher(1.0, 1.0), competitive()] {
            let f = apply_F(&spec, &u, Exterior::Zero).unwrap();
            let gg = apply_G(&spec, &u, Exterior::Zero).unwrap();
            for ((&ui, &fi), &gi) in u.values().iter().zip(f.values()).zip(gg.values()) {
                prop_assert!(fi >= -1e-12 && fi <= spec.beta() * ui + 1e-12);
                if ui > 1e-9 {
                    prop_assert!((fi - ui * (spec.beta() - gi)).abs() <= 1e-12);
                }
            }
        }
    }
}

#[test]
fn reaction_vanishes_on_constant_states() {
    let g = make_grid(1, 8.0, 64).unwrap();
    for spec in [ReactionSpec::fisher(1.0, 1.0), competitive()] {
        for c in [0.0, spec.theta()] {
            let f = apply_F(&spec, &Field::constant(g, c), Exterior::Constant(c)).unwrap();
            assert!(f.values().iter().all(|&v| v == 0.0), "F({c}) = {:?}", f.max());
        }
        for r in [0.1, 0.5, 0.9] {
            assert!(spec.g_constant(r) < spec.beta());
        }
    }
}

#[test]
fn quasi_monotone_on_ordered_pairs() {
    let spec = competitive();
    let a = kernel(Family::Polynomial { m: 1.0, mu: 1.0, d: 1 }, 1);
    let g = make_grid(1, 8.0, 64).unwrap();
    let mut op = KernelOperator::new(&a, &g, Exterior::Zero).unwrap();
    let (kappa, p) = (1.5, spec.quasi_monotonicity_p());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let v: Vec<f64> = (0..64).map(|_| rng.gen_range(0.0..1.0)).collect();
        let w: Vec<f64> = v.iter().map(|&x| rng.gen_range(x..=1.0)).collect();
        let side = |vals: Vec<f64>, op: &mut KernelOperator| {
            let f = Field::from_values(g, vals).unwrap();
            let av = op.apply(&f).unwrap();
            let gv = apply_G(&spec, &f, Exterior::Zero).unwrap();
            (0..64)
                .map(|i| kappa * av.values()[i] - f.values()[i] * gv.values()[i] + p * f.values()[i])
                .collect::<Vec<_>>()
        };
        let lv = side(v, &mut op);
        let lw = side(w, &mut op);
        assert!(lv.iter().zip(&lw).all(|(x, y)| *x <= *y + 1e-8));
    }
}

#[test]
fn level_sets_are_nested() {
    let families = [
        Family::Polynomial { m: 1.0, mu: 1.0, d: 1 },
        Family::StretchedExp { scale: 1.0, c: 1.0, gamma: 0.5, nu: 0.0 },
        Family::AlmostLinear { lambda: 2.0 },
        Family::ExponentialControl { rate: 1.0 },
    ];
    for f in families {
        for shape in [LevelShape::Radial, LevelShape::Orthant] {
            let spec = LevelSetSpec::new(shape, build_profile(f.clone()).unwrap(), 1.0, 1).unwrap();
            let radii: Vec<f64> = [5.0, 10.0, 20.0, 40.0, 80.0].iter().map(|&t| lambda_radius(&spec, t).unwrap()).collect();
            assert!(radii.windows(2).all(|w| w[1] >= w[0]), "{f:?} {shape:?} {radii:?}");
        }
    }
}

#[test]
fn growth_classifier_tolerates_noise() {
    let times: Vec<f64> = (1..=120).map(|i| 0.25 * i as f64).collect();
    type Law = (GrowthLaw, fn(f64) -> f64);
    let laws: [Law; 4] = [
        (GrowthLaw::Linear, |t| 2.0 + 3.0 * t),
        (GrowthLaw::ExponentialInT, |t| (0.5 * t).exp()),
        (GrowthLaw::Power, |t| 1.5 * t.powi(2)),
        (GrowthLaw::TLogPower, |t| t * t.ln().powi(3)),
    ];
    let noise = Normal::new(0.0, 0.01).unwrap();
    for (law, x) in laws {
        let clean: Vec<f64> = times.iter().map(|&t| x(t)).collect();
        assert_eq!(classify_growth(&times, &clean).unwrap().law, law);
        let mut hits = 0;
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let noisy: Vec<f64> = clean.iter().map(|v| v * (1.0 + noise.sample(&mut rng))).collect();
            hits += (classify_growth(&times, &noisy).unwrap().law == law) as usize;
        }
        assert!(hits >= 95, "{law:?}: {hits}/100");
    }
}

#[test]
fn solution_stays_above_certified_subsolution() {
    let (kappa, m) = (1.5, 0.5);
    let reaction = ReactionSpec::fisher(1.0, 1.0);
    let family = certified_families().remove(0);
    let profile = build_profile(family).unwrap();
    let a = normalize_kernel(&profile, 1).unwrap();
    let eps = 0.3;
    let delta = 0.25 * eps;
    let level = LevelSetSpec::new(LevelShape::Radial, profile, 1.0, 1).unwrap();
    let spec = SubsolutionSpec::new(level, eps, lambda0(&reaction, delta), 1.0, Some(delta)).unwrap();
    let (tau0, _) = find_tau0(&spec, &a, kappa, m, 1.0, 1.0, 200).unwrap();

    let g = make_grid(1, 512.0, 1024).unwrap();
    let u0 = sample_field(&g, |x| spec.v(x[0], tau0));
    let mut policy = DomainPolicy::for_dim(1);
    policy.expand_threshold = f64::INFINITY;
    let mut state = SimState::new(ModelParams::new(kappa, m).unwrap(), reaction, a, u0, IcClass::Integrable, policy).unwrap();
    let dt = state.dt_max().min(0.05);
    let inner = |x: f64| x.abs() <= 128.0;
    for s in [0.5, 1.0, 2.0, 4.0] {
        while state.time() < s - 1e-12 {
            state.step(dt.min(s - state.time())).unwrap();
        }
        let worst = (0..g.len())
            .filter(|&i| inner(g.coord(i)))
            .map(|i| state.field().values()[i] - spec.v(g.coord(i), tau0 + s))
            .fold(f64::INFINITY, f64::min);
        assert!(worst >= -1e-8, "s = {s}: min(u - v) = {worst:e}");
    }
}
