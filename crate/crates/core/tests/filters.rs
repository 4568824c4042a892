use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use spinfilter::dynamics::{simulate_record, AdjointFilter, AdjointScheme, ModelParams};
use spinfilter::estimators::particle::{run_particle_filter, InnovationMode, ParticleConfig, ParticleEnsemble};
use spinfilter::estimators::projection::run_projection;
use spinfilter::sde::wiener_path;
use spinfilter::spin::{self, gaussian_state, PureState, SpinOperators};
use spinfilter::Spin;

/// Dense complex Heun step of the SSE with `F_z` read-out and `F_y` coupling,
/// renormalised afterwards. Expectations use the normalised argument.
fn dense_step(ops: &SpinOperators, p: &ModelParams, psi: &DVector<Complex64>, dw: f64) -> DVector<Complex64> {
    let i = Complex64::new(0.0, 1.0);
    let c = |x: f64| Complex64::new(x, 0.0);
    let jy = &ops.fy * i;
    let id = ops.identity();
    let mean = |x: &DVector<Complex64>| (x.adjoint() * &ops.fz * x)[(0, 0)].re / x.norm_squared();
    let drift = |x: &DVector<Complex64>| {
        let z = mean(x);
        let fz = &ops.fz - &id * c(z);
        let km = (p.k * p.m).sqrt();
        let a: DMatrix<Complex64> = &jy * c(p.gamma * p.b) - &fz * &fz * c(p.m / 2.0)
            + (&jy * &fz + &jy * c(2.0 * z)) * c(km)
            + &jy * &jy * c(p.k / 2.0);
        a * x
    };
    let diffusion = |x: &DVector<Complex64>| {
        let z = mean(x);
        (&ops.fz - &id * c(z)) * x * c(p.m.sqrt()) + &jy * x * c(p.k.sqrt())
    };
    let a0 = drift(psi);
    let b0 = diffusion(psi);
    let pred = psi + &a0 * c(p.dt) + &b0 * c(dw);
    let a1 = drift(&pred);
    let next = psi + (a0 + a1) * c(0.5 * p.dt) + b0 * c(dw);
    let n = next.norm();
    next / c(n)
}

#[test]
fn sse_matches_dense_reference() {
    for (f, k, b) in [(1.5, 0.0, 0.3), (4.0, 0.0, -0.2), (3.0, 6e-4, 0.1), (2.0, 1.0, 0.0)] {
        let p = ModelParams {
            t_final: 5e-3,
            ..ModelParams::new(Spin::new(f).unwrap(), 10.0, k, b)
        };
        let seed = 17;
        let sim = simulate_record(&p, seed).unwrap();
        let ops = SpinOperators::new(p.spin);
        let noise = wiener_path(seed, p.n_steps(), p.dt).unwrap();
        let mut psi = spin::x_polarized(p.spin).amplitudes().clone();
        for (kstep, &dw) in noise.increments.iter().enumerate() {
            let z = (psi.adjoint() * &ops.fz * &psi)[(0, 0)].re;
            assert!((z - sim.fz[kstep]).abs() < 1e-10, "F={f} K={k} step {kstep}");
            psi = dense_step(&ops, &p, &psi, dw);
        }
        let dense = PureState::new(p.spin, psi).unwrap();
        assert!(dense.trace_distance(&sim.final_state) < 1e-10, "F={f} K={k}");
    }
}

#[test]
fn projection_tracks_sse_at_large_spin() {
    let p = ModelParams {
        t_final: 0.01,
        ..ModelParams::new(Spin::new(50.0).unwrap(), 10.0, 0.0, 0.0)
    };
    let ops = SpinOperators::new(p.spin);
    for seed in 0..3 {
        let sim = simulate_record(&p, seed).unwrap();
        let proj = run_projection(&sim.record, &p).unwrap();
        let final_sse = &sim.final_state;
        let g = proj.last().unwrap();
        let approx = gaussian_state(&ops, g.theta, g.xi);
        let var_sse = final_sse.variance(&ops.fz).unwrap();
        let var_proj = approx.variance(&ops.fz).unwrap();
        assert!((var_proj / var_sse - 1.0).abs() < 0.1, "seed {seed}: {var_proj} vs {var_sse}");
        let z_sse = sim.fz.last().unwrap();
        let z_proj = approx.expectation(&ops.fz).unwrap().re;
        assert!((z_proj - z_sse).abs() < 0.1 * var_sse.sqrt(), "seed {seed}: {z_proj} vs {z_sse}");
        assert!(approx.overlap(final_sse).norm_sqr() > 0.9);
    }
}

#[test]
fn particle_posterior_shrinks() {
    let p = ModelParams::new(Spin::new(20.0).unwrap(), 10.0, 6e-4, 0.0);
    let prior_sd = 10f64.sqrt();
    let mut shrunk = 0;
    for seed in 0..20 {
        let record = simulate_record(&p, seed).unwrap().record;
        let cfg = ParticleConfig {
            n_particles: 200,
            prior_mean: 0.0,
            prior_var: 10.0,
            seed,
            mode: InnovationMode::Shared,
        };
        let run = run_particle_filter(&record, &cfg, usize::MAX).unwrap();
        if run.uncertainty < prior_sd {
            shrunk += 1;
        }
    }
    assert!(shrunk >= 16, "{shrunk}/20");
}

#[test]
fn own_innovation_particles_follow_density_filter() {
    let p = ModelParams {
        t_final: 3e-3,
        ..ModelParams::new(Spin::new(2.0).unwrap(), 10.0, 6e-4, 0.5)
    };
    let record = simulate_record(&p, 4).unwrap().record;
    let fields = vec![-1.0, 0.5, 2.0];
    let mut exact = ParticleEnsemble::from_fields(p.spin, fields.clone()).with_mode(InnovationMode::PerParticle);
    let mut shared = ParticleEnsemble::from_fields(p.spin, fields.clone());
    let filters: Vec<AdjointFilter> = fields
        .iter()
        .map(|&b| AdjointFilter::new(p.with_field(b), AdjointScheme::Kraus).unwrap())
        .collect();
    let mut rhos: Vec<_> = fields.iter().map(|_| spin::x_polarized(p.spin).to_density()).collect();
    for &dz in &record.dz {
        exact.step(dz, &p).unwrap();
        shared.step(dz, &p).unwrap();
        for (rho, f) in rhos.iter_mut().zip(&filters) {
            *rho = f.step(rho, dz).unwrap();
        }
    }
    let mut shared_gap: f64 = 0.0;
    for (i, rho) in rhos.iter().enumerate() {
        assert!(rho.trace_distance(&exact.state(i).to_density()) < 1e-6, "particle {i}");
        shared_gap = shared_gap.max(rho.trace_distance(&shared.state(i).to_density()));
    }
    assert!(shared_gap > 1e-4, "{shared_gap}");
}
