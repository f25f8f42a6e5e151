use ndarray::Array1;
use netglm::graph::{from_ising, lattice2d};
use netglm::harness::mix_seed;
use netglm::inference::{infer_linear_detailed, prepare_pipeline, PipelineConfig};
use netglm::mrf::{gibbs_sampler, sample_covariates, CovariateSpec, ModelSpec};
use netglm::Dataset;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let lambda_c: f64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(2.0);
    let seed_lo: u64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(0);
    let seed_hi: u64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(40);

    let h = from_ising(&lattice2d::<f64>(20, 20).unwrap(), 0.2, 0.25).unwrap();
    let d = 50;
    let mut theta = Array1::<f64>::zeros(d);
    for j in 0..3 { theta[j] = 1.0; }

    for rep in seed_lo..seed_hi {
        let seed = mix_seed(424, rep);
        let x = sample_covariates(400, &CovariateSpec::ar(d, 0.2).unwrap(),
            &mut ChaCha8Rng::seed_from_u64(mix_seed(seed, 2))).unwrap();
        let model = ModelSpec::new(h.clone(), theta.clone()).unwrap();
        let y = gibbs_sampler(&model, &x.view(), 2000,
            &mut ChaCha8Rng::seed_from_u64(mix_seed(seed, 3)), None).unwrap();
        let data = Dataset::new(x, y).unwrap();
        let cfg = PipelineConfig::<f64> { lambda_c, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 4));
        let state = prepare_pipeline(&data, &h, &cfg, &mut rng).unwrap();
        let supp: Vec<usize> = state.fit.theta_tilde.iter().enumerate()
            .filter(|(_, v)| **v != 0.0).map(|(k, _)| k).collect();
        let mut c = Array1::<f64>::zeros(d);
        c[1] = 1.0;
        let (li, proj) = infer_linear_detailed(&state, &data, &h, c.view(), 0.05, &cfg).unwrap();
        let se = (li.estimate - 1.0) / li.variance.sqrt();
        if se.abs() > 1.95 || !supp.contains(&1) {
            println!("rep {rep}: se={se:+.2} est={:.3} supp={supp:?} th_supp={:?} |u|={:.1} infl={}",
                li.estimate,
                supp.iter().map(|&k| (state.fit.theta_tilde[k]*100.0).round()/100.0).collect::<Vec<_>>(),
                proj.u_hat.dot(&proj.u_hat).sqrt(), proj.inflations);
        }
    }
}
