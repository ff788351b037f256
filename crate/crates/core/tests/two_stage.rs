//! End-to-end runs of both stages on simulated networks, through the public
//! API only.

use itrnma_core::bbdwols::{run_bbdwols, BbConfig};
use itrnma_core::io::{write_json, BlipArtifact};
use itrnma_core::nma::{fit_nma, network_from_posteriors, Effects, NmaConfig};
use itrnma_core::simlab::{simulate_network, DgmSpec};
use itrnma_core::{BlipPosteriorF32, BlipPosteriorF64};

fn stage_one(seed: u64, iterations: usize) -> (Vec<BlipPosteriorF64>, itrnma_core::simlab::SimulatedNetwork) {
    let sim = simulate_network(&DgmSpec::dgm_b(), seed).unwrap();
    let posts = sim
        .datasets
        .iter()
        .enumerate()
        .map(|(i, d)| run_bbdwols(d, &BbConfig { iterations, seed: 100 + i as u64, ..BbConfig::default() }).unwrap())
        .collect();
    (posts, sim)
}

#[test]
fn pooled_posterior_covers_the_truth() {
    let (posts, sim) = stage_one(12, 400);
    let cfg = NmaConfig { effects: Effects::Common, seed: 3, ..NmaConfig::default() };
    let post = fit_nma(&posts, &sim.network, &cfg).unwrap();
    assert!(post.converged);
    for (k, s) in post.psi_summaries().iter().enumerate() {
        let z = (s.mean - sim.psi_true[k]).abs() / s.sd;
        assert!(z < 4.0, "{}: mean {} truth {} sd {}", s.name, s.mean, sim.psi_true[k], s.sd);
    }
    // the network rebuilt from the posteriors alone matches the simulated one
    let rebuilt = network_from_posteriors(&posts, Some(&sim.network.treatments), Some("A")).unwrap();
    assert_eq!(rebuilt.studies, sim.network.studies);
}

#[test]
fn single_precision_tracks_double_precision() {
    let sim = simulate_network(&DgmSpec::dgm_b(), 4).unwrap();
    let cfg = BbConfig { iterations: 200, seed: 9, ..BbConfig::default() };
    let p64: BlipPosteriorF64 = run_bbdwols(&sim.datasets[0], &cfg).unwrap();
    let p32: BlipPosteriorF32 = run_bbdwols(&sim.datasets[0], &cfg).unwrap();
    for k in 0..p64.dim() {
        let sd = p64.cov[(k, k)].sqrt();
        assert!((p64.point[k] - p32.point[k] as f64).abs() < 1e-2 * sd, "coordinate {k}");
    }
}

#[test]
fn artifacts_reproduce_the_direct_fit() {
    let (posts, sim) = stage_one(21, 150);
    let dir = tempfile::tempdir().unwrap();
    let reread: Vec<BlipPosteriorF64> = posts
        .iter()
        .zip(&sim.datasets)
        .map(|(p, d)| {
            let path = dir.path().join(format!("{}.blip.json", p.study_id));
            write_json(&path, &BlipArtifact::new(p, d, false)).unwrap();
            BlipArtifact::read(&path).unwrap().to_posterior().unwrap()
        })
        .collect();
    let cfg = NmaConfig { chains: 2, iters: 600, warmup: 200, seed: 8, ..NmaConfig::default() };
    let direct = fit_nma(&posts, &sim.network, &cfg).unwrap();
    let via_disk = fit_nma(&reread, &sim.network, &cfg).unwrap();
    for (a, b) in posts.iter().zip(&reread) {
        assert_eq!(a.point, b.point);
        assert_eq!(a.cov, b.cov);
    }
    assert_eq!(direct.psi_draws, via_disk.psi_draws);
    assert_eq!(direct.tau_draws, via_disk.tau_draws);
}
