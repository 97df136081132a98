use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use relucell_core::format::{self, Report};
use relucell_core::network::CellConstraints;
use relucell_core::{
    find_witness, layerwise_serial, par_layerwise1, BoundedDomain, Init, Mlp, PoolOptions, Subroutine,
};

fn net(widths: &[usize], seed: u64) -> (Mlp, BoundedDomain) {
    let mlp = Mlp::random(widths, Init::Anchored, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    let dom = BoundedDomain::unit_box(widths[0]).unwrap();
    (mlp, dom)
}

#[test]
fn every_region_is_realised_by_its_witness() {
    let (mlp, dom) = net(&[3, 5, 4, 2], 9);
    let rep = layerwise_serial(&mlp, &dom, Subroutine::Inc).unwrap();
    assert!(rep.report.sign_vectors.len() > 10);
    for v in &rep.report.sign_vectors {
        let CellConstraints::Constraints(c) = mlp.cell_constraints(v).unwrap() else {
            panic!("{v} is contradictory");
        };
        let w = find_witness(&c, &dom).unwrap().point.expect("witness");
        assert!(dom.contains(&w));
        assert_eq!(&mlp.network_sign_vector(&w).unwrap(), v);
        // On its region the network is the affine map A x + b.
        let (a, b) = mlp.region_output_affine(v).unwrap();
        let (y, _) = mlp.forward(&w).unwrap();
        for (i, yi) in y.iter().enumerate() {
            let lin: f64 = a.row(i).iter().zip(&w).map(|(p, q)| p * q).sum::<f64>() + b[i];
            assert!((lin - yi).abs() < 1e-9);
        }
    }
}

#[test]
fn parallel_checkpoint_round_trips_through_report_text() {
    let (mlp, dom) = net(&[4, 6, 6, 1], 2);
    let dir = tempfile::tempdir().unwrap();
    let mut opts = PoolOptions::new(3);
    opts.checkpoint = Some(dir.path().to_path_buf());
    let par = par_layerwise1(&mlp, &dom, &opts).unwrap();
    let serial = layerwise_serial(&mlp, &dom, Subroutine::Exh).unwrap();
    assert_eq!(par.report, serial.report);
    let reparsed = Report::parse(&par.report.to_text()).unwrap();
    assert_eq!(reparsed, serial.report);
    assert_eq!(reparsed.model_sha256, format::model_sha256(&mlp));

    opts.resume = true;
    let again = par_layerwise1(&mlp, &dom, &opts).unwrap();
    assert_eq!(again.report, serial.report);
    assert_eq!(again.lp_calls, par.lp_calls);
}
