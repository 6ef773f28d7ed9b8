//! Property-based checks of invariants across modules.

use ndarray::Array2;
use proptest::prelude::*;
use tailattrib::attribution::{causal_metrics, resample_indices, BootstrapScheme, Ext};
use tailattrib::data::{haversine_km, weighted_sums, World, WorldSample};
use tailattrib::efcm::{efcm_chi, efcm_chi_u, efcm_marginal_cdf, efcm_marginal_quantile};
use tailattrib::hw::{hw_marginal_quantile, hw_marginal_survival};
use tailattrib::io::ingest::{block_maxima, read_world, write_world};
use tailattrib::io::output::fmt17;
use tailattrib::mgpd::mgpd_chi;
use tailattrib::numerics::{bvn_cdf, l_moments, std_normal_cdf, RngStream};
use tailattrib::regions::{anderson_darling_k, build_grid, kappa_tau, BBox};
use tailattrib::univariate::{empirical_quantile, gpd_cdf, gpd_quantile, gpd_survival, GpdParams};

fn prob() -> impl Strategy<Value = f64> {
    prop_oneof![Just(0.0), Just(1.0), 0.0..=1.0f64]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn causal_metrics_bounds_and_equivalence(p0 in prob(), p1 in prob()) {
        let m = causal_metrics(p0, p1).unwrap();
        prop_assert_eq!(m.pns, (p1 - p0).max(0.0));
        if let Ext::Value(pn) = m.pn {
            prop_assert!((0.0..=1.0).contains(&pn));
        }
        if let Ext::Value(ps) = m.ps {
            prop_assert!((0.0..=1.0).contains(&ps));
        }
        if p0 > 0.0 && p1 > 0.0 {
            let pn = m.pn.to_f64();
            let ar = m.ar.to_f64();
            let rr = m.rr.to_f64();
            prop_assert_eq!(pn > 0.0, ar < 0.0);
            prop_assert_eq!(ar < 0.0, rr > 1.0);
            prop_assert!((ar - (1.0 / rr - 1.0)).abs() <= 1e-9 * (1.0 + ar.abs()));
            if p1 > p0 {
                prop_assert!((pn + ar).abs() <= 1e-12);
            }
        }
        if p0 == 0.0 && p1 > 0.0 {
            prop_assert_eq!(m.rr, Ext::Infinite);
            prop_assert_eq!(m.pn, Ext::Value(1.0));
        }
        if p1 == 0.0 && p0 > 0.0 {
            prop_assert_eq!(m.ar, Ext::Infinite);
            prop_assert_eq!(m.pn, Ext::Undefined);
        }
    }

    #[test]
    fn causal_metrics_reject_outside_unit_interval(p in 1.0000001..10.0f64) {
        prop_assert!(causal_metrics(p, 0.5).is_err());
        prop_assert!(causal_metrics(0.5, -p).is_err());
    }

    #[test]
    fn ext_json_round_trip(x in prop_oneof![any::<f64>().prop_filter("finite", |v| v.is_finite()).prop_map(Ext::Value), Just(Ext::Infinite), Just(Ext::Undefined)]) {
        let s = serde_json::to_string(&x).unwrap();
        let back: Ext = serde_json::from_str(&s).unwrap();
        prop_assert_eq!(back, x);
    }

    #[test]
    fn fmt17_round_trips(x in any::<f64>().prop_filter("finite", |v| v.is_finite())) {
        prop_assert_eq!(fmt17(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
    }

    #[test]
    fn resampled_indices_are_valid_blocks(n in 1usize..300, l in 1usize..40, seed in any::<u64>()) {
        let mut r = RngStream::new(seed).rng();
        let iid = resample_indices(n, BootstrapScheme::Iid, &mut r);
        prop_assert_eq!(iid.len(), n);
        prop_assert!(iid.iter().all(|&i| i < n));
        let b = resample_indices(n, BootstrapScheme::Block { length: l }, &mut r);
        prop_assert_eq!(b.len(), n);
        prop_assert!(b.iter().all(|&i| i < n));
        let l = l.min(n);
        for chunk in b.chunks(l) {
            prop_assert!(chunk.windows(2).all(|w| w[1] == w[0] + 1));
        }
    }

    #[test]
    fn gpd_quantile_inverts_cdf(sigma in 0.1..10.0f64, gamma in -0.4..0.8f64, q in 0.001..0.999f64) {
        let p = GpdParams::new(sigma, gamma).unwrap();
        let x = gpd_quantile(q, &p);
        prop_assert!((gpd_cdf(x, &p) - q).abs() < 1e-10);
        prop_assert!((gpd_survival(x, &p) + gpd_cdf(x, &p) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empirical_quantile_is_monotone(mut x in prop::collection::vec(-1e3..1e3f64, 1..60), a in 0.0..=1.0f64, b in 0.0..=1.0f64) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let ql = empirical_quantile(&x, lo).unwrap();
        let qh = empirical_quantile(&x, hi).unwrap();
        x.sort_by(f64::total_cmp);
        prop_assert!(ql <= qh);
        prop_assert!(x[0] <= ql && qh <= x[x.len() - 1]);
    }

    #[test]
    fn mgpd_chi_symmetric_and_bounded(a1 in 0.05..20.0f64, a2 in 0.05..20.0f64) {
        let c = mgpd_chi(a1, a2).unwrap();
        prop_assert!((0.0..=1.0).contains(&c));
        prop_assert!((c - mgpd_chi(a2, a1).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn efcm_margin_and_chi(lambda in 0.1..8.0f64, rho in 0.0..0.99f64, u in 0.5..0.999f64) {
        let w = efcm_marginal_quantile(u, lambda).unwrap();
        prop_assert!((efcm_marginal_cdf(w, lambda) - u).abs() < 1e-9);
        let c = efcm_chi_u(lambda, rho, u).unwrap();
        prop_assert!((0.0..=1.0).contains(&c));
        prop_assert!((0.0..=1.0).contains(&efcm_chi(lambda, rho)));
    }

    #[test]
    fn hw_survival_decreasing_and_invertible(delta in 0.01..0.99f64, x in 1.0..1e6f64, f in 1.0..100.0f64) {
        let s = hw_marginal_survival(x, delta).unwrap();
        let s2 = hw_marginal_survival(x * f, delta).unwrap();
        prop_assert!(s > 0.0 && s <= 1.0 && s2 <= s);
        let u = 1.0 - s;
        if u > 1e-6 && s > 1e-12 {
            let back = hw_marginal_quantile(u, delta).unwrap();
            prop_assert!((back - x).abs() <= 1e-6 * x);
        }
    }

    #[test]
    fn bivariate_normal_frechet_bounds(x in -5.0..5.0f64, y in -5.0..5.0f64, rho in -0.99..0.99f64) {
        let f = bvn_cdf(x, y, rho);
        let (a, b) = (std_normal_cdf(x), std_normal_cdf(y));
        prop_assert!(f >= (a + b - 1.0).max(0.0) - 1e-12);
        prop_assert!(f <= a.min(b) + 1e-12);
    }

    #[test]
    fn l_moment_ratios_are_scale_invariant(x in prop::collection::vec(0.01..100.0f64, 5..80), c in 0.01..100.0f64) {
        let a = l_moments(&x).unwrap();
        let y: Vec<f64> = x.iter().map(|v| v * c).collect();
        let b = l_moments(&y).unwrap();
        prop_assert!((a.t - b.t).abs() < 1e-9);
        prop_assert!((a.t3 - b.t3).abs() < 1e-9);
        prop_assert!(a.t3.abs() <= 1.0 + 1e-12);
    }

    #[test]
    fn kappa_ratios_are_feasible(k in -0.4..0.9f64, h in -0.9..1.2f64) {
        if let Some((t3, t4)) = kappa_tau(k, h) {
            prop_assert!(t3.abs() < 1.0);
            prop_assert!(t4 >= (5.0 * t3 * t3 - 1.0) / 4.0 - 1e-9 && t4 < 1.0);
        }
    }

    #[test]
    fn anderson_darling_is_rank_based(x in prop::collection::vec(-10.0..10.0f64, 10..40), y in prop::collection::vec(-10.0..10.0f64, 10..40)) {
        let a = anderson_darling_k(&[x.clone(), y.clone()]).unwrap();
        let tx: Vec<f64> = x.iter().map(|v| v.exp()).collect();
        let ty: Vec<f64> = y.iter().map(|v| v.exp()).collect();
        let b = anderson_darling_k(&[ty, tx]).unwrap();
        prop_assert!((a.statistic - b.statistic).abs() < 1e-9 * (1.0 + a.statistic.abs()));
        prop_assert!((0.0..=1.0).contains(&a.p_value));
    }

    #[test]
    fn grid_covers_box(lat0 in -60.0..60.0f64, dlat in 0.0..10.0f64, lon0 in -170.0..170.0f64, dlon in 0.0..10.0f64, s in 0.1..3.0f64) {
        let bb = BBox { lat_min: lat0, lat_max: lat0 + dlat, lon_min: lon0, lon_max: lon0 + dlon };
        let g = build_grid(&bb, s).unwrap();
        let nlat = (dlat / s + 1e-9).floor() as usize + 1;
        let nlon = (dlon / s + 1e-9).floor() as usize + 1;
        prop_assert_eq!(g.len(), nlat * nlon);
        prop_assert!(g.iter().all(|c| c[0] >= bb.lat_min && c[0] <= bb.lat_max + 1e-9 && c[1] >= bb.lon_min && c[1] <= bb.lon_max + 1e-9));
    }

    #[test]
    fn haversine_is_a_metric(a in (-80.0..80.0f64, -180.0..180.0f64), b in (-80.0..80.0f64, -180.0..180.0f64), c in (-80.0..80.0f64, -180.0..180.0f64)) {
        let (a, b, c) = ([a.0, a.1], [b.0, b.1], [c.0, c.1]);
        prop_assert!((haversine_km(a, b) - haversine_km(b, a)).abs() < 1e-9);
        prop_assert!(haversine_km(a, c) <= haversine_km(a, b) + haversine_km(b, c) + 1e-6);
        prop_assert!(haversine_km(a, a).abs() < 1e-9);
    }

    #[test]
    fn weighted_sums_are_linear(v in prop::collection::vec(-5.0..5.0f64, 12), w in prop::collection::vec(0.0..1.0f64, 3), c in 0.1..4.0f64) {
        let x = Array2::from_shape_vec((4, 3), v).unwrap();
        let a = weighted_sums(&x, &w);
        let b = weighted_sums(&x.mapv(|t| t * c), &w);
        for (p, q) in a.iter().zip(&b) {
            prop_assert!((p * c - q).abs() < 1e-9);
        }
    }

    #[test]
    fn world_csv_round_trip_and_block_maxima(v in prop::collection::vec(-1e6..1e6f64, 24), k in 1usize..7) {
        let ids = vec!["A".to_string(), "B".to_string(), "C".to_string()];
        let times: Vec<String> = (0..8).map(|i| format!("2000-01-{:02}", i + 1)).collect();
        let s = WorldSample::new(Array2::from_shape_vec((8, 3), v).unwrap(), World::Factual, ids.clone(), times).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.csv");
        write_world(&p, &s).unwrap();
        let back = read_world(&p, World::Factual, &["C".into(), "A".into(), "B".into()]).unwrap();
        for (j, id) in back.site_ids.iter().enumerate() {
            let orig = ids.iter().position(|x| x == id).unwrap();
            prop_assert_eq!(back.column(j).to_vec(), s.column(orig).to_vec());
        }
        let m = block_maxima(&s, k).unwrap();
        prop_assert_eq!(m.n(), 8 / k);
        for b in 0..m.n() {
            for j in 0..3 {
                let want = (b * k..(b + 1) * k).map(|i| s.values[[i, j]]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert_eq!(m.values[[b, j]], want);
            }
        }
    }
}
