//! Structural invariants, checked on randomly generated inputs.

use gradfield::field::{drift_at, FieldState, Observable, DEFAULT_LAMBDA0};
use gradfield::green::{green_solve, heat_column, srw_capacity, Convention};
use gradfield::lattice::linf_diameter;
use gradfield::rng;
use gradfield::runner::{validate, Experiment, FieldExperiment, RunConfig, SCHEMA_VERSION};
use gradfield::soup::{sample_gaussian_soup, SoupConfig};
use gradfield::walk::conductance;
use gradfield::{cell_of, Boundary, ChainConfig, Domain, Potential, SiteMap, TiltSpec};
use proptest::prelude::*;

fn boundary() -> impl Strategy<Value = Boundary> {
    prop_oneof![Just(Boundary::Periodic), Just(Boundary::Dirichlet)]
}

/// A domain with a random origin together with a site inside it.
fn domain_and_site() -> impl Strategy<Value = (Domain, Vec<i64>)> {
    (3usize..=4, boundary())
        .prop_flat_map(|(d, b)| {
            (Just(d), Just(b), prop::collection::vec(3usize..7, d), prop::collection::vec(-5i64..5, d))
        })
        .prop_flat_map(|(d, b, side, origin)| {
            let offs: Vec<_> = side.iter().map(|&s| 0..s as i64).collect();
            (Just(d), Just(b), Just(side), Just(origin), offs)
        })
        .prop_map(|(d, b, side, origin, off)| {
            let mut dom = Domain::new(d, side, b).unwrap();
            dom.origin = origin.clone();
            let site = origin.iter().zip(&off).map(|(o, k)| o + k).collect();
            (dom, site)
        })
}

fn potential() -> impl Strategy<Value = Potential> {
    prop_oneof![Just(Potential::quadratic()), (-0.9f64..0.9).prop_map(Potential::cosine)]
}

fn random_field(domain: &Domain, seed: u64, scale: f64) -> FieldState {
    use rand::Rng;
    let mut r = rng::stream(seed, &[]);
    let mut f = FieldState::zeros(domain);
    for v in &mut f.values {
        *v = scale * (r.random::<f64>() - 0.5);
    }
    f
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn neighbors_are_symmetric((domain, x) in domain_and_site()) {
        for nb in domain.neighbors(&x).unwrap() {
            if nb.exterior {
                prop_assert_eq!(domain.boundary, Boundary::Dirichlet);
                continue;
            }
            let back = domain.neighbors(&nb.site).unwrap();
            let xi = domain.index(&x);
            prop_assert!(back.iter().any(|b| !b.exterior && domain.index(&b.site) == xi));
        }
    }

    #[test]
    fn periodic_wraparound_is_the_identity((domain, x) in domain_and_site(), axis in 0usize..4) {
        prop_assume!(domain.boundary == Boundary::Periodic && axis < domain.dimension);
        let mut s = x.clone();
        for _ in 0..domain.side[axis] {
            let next = domain
                .neighbors(&s)
                .unwrap()
                .into_iter()
                .find(|nb| {
                    let k = domain.site(domain.index(&nb.site).unwrap());
                    let want = (s[axis] - domain.origin[axis] + 1).rem_euclid(domain.side[axis] as i64) + domain.origin[axis];
                    k[axis] == want && (0..domain.dimension).all(|j| j == axis || k[j] == s[j])
                })
                .unwrap();
            s = domain.site(domain.index(&next.site).unwrap());
        }
        prop_assert_eq!(s, x);
    }

    #[test]
    fn cell_of_brackets_the_scaled_point(z in prop::collection::vec(-3.0f64..3.0, 1..5), n in 1usize..64) {
        let c = cell_of(&z, n);
        for (ci, zi) in c.iter().zip(&z) {
            let nz = n as f64 * zi;
            prop_assert!((*ci as f64) >= nz - 1.0 && (*ci as f64) <= nz);
        }
    }

    #[test]
    fn potential_parity_and_derivative_consistency(p in potential(), eta in -6.0f64..6.0) {
        prop_assert!((p.u_second(eta) - p.u_second(-eta)).abs() <= 1e-14);
        prop_assert!((p.u_prime(eta).unwrap() + p.u_prime(-eta).unwrap()).abs() <= 1e-14);
        let d = 1e-3;
        let central = p.u_prime(eta + d).unwrap() - p.u_prime(eta - d).unwrap();
        prop_assert!((central - 2.0 * d * p.u_second(eta)).abs() <= 1.0 * d * d * d);
        let c2 = p.u_second(eta);
        prop_assert!(c2 >= p.c1 - 1e-12 && c2 <= p.c2 + 1e-12);
    }

    #[test]
    fn conductances_symmetric_and_elliptic((domain, x) in domain_and_site(), p in potential(), seed: u64) {
        let phi = random_field(&domain, seed, 20.0);
        for nb in domain.neighbors(&x).unwrap() {
            let a = conductance(&phi, &domain, &x, &nb.site, &p);
            let b = conductance(&phi, &domain, &nb.site, &x, &p);
            prop_assert_eq!(a, b);
            prop_assert!(a >= p.c1 - 1e-12 && a <= p.c2 + 1e-12);
        }
    }

    #[test]
    fn drift_is_odd_without_linear_tilt((domain, x) in domain_and_site(), p in potential(), seed: u64, v in -0.01f64..0.01) {
        let tilt = TiltSpec::new(SiteMap::new(), SiteMap::single(x.clone(), v));
        let phi = random_field(&domain, seed, 4.0);
        let mut neg = phi.clone();
        neg.values.iter_mut().for_each(|f| *f = -*f);
        let a = drift_at(&phi, &domain, &x, &p, &tilt, 1e-3).unwrap();
        let b = drift_at(&neg, &domain, &x, &p, &tilt, 1e-3).unwrap();
        prop_assert!((a + b).abs() <= 1e-12 * (1.0 + a.abs()));
    }

    #[test]
    fn rng_tree_is_a_function_of_seed_and_path(seed: u64, a: u64, b: u64) {
        prop_assert_eq!(rng::derive(seed, &[a, b]), rng::derive(seed, &[a, b]));
        prop_assume!(a != b);
        prop_assert_ne!(rng::derive(seed, &[a]), rng::derive(seed, &[b]));
        prop_assert_ne!(rng::derive(seed, &[a, b]), rng::derive(seed, &[b, a]));
    }

    #[test]
    fn site_maps_round_trip_through_json(entries in prop::collection::vec((prop::collection::vec(-9i64..9, 3), -1.0f64..1.0), 0..8)) {
        let m = SiteMap::from(entries);
        let back: SiteMap = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        prop_assert_eq!(back, m);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn green_columns_invert_the_operator(
        sites in prop::collection::vec(prop::collection::vec(-1i64..=1, 3), 1..4),
        amp in -0.3f64..0.004,
        y in prop::collection::vec(-3i64..=3, 3),
    ) {
        let domain = Domain::centered_cube(3, 9, Boundary::Dirichlet).unwrap();
        let v = SiteMap::from(sites.into_iter().map(|s| (s, amp)).collect::<Vec<_>>());
        let g = green_solve(&v, &domain, Convention::Occupation).unwrap();
        let col = g.column(&y).unwrap();
        let back = g.apply_operator(&col);
        let j = domain.index(&y).unwrap();
        for (i, b) in back.iter().enumerate() {
            let want = if i == j { 1.0 } else { 0.0 };
            prop_assert!((b - want).abs() < 1e-8, "{} vs {}", b, want);
        }
        // symmetry of the kernel
        let x = vec![1, 0, -1];
        prop_assert!((g.value(&x, &y).unwrap() - g.value(&y, &x).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn free_heat_kernel_conserves_mass_on_the_torus(t in 0.0f64..6.0, y in prop::collection::vec(0i64..8, 3)) {
        let domain = Domain::cube(3, 8, Boundary::Periodic).unwrap();
        let q = heat_column(&SiteMap::new(), &domain, &y, t).unwrap();
        let mass: f64 = q.iter().sum();
        prop_assert!((mass - 1.0).abs() < 1e-8, "{}", mass);
        prop_assert!(q.iter().all(|&x| x > -1e-12));
    }

    #[test]
    fn equilibrium_measure_lives_on_the_inner_boundary(
        sites in prop::collection::btree_set(prop::collection::vec(-1i64..=1, 3), 1..6),
    ) {
        let k: Vec<_> = sites.into_iter().collect();
        let domain = Domain::centered_cube(3, 13, Boundary::Dirichlet).unwrap();
        let cap = srw_capacity(&k, &domain).unwrap();
        let g = green_solve(&SiteMap::new(), &domain, Convention::Occupation).unwrap();
        for (s, e) in cap.equilibrium.iter() {
            prop_assert!(*e >= -1e-12);
            prop_assert!(k.contains(s));
            if *e > 1e-12 {
                let nbs = domain.neighbors(s).unwrap();
                prop_assert!(nbs.iter().any(|n| !k.contains(&n.site)), "{:?} is interior", s);
            }
        }
        for y in &k {
            let col = g.column(y).unwrap();
            let h: f64 = cap.equilibrium.iter().map(|(x, e)| e * col[domain.index(x).unwrap()]).sum();
            prop_assert!((h - 1.0).abs() < 1e-7, "{}", h);
        }
        let total: f64 = cap.equilibrium.iter().map(|(_, e)| e).sum();
        prop_assert!((total - cap.capacity).abs() < 1e-9);
    }

    #[test]
    fn soup_entries_lie_in_the_window_boundary(
        sites in prop::collection::btree_set(prop::collection::vec(-1i64..=1, 3), 1..5),
        replica: u64,
    ) {
        let window: Vec<_> = sites.into_iter().collect();
        let kill_box = Domain::centered_cube(3, 11, Boundary::Dirichlet).unwrap();
        prop_assume!(kill_box.side[0] >= 4 * linf_diameter(&window) as usize);
        let cfg = SoupConfig {
            u: 2.0,
            tilt: TiltSpec::none(),
            window: window.clone(),
            kill_box: kill_box.clone(),
            horizon: f64::INFINITY,
            seed: 17,
            chain: ChainConfig::default(),
            max_rejections: 100_000,
            sigma_nodes: 16,
            escape_samples: 100,
            record_jumps: false,
        };
        let s = sample_gaussian_soup(&cfg, replica).unwrap();
        for t in &s.trajectories {
            prop_assert!(window.contains(&t.entry));
            let nbs = kill_box.neighbors(&t.entry).unwrap();
            prop_assert!(nbs.iter().any(|n| !window.contains(&n.site)));
            // the past never visits K
            for (i, _) in &t.backward.occupation {
                prop_assert!(!window.contains(&kill_box.site(*i)));
            }
        }
    }

    #[test]
    fn validation_never_panics_and_flags_large_tilts(amp in 0.0f64..1.0, dt in 0.001f64..0.3, seed: u64) {
        let domain = Domain::centered_cube(3, 5, Boundary::Dirichlet).unwrap();
        let cfg = RunConfig {
            schema_version: SCHEMA_VERSION,
            seed,
            threads: 1,
            output_dir: None,
            experiment: Experiment::Field(FieldExperiment {
                domain,
                potential: Potential::cosine(0.5),
                tilt: TiltSpec::new(SiteMap::new(), SiteMap::single(vec![0, 0, 0], amp)),
                chain: ChainConfig { dt, ..ChainConfig::default() },
                observables: vec![Observable::Value { site: vec![0, 0, 0] }],
            }),
        };
        let rep = validate(&cfg);
        let tilt_ok = rep.findings.iter().find(|f| f.check == "tilt admissibility").unwrap().pass;
        prop_assert_eq!(tilt_ok, amp < DEFAULT_LAMBDA0);
        let dt_ok = rep.findings.iter().find(|f| f.check == "time-step stability").unwrap().pass;
        prop_assert_eq!(dt_ok, dt * (6.0 * 1.5 + amp) < 0.5);
    }
}
