use qhedge::hedging::DiscountCurve;
use qhedge::models::{
    make_bs_model, DiscreteReturn, FnGarch, LatentValue, RegimeSwitchingModel, ReturnLaw,
};
use qhedge::numerics::Grid1D;
use qhedge::payoff::Payoff;
use qhedge::solver::{solve_garch, solve_rs, PolicyTables, SolverSpec};

fn spec(lo: f64, hi: f64, nodes: usize, n: usize, m: usize) -> SolverSpec {
    SolverSpec {
        asset_grid: Grid1D::uniform(lo, hi, nodes).unwrap(),
        variance_grid: None,
        n_periods: n,
        quadrature_size: m,
        seed: 7,
    }
}

fn trinomial(up: f64, p_up: f64) -> ReturnLaw {
    // Zero-mean three-point law.
    let down = -up * p_up / (1.0 - 2.0 * p_up);
    ReturnLaw::Discrete {
        atoms: vec![
            DiscreteReturn { prob: p_up, xi: vec![up] },
            DiscreteReturn { prob: p_up, xi: vec![0.0] },
            DiscreteReturn { prob: 1.0 - 2.0 * p_up, xi: vec![down] },
        ],
    }
}

#[test]
fn martingale_prices_have_no_drift_correction() {
    let model = RegimeSwitchingModel::new(vec![vec![1.0]], vec![trinomial(0.05, 0.3)]).unwrap();
    let discount = DiscountCurve::flat(4);
    let mut last = f64::INFINITY;
    for strike in [90.0, 95.0, 100.0, 105.0, 110.0] {
        let t = solve_rs(&model, &Payoff::Call { strike }, &spec(50.0, 200.0, 1501, 4, 1), &discount).unwrap();
        for k in 1..=4 {
            assert!(t.b(k).iter().all(|b| b.abs() < 1e-12));
            assert!(t.gamma(k).iter().all(|g| (g - 1.0).abs() < 1e-12));
        }
        let c0 = t.value_at(0, 100.0, LatentValue::Regime(0)).unwrap();
        assert!(c0 <= last + 1e-12, "price rose with strike: {c0} > {last}");
        last = c0;
    }
}

#[test]
fn constant_variance_garch_matches_lognormal_walk() {
    let n = 6;
    let (mean, vol, rate) = (0.09, 0.2, 0.05);
    let rs = make_bs_model(n, mean, vol, rate, 1.0).unwrap();
    let discount = DiscountCurve::new(rate, 1.0 / n as f64, n).unwrap();
    let (mu, sd, r) = (mean / n as f64, vol / (n as f64).sqrt(), rate / n as f64);
    let garch = FnGarch {
        pi1: move |_h: f64, eps: f64| (mu + sd * eps - r).exp() - 1.0,
        pi2: |h: f64, _eps: f64| h,
    };
    let payoff = Payoff::Call { strike: 100.0 };
    let mut s = spec(60.0, 160.0, 801, n, 4000);
    let a = solve_rs(&rs, &payoff, &s, &discount).unwrap();
    s.variance_grid = Some(Grid1D::uniform(0.5, 1.5, 3).unwrap());
    let b = solve_garch(&garch, &payoff, &s, &discount).unwrap();
    for x in [90.0, 100.0, 110.0] {
        let ca = a.value_at(0, x, LatentValue::Regime(0)).unwrap();
        let cb = b.value_at(0, x, LatentValue::Variance(1.0)).unwrap();
        assert!((ca - cb).abs() < 1e-3 * ca.max(1.0), "s={x}: {ca} vs {cb}");
    }
}

#[test]
fn identity_transition_decouples_regimes() {
    let laws = [
        ReturnLaw::Discrete {
            atoms: vec![
                DiscreteReturn { prob: 0.5, xi: vec![0.06] },
                DiscreteReturn { prob: 0.5, xi: vec![-0.04] },
            ],
        },
        ReturnLaw::Discrete {
            atoms: vec![
                DiscreteReturn { prob: 0.2, xi: vec![0.1] },
                DiscreteReturn { prob: 0.5, xi: vec![0.01] },
                DiscreteReturn { prob: 0.3, xi: vec![-0.08] },
            ],
        },
    ];
    let both = RegimeSwitchingModel::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]], laws.to_vec()).unwrap();
    let discount = DiscountCurve::new(0.02, 0.25, 4).unwrap();
    let payoff = Payoff::Put { strike: 100.0 };
    let sp = spec(40.0, 250.0, 2101, 4, 1);
    let joint = solve_rs(&both, &payoff, &sp, &discount).unwrap();
    for (j, law) in laws.iter().enumerate() {
        let single = RegimeSwitchingModel::new(vec![vec![1.0]], vec![law.clone()]).unwrap();
        let t = solve_rs(&single, &payoff, &sp, &discount).unwrap();
        for k in 0..=4 {
            let a = joint.value_at(k, 100.0, LatentValue::Regime(j)).unwrap();
            let b = t.value_at(k, 100.0, LatentValue::Regime(0)).unwrap();
            assert!((a - b).abs() < 1e-12, "regime {j} period {k}: {a} vs {b}");
        }
        for k in 1..=4 {
            assert!((joint.gamma(k)[j] - t.gamma(k)[0]).abs() < 1e-14);
        }
    }
}

#[test]
fn gamma_is_monotone_along_the_recursion_for_constant_moments() {
    // With i.i.d. returns gamma_k is deterministic and the submartingale
    // property reduces to gamma_k <= gamma_{k+1}.
    let model = make_bs_model(10, 0.3, 0.15, 0.0, 1.0).unwrap();
    let t = solve_rs(
        &model,
        &Payoff::Call { strike: 100.0 },
        &spec(50.0, 200.0, 301, 10, 2000),
        &DiscountCurve::flat(10),
    )
    .unwrap();
    for k in 1..=10 {
        let (g, g_next) = (t.gamma(k)[0], t.gamma(k + 1)[0]);
        assert!(g > 0.0 && g <= g_next + 1e-15, "gamma_{k} = {g}, next {g_next}");
    }
    assert_eq!(t.gamma(11)[0], 1.0);
}

#[test]
fn refining_the_asset_grid_changes_prices_little() {
    let n = 22;
    let model = make_bs_model(n, 0.09, 0.06, 0.05, 1.0).unwrap();
    let discount = DiscountCurve::new(0.05, 1.0 / n as f64, n).unwrap();
    let payoff = Payoff::Call { strike: 100.0 };
    let coarse = solve_rs(&model, &payoff, &spec(80.0, 120.0, 2000, n, 2000), &discount).unwrap();
    let fine = solve_rs(&model, &payoff, &spec(80.0, 120.0, 4000, n, 2000), &discount).unwrap();
    for s in [95.0, 100.0, 105.0] {
        let a = coarse.value_at(0, s, LatentValue::Regime(0)).unwrap();
        let b = fine.value_at(0, s, LatentValue::Regime(0)).unwrap();
        assert!((a - b).abs() < 0.005 * b, "s={s}: {a} vs {b}");
    }
}

#[test]
fn solves_are_byte_identical() {
    let model = make_bs_model(5, 0.09, 0.2, 0.05, 1.0).unwrap();
    let discount = DiscountCurve::new(0.05, 0.2, 5).unwrap();
    let bytes = |t: PolicyTables| {
        let mut out = Vec::new();
        t.write_to(&mut out).unwrap();
        out
    };
    let run = || solve_rs(&model, &Payoff::Call { strike: 100.0 }, &spec(50.0, 200.0, 301, 5, 3000), &discount).unwrap();
    assert_eq!(bytes(run()), bytes(run()));
}
