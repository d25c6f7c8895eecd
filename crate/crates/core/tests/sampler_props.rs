mod common;

use std::cell::RefCell;

use common::{perturbed_toy, uniform};
use twinflow::model::TwinModel;
use twinflow::sampler::{
    euler_solve, sample, solve, unipc_solve, GuidanceConfig, JointField, Schedule, Solution, Solver,
};
use twinflow::{Result, Tensor};

struct Constant(f64, f64);

impl JointField for Constant {
    fn velocity(&self, z_v: &Tensor, _: f64, z_a: &Tensor, _: f64, _: &[usize]) -> Result<(Tensor, Tensor)> {
        Ok((Tensor::full(z_v.shape(), self.0), Tensor::full(z_a.shape(), self.1)))
    }
}

/// `dz/dt = z` in both towers.
struct Growth;

impl JointField for Growth {
    fn velocity(&self, z_v: &Tensor, _: f64, z_a: &Tensor, _: f64, _: &[usize]) -> Result<(Tensor, Tensor)> {
        Ok((z_v.clone(), z_a.clone()))
    }
}

fn start() -> (Tensor, Tensor) {
    (uniform(&[3, 2], 0.5, 2.0, 1), uniform(&[5, 2], 0.5, 2.0, 2))
}

fn run(solver: Solver, field: &dyn JointField, n: usize) -> Solution {
    let (zv, za) = start();
    solve(solver, field, &zv, &za, &[1], &Schedule::uniform(n).unwrap(), None).unwrap()
}

/// Largest relative error of both terminal states against `e * z0`.
fn growth_err(s: &Solution) -> f64 {
    let (zv, za) = start();
    let e = std::f64::consts::E;
    zv.data()
        .iter()
        .zip(s.z_v.data())
        .chain(za.data().iter().zip(s.z_a.data()))
        .map(|(z0, z1)| (z1 - e * z0).abs() / (e * z0))
        .fold(0.0, f64::max)
}

fn fitted_order(solver: Solver) -> f64 {
    let pts: Vec<(f64, f64)> =
        [8, 16, 32, 64].iter().map(|&n| ((n as f64).ln(), growth_err(&run(solver, &Growth, n)).ln())).collect();
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let num: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = pts.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    -num / den
}

#[test]
fn constant_fields_are_exact() {
    let (zv, za) = start();
    for (solver, ns) in [(Solver::Euler, &[1usize, 2, 3, 4, 7, 16][..]), (Solver::Unipc, &[2, 3, 4, 7, 16][..])] {
        for &n in ns {
            let s = run(solver, &Constant(0.75, -2.5), n);
            for (a, b) in s.z_v.data().iter().zip(zv.data()) {
                assert!((a - (b + 0.75)).abs() <= 1e-12, "{solver} n={n}");
            }
            for (a, b) in s.z_a.data().iter().zip(za.data()) {
                assert!((a - (b - 2.5)).abs() <= 1e-12, "{solver} n={n}");
            }
            assert_eq!(s.stats.nfe, n);
        }
    }
}

#[test]
fn dyadic_grids_are_bit_exact_on_constant_fields() {
    let (zv, _) = start();
    for n in [1, 4, 16] {
        let s = run(Solver::Euler, &Constant(0.5, 0.25), n);
        for (a, b) in s.z_v.data().iter().zip(zv.data()) {
            assert_eq!(*a, b + 0.5);
        }
    }
}

#[test]
fn convergence_orders() {
    let (euler, unipc) = (fitted_order(Solver::Euler), fitted_order(Solver::Unipc));
    assert!(euler >= 0.9, "euler order {euler}");
    assert!(unipc >= 1.8, "unipc order {unipc}");
    for n in [8, 16, 32, 64] {
        assert!(growth_err(&run(Solver::Unipc, &Growth, n)) <= growth_err(&run(Solver::Euler, &Growth, n)));
    }
}

fn rel_diff(a: &Solution, b: &Solution) -> f64 {
    a.z_v
        .data()
        .iter()
        .zip(b.z_v.data())
        .chain(a.z_a.data().iter().zip(b.z_a.data()))
        .map(|(x, y)| (x - y).abs() / y.abs())
        .fold(0.0, f64::max)
}

#[test]
fn solvers_meet_as_steps_grow() {
    // At 256 steps the gap is Euler's own truncation error, about 1/(2n).
    let (e, u) = (run(Solver::Euler, &Growth, 256), run(Solver::Unipc, &Growth, 256));
    let gap = rel_diff(&e, &u);
    let euler_err = growth_err(&e);
    assert!((gap - euler_err).abs() < 0.01 * euler_err, "{gap} vs {euler_err}");
    assert!((gap - 1.0 / 512.0).abs() < 1e-5, "{gap}");
    let (e, u) = (run(Solver::Euler, &Growth, 512), run(Solver::Unipc, &Growth, 512));
    assert!(rel_diff(&e, &u) < 1e-3);
}

#[test]
fn unipc_needs_two_steps() {
    let (zv, za) = start();
    let one = Schedule::uniform(1).unwrap();
    assert!(matches!(unipc_solve(&Growth, &zv, &za, &[1], &one, None), Err(twinflow::Error::Config(_))));
    assert!(euler_solve(&Growth, &zv, &za, &[1], &one, None).is_ok());
}

/// Records every `(t_v, t_a)` pair handed to the wrapped field.
struct Recording<'a> {
    inner: &'a TwinModel,
    seen: RefCell<Vec<(f64, f64)>>,
}

impl JointField for Recording<'_> {
    fn velocity(&self, z_v: &Tensor, t_v: f64, z_a: &Tensor, t_a: f64, cond: &[usize]) -> Result<(Tensor, Tensor)> {
        assert_eq!(t_v.to_bits(), t_a.to_bits());
        self.seen.borrow_mut().push((t_v, t_a));
        self.inner.velocity(z_v, t_v, z_a, t_a, cond)
    }
}

#[test]
fn every_solver_step_shares_its_timestep() {
    let m = perturbed_toy(3);
    let rec = Recording { inner: &m, seen: RefCell::new(Vec::new()) };
    let (zv, za) = (uniform(&[5, 8], -1.0, 1.0, 4), uniform(&[20, 8], -1.0, 1.0, 5));
    let sched = Schedule::uniform(6).unwrap();
    let g = GuidanceConfig::new(3.0, 2.0);
    for solver in [Solver::Euler, Solver::Unipc] {
        for guidance in [None, Some(&g)] {
            rec.seen.borrow_mut().clear();
            let s = solve(solver, &rec, &zv, &za, &[5, 9], &sched, guidance).unwrap();
            let seen = rec.seen.borrow();
            assert_eq!(seen.len(), s.stats.forwards);
            assert!(seen.iter().all(|(tv, _)| sched.grid().contains(tv)));
        }
    }
}

#[test]
fn unit_guidance_matches_unguided_and_doubles_forwards() {
    let m = perturbed_toy(12);
    let (zv, za) = (uniform(&[5, 8], -1.0, 1.0, 6), uniform(&[20, 8], -1.0, 1.0, 7));
    let sched = Schedule::uniform(5).unwrap();
    let one = GuidanceConfig::new(1.0, 1.0);
    for solver in [Solver::Euler, Solver::Unipc] {
        let plain = solve(solver, &m, &zv, &za, &[3, 4], &sched, None).unwrap();
        let guided = solve(solver, &m, &zv, &za, &[3, 4], &sched, Some(&one)).unwrap();
        assert_eq!(plain.z_v, guided.z_v);
        assert_eq!(plain.z_a, guided.z_a);
        assert_eq!(plain.stats.forwards, plain.stats.nfe);
        assert_eq!(guided.stats.forwards, 2 * guided.stats.nfe);
        let strong = solve(solver, &m, &zv, &za, &[3, 4], &sched, Some(&GuidanceConfig::new(4.0, 4.0))).unwrap();
        assert_ne!(plain.z_v, strong.z_v);
    }
    assert!(GuidanceConfig::new(-1.0, 1.0).validate().is_err());
}

const PROMPT: &str = "A drummer on a stage. <S>one two<E> <AUDCAP>drums and a voice<ENDAUDCAP>";

#[test]
fn sampling_is_seeded_and_shaped() {
    let m = perturbed_toy(14);
    let sched = Schedule::uniform(4).unwrap();
    let g = GuidanceConfig::default();
    let (v1, a1, p1) = sample(&m, PROMPT, 21, Solver::Unipc, &sched, Some(&g)).unwrap();
    let (v2, a2, p2) = sample(&m, PROMPT, 21, Solver::Unipc, &sched, Some(&g)).unwrap();
    assert_eq!((&v1, &a1, &p1), (&v2, &a2, &p2));
    assert_eq!(v1.shape(), &[5, 8]);
    assert_eq!(a1.shape(), &[20, 8]);
    assert_eq!((p1.nfe, p1.forwards), (4, 8));
    assert_eq!(p1.t_grid, sched.grid());
    assert_eq!(p1.checkpoint_hash, m.checkpoint_hash());
    let (v3, _, _) = sample(&m, PROMPT, 22, Solver::Unipc, &sched, Some(&g)).unwrap();
    assert_ne!(v1, v3);
    assert!(matches!(
        sample(&m, "no caption block", 21, Solver::Euler, &sched, None),
        Err(twinflow::Error::Prompt { offset: 16, .. })
    ));
}
