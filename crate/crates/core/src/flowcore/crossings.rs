use rayon::prelude::*;

use super::path::OperatorPath;
use super::report::{Crossing, Diagnostics, FlowReport, FlowTerms, Method};
use crate::error::{Error, Result};
use crate::funcalc::eigvalsh;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossingOptions {
    pub initial_samples: usize,
    /// Endpoints must satisfy `min |eigenvalue| > gap_tolerance`.
    pub gap_tolerance: f64,
    pub max_depth: u32,
    pub max_evaluations: usize,
    /// Crossings are located to this fraction of the interval length.
    pub locate_tolerance: f64,
    /// Intervals where an eigenvalue might touch zero without changing sign
    /// are refined down to this fraction of the interval length.
    pub touch_resolution: f64,
}

impl Default for CrossingOptions {
    fn default() -> Self {
        Self {
            initial_samples: 64,
            gap_tolerance: 1e-10,
            max_depth: 48,
            max_evaluations: 100_000,
            locate_tolerance: 1e-9,
            touch_resolution: 1.0 / 4096.0,
        }
    }
}

#[derive(Debug, Clone)]
struct Sample {
    t: f64,
    eig: Vec<f64>,
    neg: usize,
}

impl Sample {
    fn new(t: f64, eig: Vec<f64>) -> Self {
        let neg = eig.iter().filter(|&&l| l < 0.0).count();
        Self { t, eig, neg }
    }
}

struct Oracle<'a> {
    path: &'a OperatorPath,
    opts: &'a CrossingOptions,
    lipschitz: f64,
    min_width: f64,
    touch_width: f64,
    evaluations: usize,
    depth: u32,
    crossings: Vec<Crossing>,
    isolation: Vec<(f64, f64)>,
    touches: Vec<(f64, f64)>,
    warnings: Vec<String>,
}

impl Oracle<'_> {
    fn sample(&mut self, t: f64) -> std::result::Result<Sample, String> {
        if self.evaluations >= self.opts.max_evaluations {
            return Err(format!(
                "evaluation budget {} exhausted; path too wild for the budget",
                self.opts.max_evaluations
            ));
        }
        self.evaluations += 1;
        Ok(Sample::new(t, eigvalsh(&self.path.evaluate(t))))
    }

    /// Some eigenvalue keeps its sign at both ends but could reach zero in
    /// between given the Lipschitz bound.
    fn can_touch(&self, s0: &Sample, s1: &Sample) -> bool {
        let reach = self.lipschitz * (s1.t - s0.t);
        s0.eig
            .iter()
            .zip(&s1.eig)
            .any(|(&l0, &l1)| (l0 < 0.0) == (l1 < 0.0) && l0.abs() + l1.abs() <= reach)
    }

    fn process(&mut self, s0: Sample, s1: Sample, depth: u32) -> std::result::Result<(), String> {
        self.depth = self.depth.max(depth);
        let w = s1.t - s0.t;
        let delta = s0.neg as i64 - s1.neg as i64;
        let mut touch = self.can_touch(&s0, &s1);
        if touch && w <= self.touch_width && delta.abs() <= 1 {
            self.touches.push((s0.t, s1.t));
            touch = false;
        }
        match (delta.abs(), touch) {
            (0, false) => Ok(()),
            (1, false) => {
                let m = self.sample(0.5 * (s0.t + s1.t))?;
                let left = s0.neg as i64 - m.neg as i64;
                let right = m.neg as i64 - s1.neg as i64;
                match (left.abs(), right.abs()) {
                    (1, 0) => {
                        self.isolation.push((s0.t, s1.t));
                        self.locate(s0, m)
                    }
                    (0, 1) => {
                        self.isolation.push((s0.t, s1.t));
                        self.locate(m, s1)
                    }
                    _ => {
                        self.process(s0, m.clone(), depth + 1)?;
                        self.process(m, s1, depth + 1)
                    }
                }
            }
            (k, _) => {
                if k >= 2 && w <= self.min_width {
                    self.warnings.push(format!(
                        "{k} simultaneous crossings near t = {:.12} could not be separated",
                        0.5 * (s0.t + s1.t)
                    ));
                    self.isolation.push((s0.t, s1.t));
                    self.crossings.push(Crossing {
                        t: 0.5 * (s0.t + s1.t),
                        direction: delta.signum() as i32,
                        multiplicity: k as usize,
                        width: w,
                    });
                    return Ok(());
                }
                if depth >= self.opts.max_depth || w <= f64::EPSILON * (1.0 + s0.t.abs()) {
                    return Err(format!(
                        "refinement depth cap {} reached near t = {}; path too wild for the budget",
                        self.opts.max_depth, s0.t
                    ));
                }
                let m = self.sample(0.5 * (s0.t + s1.t))?;
                self.process(s0, m.clone(), depth + 1)?;
                self.process(m, s1, depth + 1)
            }
        }
    }

    /// Bisects an interval holding exactly one sign change down to the
    /// location tolerance.
    fn locate(&mut self, mut s0: Sample, mut s1: Sample) -> std::result::Result<(), String> {
        let delta = s0.neg as i64 - s1.neg as i64;
        while s1.t - s0.t > self.min_width {
            let m = self.sample(0.5 * (s0.t + s1.t))?;
            if m.neg == s0.neg {
                s0 = m;
            } else {
                s1 = m;
            }
        }
        self.crossings.push(Crossing {
            t: 0.5 * (s0.t + s1.t),
            direction: delta.signum() as i32,
            multiplicity: 1,
            width: s1.t - s0.t,
        });
        Ok(())
    }
}

/// Net number of eigenvalues changing sign along the path, counted by
/// sampling sorted spectra with adaptive bisection.
pub fn spectral_flow_crossings(path: &OperatorPath, opts: &CrossingOptions) -> Result<FlowReport> {
    let (a, b) = path.interval();
    if !(b > a) {
        return Err(Error::InvalidArgument(format!("empty interval [{a}, {b}]")));
    }
    let n = opts.initial_samples.max(2);
    let mut grid: Vec<f64> = (0..=n).map(|k| a + (b - a) * k as f64 / n as f64).collect();
    grid.extend(path.breakpoints().iter().copied().filter(|&t| t > a && t < b));
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid[0] = a;
    *grid.last_mut().unwrap() = b;

    let samples: Vec<Sample> = grid
        .par_iter()
        .map(|&t| Sample::new(t, eigvalsh(&path.evaluate(t))))
        .collect();

    for s in [&samples[0], &samples[samples.len() - 1]] {
        let gap = s.eig.iter().fold(f64::INFINITY, |acc, l| acc.min(l.abs()));
        if gap <= opts.gap_tolerance {
            return Err(Error::NonInvertibleEndpoint { t: s.t, gap });
        }
    }

    let mut lipschitz = path.speed_bound(32);
    for pair in samples.windows(2) {
        let dt = pair[1].t - pair[0].t;
        for (l0, l1) in pair[0].eig.iter().zip(&pair[1].eig) {
            lipschitz = lipschitz.max(1.25 * (l1 - l0).abs() / dt);
        }
    }

    let mut oracle = Oracle {
        path,
        opts,
        lipschitz,
        min_width: opts.locate_tolerance * (b - a),
        touch_width: opts.touch_resolution * (b - a),
        evaluations: samples.len(),
        depth: 0,
        crossings: Vec::new(),
        isolation: Vec::new(),
        touches: Vec::new(),
        warnings: Vec::new(),
    };

    let mut failure = None;
    for pair in samples.windows(2) {
        if let Err(reason) = oracle.process(pair[0].clone(), pair[1].clone(), 0) {
            failure = Some(reason);
            break;
        }
    }

    // Intervals next to a located crossing see the crossing branch near zero
    // at their shared endpoint; those are not touches.
    let isolation = std::mem::take(&mut oracle.isolation);
    let touches = oracle
        .touches
        .iter()
        .filter(|(t0, t1)| !isolation.iter().any(|(c0, c1)| t0 == c1 || t1 == c0))
        .count();

    oracle.crossings.sort_by(|x, y| x.t.total_cmp(&y.t));
    let net: i64 = oracle
        .crossings
        .iter()
        .map(|c| c.direction as i64 * c.multiplicity as i64)
        .sum();
    let diagnostics = Diagnostics {
        evaluations: oracle.evaluations,
        refinement_depth: oracle.depth,
        touches,
        crossings: oracle.crossings,
        warnings: oracle.warnings,
        ..Diagnostics::default()
    };
    let report = FlowReport::new(Method::Crossings, net as f64, FlowTerms::default(), diagnostics);
    match failure {
        Some(reason) => Err(Error::NotConverged {
            method: "crossings",
            reason,
            report: Box::new(report),
        }),
        None => {
            let expected = samples[0].neg as i64 - samples[samples.len() - 1].neg as i64;
            debug_assert_eq!(expected, net);
            Ok(report)
        }
    }
}
