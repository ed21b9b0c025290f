//! Box-projected Nelder-Mead with dimension-adaptive coefficients.

/// Outcome of one Nelder-Mead run.
#[derive(Debug, Clone, PartialEq)]
pub struct NmResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NmOptions {
    pub max_evals: usize,
    /// Stop when the spread of simplex values is below `ftol * (1 + |f_best|)`
    /// and the simplex diameter is below `xtol`.
    pub ftol: f64,
    pub xtol: f64,
}

impl Default for NmOptions {
    fn default() -> Self {
        Self { max_evals: 10_000, ftol: 1e-13, xtol: 1e-12 }
    }
}

fn project(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for ((v, l), h) in x.iter_mut().zip(lo).zip(hi) {
        *v = v.clamp(*l, *h);
    }
}

/// Minimize `f` from `x0` with initial simplex steps `step`, keeping every
/// vertex inside `[lo, hi]`.
pub fn nelder_mead(
    mut f: impl FnMut(&[f64]) -> f64,
    x0: &[f64],
    step: &[f64],
    lo: &[f64],
    hi: &[f64],
    opts: NmOptions,
) -> NmResult {
    let n = x0.len();
    let mut start = x0.to_vec();
    project(&mut start, lo, hi);
    if n == 0 {
        let v = f(&start);
        return NmResult { x: start, f: v, evals: 1, converged: true };
    }
    let nf = n as f64;
    // Gao & Han coefficients
    let (alpha, gamma, rho, sigma) = (1.0, 1.0 + 2.0 / nf, 0.75 - 1.0 / (2.0 * nf), 1.0 - 1.0 / nf);
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    let mut values: Vec<f64> = Vec::with_capacity(n + 1);
    let mut evals = 0usize;
    simplex.push(start.clone());
    values.push(f(&start));
    evals += 1;
    for i in 0..n {
        let mut v = start.clone();
        v[i] += step[i];
        project(&mut v, lo, hi);
        if v[i] == start[i] {
            v[i] -= step[i];
            project(&mut v, lo, hi);
        }
        values.push(f(&v));
        simplex.push(v);
        evals += 1;
    }
    let mut order: Vec<usize> = (0..=n).collect();
    let mut centroid = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut trial2 = vec![0.0; n];
    let mut converged = false;
    while evals < opts.max_evals {
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
        let (best, worst, second) = (order[0], order[n], order[n - 1]);
        let spread = values[worst] - values[best];
        let diam = simplex
            .iter()
            .map(|v| v.iter().zip(&simplex[best]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if (spread <= opts.ftol * (1.0 + values[best].abs()) && diam <= opts.xtol.max(1e-300))
            || diam == 0.0
            || (spread == 0.0 && values[best] == f64::MAX)
        {
            converged = true;
            break;
        }
        centroid.iter_mut().for_each(|c| *c = 0.0);
        for &k in order.iter().take(n) {
            for (c, x) in centroid.iter_mut().zip(&simplex[k]) {
                *c += x / nf;
            }
        }
        for j in 0..n {
            trial[j] = centroid[j] + alpha * (centroid[j] - simplex[worst][j]);
        }
        project(&mut trial, lo, hi);
        let fr = f(&trial);
        evals += 1;
        if fr < values[best] {
            for j in 0..n {
                trial2[j] = centroid[j] + gamma * (trial[j] - centroid[j]);
            }
            project(&mut trial2, lo, hi);
            let fe = f(&trial2);
            evals += 1;
            if fe < fr {
                simplex[worst].copy_from_slice(&trial2);
                values[worst] = fe;
            } else {
                simplex[worst].copy_from_slice(&trial);
                values[worst] = fr;
            }
            continue;
        }
        if fr < values[second] {
            simplex[worst].copy_from_slice(&trial);
            values[worst] = fr;
            continue;
        }
        let outside = fr < values[worst];
        for j in 0..n {
            trial2[j] = if outside {
                centroid[j] + rho * (trial[j] - centroid[j])
            } else {
                centroid[j] + rho * (simplex[worst][j] - centroid[j])
            };
        }
        project(&mut trial2, lo, hi);
        let fc = f(&trial2);
        evals += 1;
        if fc < fr.min(values[worst]) {
            simplex[worst].copy_from_slice(&trial2);
            values[worst] = fc;
            continue;
        }
        // shrink toward the best vertex
        let xb = simplex[best].clone();
        for &k in order.iter().skip(1) {
            for j in 0..n {
                simplex[k][j] = xb[j] + sigma * (simplex[k][j] - xb[j]);
            }
            values[k] = f(&simplex[k]);
            evals += 1;
            if evals >= opts.max_evals {
                break;
            }
        }
    }
    let mut best = 0;
    for k in 1..=n {
        if values[k] < values[best] || (values[k] == values[best] && k < best) {
            best = k;
        }
    }
    NmResult { x: simplex[best].clone(), f: values[best], evals, converged }
}
