//! Nelder-Mead simplex minimization for low-dimensional problems.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplexOptions {
    /// Stop once every vertex is within this distance (max-norm) of the best.
    pub tol: f64,
    pub max_iters: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;

fn sanitize(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

/// Minimizes `f` starting from the axis-aligned simplex `x0`,
/// `x0 + step[i]·e_i`. NaN values count as `+∞`.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], step: &[f64], opts: &SimplexOptions) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    assert_eq!(step.len(), n, "one step per coordinate");
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += step[i];
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| sanitize(f(v))).collect();

    let mut centroid = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut trial2 = vec![0.0; n];
    let mut iterations = 0;
    let mut converged = false;

    loop {
        // order: best first, worst last
        let mut idx: Vec<usize> = (0..=n).collect();
        idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = idx.iter().map(|&i| std::mem::take(&mut simplex[i])).collect();
        values = idx.iter().map(|&i| values[i]).collect();

        let diameter = simplex[1..]
            .iter()
            .flat_map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if diameter <= opts.tol {
            converged = true;
            break;
        }
        if iterations >= opts.max_iters {
            break;
        }
        iterations += 1;

        centroid.iter_mut().for_each(|c| *c = 0.0);
        for v in &simplex[..n] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / n as f64;
            }
        }
        let worst = &simplex[n];
        for i in 0..n {
            trial[i] = centroid[i] + REFLECT * (centroid[i] - worst[i]);
        }
        let fr = sanitize(f(&trial));

        if fr < values[0] {
            for i in 0..n {
                trial2[i] = centroid[i] + EXPAND * (trial[i] - centroid[i]);
            }
            let fe = sanitize(f(&trial2));
            if fe < fr {
                simplex[n].copy_from_slice(&trial2);
                values[n] = fe;
            } else {
                simplex[n].copy_from_slice(&trial);
                values[n] = fr;
            }
            continue;
        }
        if fr < values[n - 1] {
            simplex[n].copy_from_slice(&trial);
            values[n] = fr;
            continue;
        }
        // contraction, outside if the reflection improved on the worst
        let outside = fr < values[n];
        for i in 0..n {
            trial2[i] = if outside {
                centroid[i] + CONTRACT * (trial[i] - centroid[i])
            } else {
                centroid[i] + CONTRACT * (simplex[n][i] - centroid[i])
            };
        }
        let fc = sanitize(f(&trial2));
        if fc < fr.min(values[n]) {
            simplex[n].copy_from_slice(&trial2);
            values[n] = fc;
            continue;
        }
        for j in 1..=n {
            for i in 0..n {
                simplex[j][i] = simplex[0][i] + SHRINK * (simplex[j][i] - simplex[0][i]);
            }
            values[j] = sanitize(f(&simplex[j]));
        }
    }

    Minimum {
        x: simplex.swap_remove(0),
        value: values[0],
        iterations,
        converged: converged && values[0].is_finite(),
    }
}
