/// Largest relative error between an analytic gradient and central finite
/// differences, `|a - fd| / max(1e-8, |fd|)`.
///
/// `f` returns the loss and its analytic gradient at a parameter vector.
/// `coords` restricts the check to a subset of coordinates.
pub fn finite_diff_check<F>(mut f: F, params: &[f64], step: f64, coords: Option<&[usize]>) -> f64
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let (_, analytic) = f(params);
    assert_eq!(analytic.len(), params.len(), "gradient length must match parameters");
    let all: Vec<usize>;
    let idx = match coords {
        Some(c) => c,
        None => {
            all = (0..params.len()).collect();
            &all
        }
    };
    let mut theta = params.to_vec();
    let mut worst = 0.0f64;
    for &i in idx {
        let orig = theta[i];
        theta[i] = orig + step;
        let (up, _) = f(&theta);
        theta[i] = orig - step;
        let (down, _) = f(&theta);
        theta[i] = orig;
        let fd = (up - down) / (2.0 * step);
        let err = (analytic[i] - fd).abs() / fd.abs().max(1e-8);
        worst = worst.max(err);
    }
    worst
}
