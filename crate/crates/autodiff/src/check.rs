use crate::{Graph, ParamSet, Var};

/// Largest relative discrepancy between analytic and central-difference
/// gradients over every parameter scalar. `build` must return a scalar node.
pub fn max_grad_error(params: &ParamSet, h: f64, build: impl Fn(&mut Graph) -> Var) -> f64 {
    let analytic = {
        let mut g = Graph::new(params);
        let loss = build(&mut g);
        g.backward(loss)
    };
    let eval = |ps: &ParamSet| {
        let mut g = Graph::new(ps);
        let loss = build(&mut g);
        g.value(loss).data()[0]
    };
    let mut work = params.clone();
    let mut worst: f64 = 0.0;
    for id in params.ids() {
        for i in 0..params.get(id).len() {
            let orig = work.get(id).data()[i];
            work.get_mut(id).data_mut()[i] = orig + h;
            let up = eval(&work);
            work.get_mut(id).data_mut()[i] = orig - h;
            let down = eval(&work);
            work.get_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.get(id)[i];
            let denom = a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    worst
}
