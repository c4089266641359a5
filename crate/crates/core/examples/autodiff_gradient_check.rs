//! Builds a small graph by hand, runs reverse mode, and compares one
//! gradient entry with a central difference.

use hrt::numerics::{Graph, ParamStore, Tensor, LAYER_NORM_EPS};

fn loss(store: &ParamStore, ids: &[hrt::numerics::ParamId]) -> hrt::Result<(f64, Option<hrt::numerics::Gradients>)> {
    let mut g = Graph::new(store);
    let x = g.param(ids[0]);
    let w = g.param(ids[1]);
    let (gain, bias) = (g.param(ids[2]), g.param(ids[3]));
    let h = g.linear(x, w, None)?;
    let h = g.relu(h)?;
    let h = g.layer_norm(h, gain, bias, LAYER_NORM_EPS)?;
    let l = g.cross_entropy(h, &[1, 0], &[0.5, 0.5])?;
    let value = g.scalar(l);
    Ok((value, Some(g.backward(l)?)))
}

fn main() -> hrt::Result<()> {
    let mut store = ParamStore::new();
    let ids = vec![
        store.add("x", Tensor::new(vec![2, 3], vec![0.5, -1.0, 2.0, 1.5, 0.3, -0.7])?),
        store.add("w", Tensor::new(vec![3, 4], (0..12).map(|i| (i as f64 * 0.37).sin()).collect())?),
        store.add("gain", Tensor::new(vec![4], vec![1.0, 0.9, 1.1, 1.2])?),
        store.add("bias", Tensor::new(vec![4], vec![0.0, 0.1, -0.1, 0.2])?),
    ];
    let (value, grads) = loss(&store, &ids)?;
    let analytic = grads.unwrap().get(ids[1]).unwrap()[5];

    let eps = 1e-6;
    let orig = store.value(ids[1]).data()[5];
    store.get_mut(ids[1]).value.data_mut()[5] = orig + eps;
    let up = loss(&store, &ids)?.0;
    store.get_mut(ids[1]).value.data_mut()[5] = orig - eps;
    let down = loss(&store, &ids)?.0;
    let numeric = (up - down) / (2.0 * eps);

    println!("loss {value:.6}");
    println!("dL/dw[1,1]: analytic {analytic:.9}, numeric {numeric:.9}");
    Ok(())
}
