//! Fits a linear model with the tape and Adam, and checks the tape's gradient
//! against central differences.
//!
//! ```text
//! cargo run --release --example autodiff
//! ```

use orbit_lab::numerics::{
    adam_step, finite_difference_gradient, max_relative_error, AdamConfig, AdamState, Tape, Tensor,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // y = x · [2, -1] + 0.5
    let x = Tensor::new(vec![4, 2], vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0, -1.0, 2.0])?;
    let y = Tensor::new(vec![4, 1], vec![2.5, -0.5, 1.5, -3.5])?;

    let loss = |params: &[Tensor<f64>]| -> Result<f64, orbit_lab::numerics::NumericsError> {
        let mut t = Tape::new();
        let (xv, yv) = (t.constant(x.clone())?, t.constant(y.clone())?);
        let (w, b) = (t.constant(params[0].clone())?, t.constant(params[1].clone())?);
        let p = t.linear(xv, w)?;
        let p = t.add(p, b)?;
        let d = t.sub(p, yv)?;
        let sq = t.mul(d, d)?;
        let l = t.mean(sq)?;
        Ok(t.value(l).data()[0])
    };

    let mut w = Tensor::new(vec![2, 1], vec![0.0, 0.0])?;
    let mut b = Tensor::new(vec![1], vec![0.0])?;
    let mut adam = AdamState::new(&[&w, &b], 0.05, AdamConfig::default());
    for step in 0..=600 {
        let mut t = Tape::new();
        let (xv, yv) = (t.constant(x.clone())?, t.constant(y.clone())?);
        let (wv, bv) = (t.param(w.clone())?, t.param(b.clone())?);
        let p = t.linear(xv, wv)?;
        let p = t.add(p, bv)?;
        let d = t.sub(p, yv)?;
        let sq = t.mul(d, d)?;
        let l = t.mean(sq)?;
        let g = t.backward(l)?;
        let grads = [g.get(wv), g.get(bv)];
        if step % 150 == 0 {
            let numeric = finite_difference_gradient(&loss, &[w.clone(), b.clone()], 1e-5)?;
            println!(
                "step {step:>3}: loss {:.3e}, gradient vs finite differences {:.1e}",
                t.value(l).data()[0],
                max_relative_error(&grads, &numeric, 1e-8)
            );
        }
        adam_step(&mut [&mut w, &mut b], &grads, &mut adam)?;
    }
    println!("w = {:?}, b = {:?}", w.data(), b.data());
    Ok(())
}
