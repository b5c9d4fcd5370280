mod common;

use chronocon::losses::{chronocon_loss, dae_loss, ordinal_loss, rnc_loss, rnc_time_loss, simclr_loss};
use chronocon::model::EncoderSpec;
use chronocon::nn::{Activation, Mlp};
use chronocon::pairing::{chrono_pairs, ordinal_label_pairs, rnc_label_pairs, rnc_time_pairs, simclr_pairs};
use chronocon::{Sample, Similarity};
use common::*;
use ndarray::{Array2, ArrayView2};
use rand::Rng as _;

/// Contrastive loss of `variant` plus, with a decoder, the weighted
/// reconstruction error. Returns the value and the gradient with respect to
/// the encoder output.
fn head_loss(
    variant: usize,
    batch: &[Sample],
    emb: ArrayView2<f64>,
    x: ArrayView2<f64>,
    decoder: Option<&Mlp>,
) -> (f64, Array2<f64>) {
    let sim = Similarity::default();
    let out = match variant {
        0 => chronocon_loss(&chrono_pairs(batch), emb, sim),
        1 => rnc_time_loss(&rnc_time_pairs(batch), emb, sim),
        2 => rnc_loss(&rnc_label_pairs(batch, 0).unwrap(), emb, sim),
        _ => ordinal_loss(&ordinal_label_pairs(batch, 0).unwrap(), emb, sim),
    }
    .unwrap();
    let mut value = out.value;
    let mut grad = out.grad;
    if let Some(dec) = decoder {
        let (rec, cache) = dec.forward_cached(emb);
        let (v, d_rec) = dae_loss(x, rec.view()).unwrap();
        let (_, d_emb) = dec.backward(&cache, d_rec.view());
        value += 1e3 * v;
        grad.scaled_add(1e3, &d_emb);
    }
    (value, grad)
}

fn with_params(enc: &EncoderSpec, p: &Array2<f64>) -> EncoderSpec {
    let mut e = enc.clone();
    e.net.params_mut().copy_from_slice(p.as_slice().unwrap());
    e
}

#[test]
fn encoder_composed_objectives_match_finite_differences() {
    let mut r = rng(20);
    let mut worst: f64 = 0.0;
    let mut instances = 0;
    while instances < 100 {
        let batch = random_batch(&mut r, 12, 3, false);
        let input = r.random_range(2..6);
        let act = if instances % 2 == 0 { Activation::Tanh } else { Activation::Relu };
        let mut enc = EncoderSpec::new(input, &[5], 3, act, &mut r);
        let x = random_matrix(&mut r, batch.len(), input, 1.0).mapv(|v| 0.5 + 0.5 * v);
        let reference = random_matrix(&mut r, 8, input, 1.0).mapv(|v| 0.5 + 0.5 * v);
        enc.fit_normalization(reference.view());
        let decoder = (instances % 3 == 0).then(|| Mlp::new(&[3, 4, input], Activation::Tanh, &mut r));
        let variant = instances % 4;

        let (emb, cache) = enc.forward_cached(x.view());
        let (_, d_emb) = head_loss(variant, &batch, emb.view(), x.view(), decoder.as_ref());
        let analytic = enc.backward(&cache, d_emb.view());
        let p0 = Array2::from_shape_vec((1, analytic.len()), enc.net.params().to_vec()).unwrap();
        let fd = finite_difference(&p0, 1e-6, |p| {
            let e = with_params(&enc, p);
            head_loss(variant, &batch, e.embed(x.view()).view(), x.view(), decoder.as_ref()).0
        });
        if analytic.iter().all(|&g| g == 0.0) && fd.iter().all(|g| g.abs() < 1e-9) {
            continue;
        }
        let err = rel_err(&analytic, fd.as_slice().unwrap());
        worst = worst.max(err);
        instances += 1;
    }
    assert!(worst < 1e-4, "worst relative error {worst}");
}

#[test]
fn projector_composed_instance_objective() {
    let mut r = rng(21);
    for _ in 0..20 {
        let batch = random_batch(&mut r, 12, 3, true);
        let input = 4;
        let enc = EncoderSpec::new(input, &[6], 3, Activation::Tanh, &mut r);
        let proj = Mlp::new(&[3, 5, 4], Activation::Tanh, &mut r);
        let x = random_matrix(&mut r, batch.len(), input, 1.0);
        let plan = simclr_pairs(&batch).unwrap();
        let value = |e: &EncoderSpec| {
            let z = proj.forward(e.embed(x.view()).view());
            simclr_loss(&plan, z.view(), Similarity::cosine()).unwrap().value
        };
        let (emb, cache) = enc.forward_cached(x.view());
        let (z, pcache) = proj.forward_cached(emb.view());
        let out = simclr_loss(&plan, z.view(), Similarity::cosine()).unwrap();
        let (_, d_emb) = proj.backward(&pcache, out.grad.view());
        let analytic = enc.backward(&cache, d_emb.view());
        let p0 = Array2::from_shape_vec((1, analytic.len()), enc.net.params().to_vec()).unwrap();
        let fd = finite_difference(&p0, 1e-6, |p| value(&with_params(&enc, p)));
        let err = rel_err(&analytic, fd.as_slice().unwrap());
        assert!(err < 1e-4, "{err}");
    }
}
