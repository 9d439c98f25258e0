//! Named-tensor layouts for the trained networks and the corpus.

use flashdiff_core::autoencoder::Autoencoder;
use flashdiff_core::data::{Corpus, Sample, Split, ToyImageSpec};
use flashdiff_core::latent_diffusion::ScoreModel;
use flashdiff_core::nn::{Activation, Layer, MlpNetwork, TimeEmbedding};
use flashdiff_core::numerics::Tensor;
use flashdiff_core::severity::SeverityEncoder;

use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::error::{HarnessError, Result};

fn push_mlp(ckpt: &mut Checkpoint, prefix: &str, net: &MlpNetwork) {
    for (i, layer) in net.layers().iter().enumerate() {
        ckpt.push(format!("{prefix}.L{i}.W"), layer.weight.clone());
        ckpt.push(format!("{prefix}.L{i}.b"), layer.bias.clone());
    }
}

/// Layers `L0, L1, ...` until the first missing index; tanh on hidden
/// layers, identity on the last.
fn read_mlp(ckpt: &Checkpoint, prefix: &str) -> Result<MlpNetwork> {
    let mut raw = Vec::new();
    while let Ok(w) = ckpt.get(&format!("{prefix}.L{}.W", raw.len())) {
        let b = ckpt.get(&format!("{prefix}.L{}.b", raw.len()))?;
        raw.push((w.clone(), b.clone()));
    }
    if raw.is_empty() {
        return Err(CheckpointError::Missing(format!("{prefix}.L0.W")).into());
    }
    let last = raw.len() - 1;
    let layers = raw
        .into_iter()
        .enumerate()
        .map(|(i, (weight, bias))| Layer {
            weight,
            bias,
            activation: if i == last { Activation::Identity } else { Activation::Tanh },
        })
        .collect();
    Ok(MlpNetwork::from_layers(layers)?)
}

pub fn ae_to_checkpoint(ae: &Autoencoder) -> Checkpoint {
    let mut c = Checkpoint::new();
    push_mlp(&mut c, "ae.enc", ae.encoder());
    push_mlp(&mut c, "ae.dec", ae.decoder());
    c
}

/// Loaded autoencoders are frozen.
pub fn ae_from_checkpoint(ckpt: &Checkpoint, image_shape: [usize; 2]) -> Result<Autoencoder> {
    let enc = read_mlp(ckpt, "ae.enc")?;
    let dec = read_mlp(ckpt, "ae.dec")?;
    Ok(Autoencoder::from_parts(enc, dec, image_shape, true)?)
}

pub fn score_to_checkpoint(score: &ScoreModel) -> Checkpoint {
    let mut c = Checkpoint::new();
    push_mlp(&mut c, "score", score.net());
    c
}

pub fn score_from_checkpoint(ckpt: &Checkpoint, embedding: TimeEmbedding) -> Result<ScoreModel> {
    Ok(ScoreModel::from_parts(read_mlp(ckpt, "score")?, embedding)?)
}

pub fn sev_to_checkpoint(se: &SeverityEncoder) -> Checkpoint {
    let mut c = Checkpoint::new();
    push_mlp(&mut c, "sev.trunk", se.trunk());
    c.push("sev.head.W", se.head().clone());
    c.push("sev.head.b", se.head_bias().clone());
    c
}

pub fn sev_from_checkpoint(ckpt: &Checkpoint) -> Result<SeverityEncoder> {
    let trunk = read_mlp(ckpt, "sev.trunk")?;
    let d = trunk.output_dim();
    let head = ckpt.get_shaped("sev.head.W", &[d, d])?.clone();
    let bias = ckpt.get_shaped("sev.head.b", &[d])?.clone();
    Ok(SeverityEncoder::from_parts(trunk, head, bias)?)
}

const SPLITS: [Split; 3] = [Split::Train, Split::Val, Split::Test];

/// Per split: `corpus.<split>.id`, `.tau`, `.t` (NaN when unset) and
/// `.images` of shape `[n, h, w]`.
pub fn corpus_to_checkpoint(corpus: &Corpus) -> Checkpoint {
    let mut c = Checkpoint::new();
    for split in SPLITS {
        let samples = corpus.split(split);
        let name = split.as_str();
        let n = samples.len();
        c.push(format!("corpus.{name}.id"), Tensor::from_vec(samples.iter().map(|s| s.id as f64).collect()));
        c.push(format!("corpus.{name}.tau"), Tensor::from_vec(samples.iter().map(|s| s.tau).collect()));
        c.push(
            format!("corpus.{name}.t"),
            Tensor::from_vec(samples.iter().map(|s| s.t.unwrap_or(f64::NAN)).collect()),
        );
        let shape = samples.first().map(|s| s.image.shape().to_vec()).unwrap_or_else(|| vec![0, 0]);
        let mut dims = vec![n];
        dims.extend(&shape);
        let data = samples.iter().flat_map(|s| s.image.data().iter().copied()).collect();
        c.push(format!("corpus.{name}.images"), Tensor::new(dims, data).expect("consistent image shapes"));
    }
    c
}

pub fn corpus_from_checkpoint(ckpt: &Checkpoint, spec: &ToyImageSpec, seed: u64) -> Result<Corpus> {
    let mut splits = Vec::new();
    for split in SPLITS {
        let name = split.as_str();
        let ids = ckpt.get(&format!("corpus.{name}.id"))?;
        let n = ids.len();
        let tau = ckpt.get_shaped(&format!("corpus.{name}.tau"), &[n])?;
        let t = ckpt.get_shaped(&format!("corpus.{name}.t"), &[n])?;
        let images = ckpt.get_shaped(&format!("corpus.{name}.images"), &[n, spec.size, spec.size])?;
        let px = spec.size * spec.size;
        let samples: Vec<Sample> = (0..n)
            .map(|k| {
                let id = ids.data()[k];
                if id < 0.0 || id.fract() != 0.0 {
                    return Err(HarnessError::Invalid(format!("corpus id {id} is not a whole number")));
                }
                let image = Tensor::new(vec![spec.size, spec.size], images.data()[k * px..(k + 1) * px].to_vec())?;
                let tk = t.data()[k];
                Ok(Sample {
                    id: id as usize,
                    split,
                    tau: tau.data()[k],
                    t: if tk.is_nan() { None } else { Some(tk) },
                    image,
                })
            })
            .collect::<Result<_>>()?;
        splits.push(samples);
    }
    let test = splits.pop().expect("three splits");
    let val = splits.pop().expect("three splits");
    let train = splits.pop().expect("three splits");
    Ok(Corpus {
        spec: *spec,
        seed,
        train,
        val,
        test,
    })
}
