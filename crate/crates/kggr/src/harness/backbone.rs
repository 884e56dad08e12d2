//! Trainable stand-in for a full-scale convolutional feature extractor:
//! an s×s stride-s patch embedding followed by tanh and a pointwise layer,
//! producing a (h/s)×(w/s)×N feature grid from an h×w×3 image.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{uniform_init, FeatureGrid};
use crate::diffcore::{Array, Element, Tape, ValueId};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneParams<F: Element> {
    /// Downsampling factor s; image dims must be divisible by it.
    pub patch: usize,
    pub w1: Array<F>, // (s·s·3)×N
    pub b1: Array<F>, // N
    pub w2: Array<F>, // N×N
    pub b2: Array<F>, // N
}

impl<F: Element> BackboneParams<F> {
    pub fn init<R: Rng>(rng: &mut R, patch: usize, channels: usize) -> Self {
        let fan = patch * patch * 3;
        BackboneParams {
            patch,
            w1: uniform_init(rng, vec![fan, channels], fan),
            b1: Array::zeros(vec![channels]),
            w2: uniform_init(rng, vec![channels, channels], channels),
            b2: Array::zeros(vec![channels]),
        }
    }

    pub fn channels(&self) -> usize {
        self.b1.len()
    }

    pub fn to_f64(&self) -> BackboneParams<f64> {
        BackboneParams {
            patch: self.patch,
            w1: self.w1.to_f64(),
            b1: self.b1.to_f64(),
            w2: self.w2.to_f64(),
            b2: self.b2.to_f64(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BackboneIds {
    pub w1: ValueId,
    pub b1: ValueId,
    pub w2: ValueId,
    pub b2: ValueId,
}

pub fn bind_backbone<F: Element>(tape: &mut Tape<F>, params: &BackboneParams<F>) -> BackboneIds {
    BackboneIds {
        w1: tape.param(params.w1.clone()),
        b1: tape.param(params.b1.clone()),
        w2: tape.param(params.w2.clone()),
        b2: tape.param(params.b2.clone()),
    }
}

/// Patch extraction: [h, w, 3] image → [(h/s)·(w/s), s·s·3] rows, ordered
/// to match the feature-grid location convention (row `w·H + h`).
pub fn image_patches<F: Element>(image: &Array<F>, patch: usize) -> Result<Array<F>> {
    let shape = image.shape();
    if shape.len() != 3 || shape[2] != 3 {
        return Err(Error::Config(format!(
            "expected an [h, w, 3] image, got {:?}",
            shape
        )));
    }
    let (h, w) = (shape[0], shape[1]);
    if h % patch != 0 || w % patch != 0 {
        return Err(Error::Config(format!(
            "image {h}×{w} is not divisible by the downsampling factor {patch}"
        )));
    }
    let (gh, gw) = (h / patch, w / patch);
    let row_len = patch * patch * 3;
    let mut data = Vec::with_capacity(gh * gw * row_len);
    let src = image.data();
    for pw in 0..gw {
        for ph in 0..gh {
            for dy in 0..patch {
                for dx in 0..patch {
                    let y = ph * patch + dy;
                    let x = pw * patch + dx;
                    let base = (y * w + x) * 3;
                    data.extend_from_slice(&src[base..base + 3]);
                }
            }
        }
    }
    Ok(Array::from_vec(vec![gh * gw, row_len], data))
}

/// Grid rows on tape: `tanh(patches·W1 + b1)·W2 + b2`.
pub fn backbone_on_tape<F: Element>(
    tape: &mut Tape<F>,
    ids: &BackboneIds,
    patches: ValueId,
) -> Result<ValueId> {
    let rows = tape.value(patches).shape()[0];
    let channels = tape.value(ids.b1).len();
    let ones = tape.constant(Array::from_vec(vec![rows, 1], vec![F::one(); rows]));

    let lin1 = tape.matmul(patches, ids.w1)?;
    let b1_row = tape.reshape(ids.b1, vec![1, channels])?;
    let b1_rep = tape.matmul(ones, b1_row)?;
    let pre1 = tape.add(lin1, b1_rep)?;
    let hidden = tape.tanh(pre1);

    let lin2 = tape.matmul(hidden, ids.w2)?;
    let b2_row = tape.reshape(ids.b2, vec![1, channels])?;
    let b2_rep = tape.matmul(ones, b2_row)?;
    tape.add(lin2, b2_rep)
}

/// Eager forward: image tensor → feature grid.
pub fn tiny_backbone<F: Element>(
    image: &Array<F>,
    params: &BackboneParams<F>,
) -> Result<FeatureGrid<F>> {
    let patches = image_patches(image, params.patch)?;
    let (h, w) = (image.shape()[0], image.shape()[1]);
    let mut tape = Tape::new();
    let ids = bind_backbone(&mut tape, params);
    let p = tape.constant(patches);
    let grid = backbone_on_tape(&mut tape, &ids, p)?;
    Ok(FeatureGrid::from_rows(
        w / params.patch,
        h / params.patch,
        tape.value(grid).clone(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn shape_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params: BackboneParams<f64> = BackboneParams::init(&mut rng, 4, 8);
        let image = Array::zeros(vec![16, 16, 3]);
        let grid = tiny_backbone(&image, &params).unwrap();
        assert_eq!((grid.width(), grid.height(), grid.channels()), (4, 4, 8));
    }

    #[test]
    fn zero_image_zero_final_layer_gives_zero_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut params: BackboneParams<f64> = BackboneParams::init(&mut rng, 2, 4);
        params.w2 = Array::zeros(vec![4, 4]);
        params.b2 = Array::zeros(vec![4]);
        let image = Array::zeros(vec![4, 4, 3]);
        let grid = tiny_backbone(&image, &params).unwrap();
        assert!(grid.rows().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn deterministic_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params: BackboneParams<f64> = BackboneParams::init(&mut rng, 2, 5);
        let image = uniform_init::<f64, _>(&mut rng, vec![6, 4, 3], 1);
        let a = tiny_backbone(&image, &params).unwrap();
        let b = tiny_backbone(&image, &params).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn indivisible_dims_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let params: BackboneParams<f64> = BackboneParams::init(&mut rng, 4, 4);
        let image = Array::zeros(vec![10, 16, 3]);
        assert!(tiny_backbone(&image, &params).is_err());
    }

    #[test]
    fn backbone_gradients_verify() {
        use crate::diffcore::grad_check;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let params: BackboneParams<f64> = BackboneParams::init(&mut rng, 2, 3);
        let image = uniform_init::<f64, _>(&mut rng, vec![4, 4, 3], 1);
        let patches = image_patches(&image, 2).unwrap();

        let named = vec![
            ("w1".to_string(), params.w1.clone()),
            ("b1".to_string(), params.b1.clone()),
            ("w2".to_string(), params.w2.clone()),
            ("b2".to_string(), params.b2.clone()),
        ];
        let build = move |tape: &mut Tape<f64>, ids: &[ValueId]| {
            let bb = BackboneIds {
                w1: ids[0],
                b1: ids[1],
                w2: ids[2],
                b2: ids[3],
            };
            let p = tape.constant(patches.clone());
            let grid = backbone_on_tape(tape, &bb, p)?;
            let sq = tape.square(grid);
            Ok(tape.sum(sq))
        };
        let report = grad_check(&build, &named, 1e-5, 1e-7).unwrap();
        assert!(report.pass, "{report}");
    }
}
