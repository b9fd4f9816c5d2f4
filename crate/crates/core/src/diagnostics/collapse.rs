use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::norm::layer_norm;
use crate::tensor::{SetBatch, Tensor};

const BUCKET_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bucket {
    /// `(1, -1)`
    Above,
    /// `(-1, 1)`
    Below,
    /// `(0, 0)`
    Zero,
    Other,
}

impl Bucket {
    fn of(p: [f64; 2]) -> Bucket {
        let near = |q: [f64; 2]| (p[0] - q[0]).abs() < BUCKET_TOL && (p[1] - q[1]).abs() < BUCKET_TOL;
        if near([1.0, -1.0]) {
            Bucket::Above
        } else if near([-1.0, 1.0]) {
            Bucket::Below
        } else if near([0.0, 0.0]) {
            Bucket::Zero
        } else {
            Bucket::Other
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollapseReport {
    /// Post-normalization activation of every point, per input shape.
    pub activations: Vec<Vec<[f64; 2]>>,
    /// Counts for `[Above, Below, Zero, Other]`.
    pub bucket_counts: [usize; 4],
    /// Pairs of distinct input shapes with identical activation multisets.
    pub collisions: Vec<(usize, usize)>,
}

fn sorted_buckets(acts: &[[f64; 2]]) -> Vec<Bucket> {
    let mut b: Vec<Bucket> = acts.iter().map(|&p| Bucket::of(p)).collect();
    b.sort_unstable();
    b
}

fn same_points(a: &[[f64; 2]], b: &[[f64; 2]]) -> bool {
    let key = |v: &[[f64; 2]]| {
        let mut k: Vec<(u64, u64)> = v.iter().map(|p| (p[0].to_bits(), p[1].to_bits())).collect();
        k.sort_unstable();
        k
    };
    key(a) == key(b)
}

/// Map 2D points of each shape through `x W` and parameter-free layer norm
/// with `eps = 0`, bucket the results and find shapes that become
/// indistinguishable.
pub fn ln_collapse_demo(shapes: &[Vec<[f64; 2]>], weight: [[f64; 2]; 2]) -> Result<CollapseReport> {
    let ones = Tensor::vector(vec![1.0, 1.0]);
    let zeros = Tensor::vector(vec![0.0, 0.0]);
    let mut activations = Vec::with_capacity(shapes.len());
    let mut bucket_counts = [0usize; 4];
    for shape in shapes {
        if shape.is_empty() {
            return Err(Error::DegenerateInput("empty shape in collapse demo".into()));
        }
        let data: Vec<f64> = shape
            .iter()
            .flat_map(|p| {
                [
                    p[0] * weight[0][0] + p[1] * weight[1][0],
                    p[0] * weight[0][1] + p[1] * weight[1][1],
                ]
            })
            .collect();
        let batch = SetBatch::dense(Tensor::new(&[1, shape.len(), 2], data)?)?;
        let out = layer_norm(&batch, &ones, &zeros, 0.0)?;
        let acts: Vec<[f64; 2]> = out.tensor().data().chunks(2).map(|c| [c[0], c[1]]).collect();
        for &p in &acts {
            bucket_counts[Bucket::of(p) as usize] += 1;
        }
        activations.push(acts);
    }
    let keys: Vec<Vec<Bucket>> = activations.iter().map(|a| sorted_buckets(a)).collect();
    let mut collisions = Vec::new();
    for i in 0..shapes.len() {
        for j in i + 1..shapes.len() {
            if keys[i] == keys[j] && !keys[i].contains(&Bucket::Other) && !same_points(&shapes[i], &shapes[j]) {
                collisions.push((i, j));
            }
        }
    }
    Ok(CollapseReport { activations, bucket_counts, collisions })
}
