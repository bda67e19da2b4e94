//! Trainable encoder standing in for a pretrained language model, the linear
//! classifier head, and the optimizers that update them.

mod checkpoint;
mod optim;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC};
pub use optim::{OptimizerKind, OptimizerState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};

use crate::autodiff::{Matrix, Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Linear,
    /// Two affine layers with a ReLU in between.
    Mlp2 { hidden: usize },
}

/// Xavier-uniform `fan_in × fan_out` matrix.
pub fn xavier_uniform(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Matrix {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Matrix::from_fn(fan_in, fan_out, |_, _| rng.gen_range(-bound..=bound))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub arch: Architecture,
    pub d_in: usize,
    pub d_out: usize,
    pub normalize: bool,
    /// `[w, b]` for linear, `[w1, b1, w2, b2]` for mlp2; biases are 1×n rows.
    pub tensors: Vec<Matrix>,
}

impl EncoderParams {
    pub fn init(arch: Architecture, d_in: usize, d_out: usize, normalize: bool, seed: u64) -> Result<Self> {
        if d_in == 0 || d_out == 0 {
            return Err(Error::invalid("encoder dimensions must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = match arch {
            Architecture::Linear => vec![xavier_uniform(&mut rng, d_in, d_out), Matrix::zeros(1, d_out)],
            Architecture::Mlp2 { hidden } => {
                if hidden == 0 {
                    return Err(Error::invalid("mlp2 hidden width must be positive"));
                }
                vec![
                    xavier_uniform(&mut rng, d_in, hidden),
                    Matrix::zeros(1, hidden),
                    xavier_uniform(&mut rng, hidden, d_out),
                    Matrix::zeros(1, d_out),
                ]
            }
        };
        Ok(Self {
            arch,
            d_in,
            d_out,
            normalize,
            tensors,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let shapes: Vec<(usize, usize)> = match self.arch {
            Architecture::Linear => vec![(self.d_in, self.d_out), (1, self.d_out)],
            Architecture::Mlp2 { hidden } => vec![
                (self.d_in, hidden),
                (1, hidden),
                (hidden, self.d_out),
                (1, self.d_out),
            ],
        };
        let got: Vec<(usize, usize)> = self.tensors.iter().map(Matrix::shape).collect();
        if got != shapes {
            return Err(Error::shape("encoder", format!("expected {shapes:?}, got {got:?}")));
        }
        if self.tensors.iter().any(|t| t.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("encoder parameters".into()));
        }
        Ok(())
    }

    /// Put the parameters on the tape as differentiable leaves.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.param(t.clone())).collect()
    }

    pub fn bind_frozen(&self, tape: &mut Tape) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.constant(t.clone())).collect()
    }

    /// Forward pass for raw features `x` (B×d_in) using bound parameters.
    pub fn encode(&self, tape: &mut Tape, params: &[Var], x: Var) -> Result<Var> {
        if tape.shape(x).1 != self.d_in {
            return Err(Error::shape(
                "encode",
                format!("input {:?} for d_in={}", tape.shape(x), self.d_in),
            ));
        }
        let out = match self.arch {
            Architecture::Linear => {
                let h = tape.matmul(x, params[0])?;
                tape.add_bias(h, params[1])?
            }
            Architecture::Mlp2 { .. } => {
                let h = tape.matmul(x, params[0])?;
                let h = tape.add_bias(h, params[1])?;
                let h = tape.relu(h);
                let o = tape.matmul(h, params[2])?;
                tape.add_bias(o, params[3])?
            }
        };
        if self.normalize {
            tape.l2_row_normalize(out)
        } else {
            Ok(out)
        }
    }

    /// Embeddings as a plain matrix.
    pub fn embed(&self, x: &Matrix) -> Result<Matrix> {
        let mut tape = Tape::new();
        let params = self.bind_frozen(&mut tape);
        let xv = tape.constant(x.clone());
        let z = self.encode(&mut tape, &params, xv)?;
        Ok(tape.value(z).clone())
    }
}

/// Linear `E × C` classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl ClassifierHead {
    pub fn init(embed_dim: usize, num_classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            weight: xavier_uniform(&mut rng, embed_dim, num_classes),
            bias: Matrix::zeros(1, num_classes),
        }
    }

    pub fn zeros(embed_dim: usize, num_classes: usize) -> Self {
        Self {
            weight: Matrix::zeros(embed_dim, num_classes),
            bias: Matrix::zeros(1, num_classes),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.weight.ncols()
    }

    pub fn bind(&self, tape: &mut Tape) -> [Var; 2] {
        [tape.param(self.weight.clone()), tape.param(self.bias.clone())]
    }

    pub fn classify(&self, tape: &mut Tape, params: &[Var; 2], z: Var) -> Result<Var> {
        if tape.shape(z).1 != self.weight.nrows() {
            return Err(Error::shape(
                "classify",
                format!("embeddings {:?} for head {:?}", tape.shape(z), self.weight.shape()),
            ));
        }
        let h = tape.matmul(z, params[0])?;
        tape.add_bias(h, params[1])
    }

    pub fn logits(&self, z: &Matrix) -> Result<Matrix> {
        let mut tape = Tape::new();
        let p = [tape.constant(self.weight.clone()), tape.constant(self.bias.clone())];
        let zv = tape.constant(z.clone());
        let out = self.classify(&mut tape, &p, zv)?;
        Ok(tape.value(out).clone())
    }

    /// Arg-max class per row; ties go to the lowest index.
    pub fn predict(&self, z: &Matrix) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.logits(z)?))
    }
}

pub fn argmax_rows(m: &Matrix) -> Vec<usize> {
    m.row_iter()
        .map(|r| {
            let mut best = 0;
            for j in 1..r.len() {
                if r[j] > r[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
