//! Central finite-difference verification of reverse-mode gradients in f64.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, TensorError};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Central-difference step.
    pub step: f64,
    /// Largest accepted relative error.
    pub tolerance: f64,
    /// Coordinates compared per input; larger inputs are subsampled.
    pub max_coords: usize,
    /// Gradient magnitude below which errors are measured absolutely.
    pub scale_floor: f64,
    /// Probe attempts per input before giving up on finding smooth ones.
    pub max_attempts: usize,
    pub seed: u64,
    /// Negative-control hook: scales analytic gradients by `1 + fault`.
    pub fault: Option<f64>,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            step: 1e-3,
            tolerance: 1e-4,
            max_coords: 24,
            max_attempts: 96,
            scale_floor: 1e-6,
            seed: 0,
            fault: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct InputCheck {
    pub label: String,
    /// Probes compared against the analytic gradient.
    pub coords: usize,
    /// Probes whose ±step evaluations crossed a kink and were replaced.
    pub skipped: usize,
    /// `max |analytic − numeric| / max(‖analytic‖∞, ‖numeric‖∞, floor)`.
    pub max_rel_err: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub inputs: Vec<InputCheck>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.inputs.iter().map(|i| i.max_rel_err).fold(0.0, f64::max)
    }

    /// Every compared probe agreed. Inputs whose probes all crossed a kink
    /// are not verified by this report; see [`GradCheckReport::unverified`].
    pub fn passed(&self) -> bool {
        self.inputs.iter().all(|i| i.max_rel_err < self.tolerance)
    }

    pub fn unverified(&self) -> impl Iterator<Item = &str> {
        self.inputs.iter().filter(|i| i.coords == 0).map(|i| i.label.as_str())
    }

    pub fn worst(&self) -> Option<&InputCheck> {
        self.inputs.iter().max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }
}

impl GradCheck {
    /// Compares gradients of the scalar `f(inputs)` against central
    /// differences for every labelled input tensor.
    ///
    /// A probe whose `+step` or `-step` evaluation takes a different branch
    /// of any leaky-ReLU or clamp than the unperturbed pass straddles a
    /// point where `f` is not differentiable; its difference quotient does
    /// not estimate the gradient, so it is replaced by the next coordinate
    /// in the random probe order.
    pub fn run<F>(&self, inputs: &[(String, Tensor<f64>)], f: F) -> Result<GradCheckReport>
    where
        F: for<'t> Fn(&[Var<'t, f64>]) -> Result<Var<'t, f64>>,
    {
        let tape = Tape::<f64>::new();
        let leaves: Vec<_> = inputs.iter().map(|(_, t)| tape.leaf(t.clone(), true)).collect();
        let loss = f(&leaves)?;
        let base_sig = tape.branch_signature();
        let grads = tape.backward(loss)?;
        let analytic: Vec<Vec<f64>> = leaves
            .iter()
            .zip(inputs)
            .map(|(v, (_, t))| match grads.get(v) {
                Some(g) => g.data().to_vec(),
                None => vec![0.0; t.numel()],
            })
            .collect();

        let eval = |values: &[Tensor<f64>]| -> Result<(f64, bool)> {
            let tape = Tape::<f64>::new();
            let vars: Vec<_> = values.iter().map(|t| tape.leaf(t.clone(), false)).collect();
            let out = f(&vars)?;
            let v = out.value();
            if v.numel() != 1 {
                return Err(TensorError::NonScalarLoss(v.shape().to_vec()));
            }
            Ok((v.data()[0], tape.branch_signature() == base_sig))
        };

        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut values: Vec<Tensor<f64>> = inputs.iter().map(|(_, t)| t.clone()).collect();
        let mut report = Vec::with_capacity(inputs.len());
        for (idx, (label, t)) in inputs.iter().enumerate() {
            let order = sample(&mut rng, t.numel(), t.numel()).into_vec();
            let mut a = analytic[idx].clone();
            if let Some(fault) = self.fault {
                a.iter_mut().for_each(|g| *g *= 1.0 + fault);
            }
            let mut probes = Vec::with_capacity(self.max_coords);
            let mut skipped = 0;
            for &j in &order {
                if probes.len() == self.max_coords || probes.len() + skipped == self.max_attempts {
                    break;
                }
                let orig = values[idx].data()[j];
                values[idx].data_mut()[j] = orig + self.step;
                let (plus, smooth_plus) = eval(&values)?;
                values[idx].data_mut()[j] = orig - self.step;
                let (minus, smooth_minus) = eval(&values)?;
                values[idx].data_mut()[j] = orig;
                if smooth_plus && smooth_minus {
                    probes.push((j, (plus - minus) / (2.0 * self.step)));
                } else {
                    skipped += 1;
                }
            }
            let scale = a
                .iter()
                .chain(probes.iter().map(|(_, n)| n))
                .fold(self.scale_floor, |m, v| m.max(v.abs()));
            let max_err = probes
                .iter()
                .map(|&(j, n)| (a[j] - n).abs() / scale)
                .fold(0.0, f64::max);
            report.push(InputCheck {
                label: label.clone(),
                coords: probes.len(),
                skipped,
                max_rel_err: max_err,
            });
        }
        Ok(GradCheckReport {
            inputs: report,
            tolerance: self.tolerance,
        })
    }
}
