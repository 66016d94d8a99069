use super::{Element, Tensor};

/// Per-channel spatial mean and population standard deviation.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelStats {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl ChannelStats {
    pub fn channels(&self) -> usize {
        self.means.len()
    }
}

/// Mean and standard deviation of every channel over its H×W plane.
///
/// The variance divides by `H·W` (population form). Accumulation is in f64,
/// two passes.
pub fn channel_mean_std<T: Element>(u: &Tensor<T>) -> ChannelStats {
    let n = u.shape().plane() as f64;
    let (means, stds) = u
        .channels()
        .map(|plane| {
            let mean = plane.iter().map(|v| v.to_f64()).sum::<f64>() / n;
            let var = plane
                .iter()
                .map(|v| {
                    let d = v.to_f64() - mean;
                    d * d
                })
                .sum::<f64>()
                / n;
            (mean, var.sqrt())
        })
        .unzip();
    ChannelStats { means, stds }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent::{LatentTensor, Shape};

    #[test]
    fn constant_tensor_has_zero_std() {
        let t = LatentTensor::filled(Shape::new(3, 5, 7).unwrap(), 3.5).unwrap();
        let s = channel_mean_std(&t);
        assert_eq!(s.means, vec![3.5; 3]);
        assert_eq!(s.stds, vec![0.0; 3]);
    }

    #[test]
    fn two_values_hand_arithmetic() {
        let t = LatentTensor::new(Shape::new(1, 1, 2).unwrap(), vec![1.0, 3.0]).unwrap();
        let s = channel_mean_std(&t);
        assert_eq!(s.means, vec![2.0]);
        assert_eq!(s.stds, vec![1.0]);
    }

    #[test]
    fn channels_are_independent() {
        let shape = Shape::new(2, 1, 2).unwrap();
        let t = LatentTensor::new(shape, vec![0.0, 2.0, 10.0, 10.0]).unwrap();
        let s = channel_mean_std(&t);
        assert_eq!(s.means, vec![1.0, 10.0]);
        assert_eq!(s.stds, vec![1.0, 0.0]);
    }
}
