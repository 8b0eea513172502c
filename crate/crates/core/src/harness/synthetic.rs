//! Gaussian class blobs for desk-scale runs.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::Dataset;
use crate::randomness::{stream_rng, Domain};

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub clients: Vec<Dataset>,
    pub test: Dataset,
}

fn draw(centers: &[Vec<f64>], count: usize, spread: f64, rng: &mut impl Rng) -> Dataset {
    let dim = centers[0].len();
    let mut features = Vec::with_capacity(count * dim);
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let class = i % centers.len();
        for &c in &centers[class] {
            let z: f64 = StandardNormal.sample(rng);
            features.push(c + spread * z);
        }
        labels.push(class);
    }
    Dataset::new(features, dim, labels).expect("consistent shapes")
}

/// `clients` IID datasets of `per_client` samples each plus a test set of
/// `test_size`, all drawn around the same `classes` centres. Classes are
/// interleaved so every client sees each one.
pub fn make_synthetic(
    classes: usize,
    input_dim: usize,
    clients: usize,
    per_client: usize,
    test_size: usize,
    spread: f64,
    seed: u64,
) -> SyntheticData {
    assert!(classes > 0 && input_dim > 0 && per_client > 0);
    let mut rng = stream_rng(seed, Domain::Synthetic, 0);
    let centers: Vec<Vec<f64>> = (0..classes)
        .map(|_| {
            (0..input_dim)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    2.0 * z
                })
                .collect::<Vec<f64>>()
        })
        .collect();
    let clients = (0..clients)
        .map(|c| {
            let mut rng = stream_rng(seed, Domain::Synthetic, 1 + c as u64);
            draw(&centers, per_client, spread, &mut rng)
        })
        .collect();
    let mut rng = stream_rng(seed, Domain::Synthetic, u64::MAX);
    let test = draw(&centers, test_size.max(1), spread, &mut rng);
    SyntheticData { clients, test }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_and_determinism() {
        let a = make_synthetic(3, 8, 4, 150, 300, 1.0, 5);
        assert_eq!(a.clients.len(), 4);
        assert!(a
            .clients
            .iter()
            .all(|d| d.len() == 150 && d.dim() == 8 && d.class_count() == 3));
        assert_eq!(a.test.len(), 300);
        let b = make_synthetic(3, 8, 4, 150, 300, 1.0, 5);
        assert_eq!(a.clients, b.clients);
        assert_ne!(a.clients[0], a.clients[1]);
        assert_ne!(make_synthetic(3, 8, 4, 150, 300, 1.0, 6).test, a.test);
    }

    #[test]
    fn counts_add_up() {
        let d = make_synthetic(3, 8, 4, 150, 300, 1.0, 9);
        assert_eq!(d.clients.iter().map(|c| c.len()).sum::<usize>(), 600);
    }

    #[test]
    fn single_class_is_trivially_predicted() {
        use crate::model::{Mlp, ModelSpec};
        let d = make_synthetic(1, 4, 2, 10, 20, 1.0, 1);
        let spec = ModelSpec::new(vec![4, 3, 1]).unwrap();
        let w = spec.init_params(0);
        let (_, acc) = Mlp::new(spec).evaluate(w.values(), &d.test).unwrap();
        assert_eq!(acc, 1.0);
    }
}
