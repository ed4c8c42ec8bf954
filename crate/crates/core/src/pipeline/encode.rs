//! Cosine time and node-index encoders.

/// `cos(w_t * dt)` element-wise.
pub fn time_encode(delta_t: f64, w_t: &[f64]) -> Vec<f64> {
    w_t.iter().map(|w| (w * delta_t).cos()).collect()
}

/// `cos(w_n * i)` element-wise.
pub fn node_encode_cosine(node: usize, w_n: &[f64]) -> Vec<f64> {
    let i = node as f64;
    w_n.iter().map(|w| (w * i).cos()).collect()
}

/// How node indices are turned into message slots.
#[derive(Debug, Clone, PartialEq)]
pub enum NodeEncoding {
    /// `cos(w_n * i)`.
    Cosine(Vec<f64>),
    /// The raw index as a 1-vector.
    Identity,
    /// A constant zero vector of the given width; carries no identity.
    Zero(usize),
}

impl NodeEncoding {
    pub fn dim(&self) -> usize {
        match self {
            NodeEncoding::Cosine(w) => w.len(),
            NodeEncoding::Identity => 1,
            NodeEncoding::Zero(d) => *d,
        }
    }
}

pub fn node_encode(node: usize, encoding: &NodeEncoding) -> Vec<f64> {
    match encoding {
        NodeEncoding::Cosine(w_n) => node_encode_cosine(node, w_n),
        NodeEncoding::Identity => vec![node as f64],
        NodeEncoding::Zero(d) => vec![0.0; *d],
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoders {
    pub w_t: Vec<f64>,
    pub node: NodeEncoding,
}

impl Encoders {
    pub fn new(w_t: Vec<f64>, node: NodeEncoding) -> Self {
        Self { w_t, node }
    }

    pub fn time_dim(&self) -> usize {
        self.w_t.len()
    }

    pub fn time(&self, delta_t: f64) -> Vec<f64> {
        time_encode(delta_t, &self.w_t)
    }

    pub fn node(&self, node: usize) -> Vec<f64> {
        node_encode(node, &self.node)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    #[test]
    fn time_encoding_values() {
        assert_eq!(time_encode(0.0, &[0.3, -2.0, 7.5]), vec![1.0; 3]);
        assert_eq!(time_encode(5.0, &[0.0]), vec![1.0]);
        assert_eq!(time_encode(1.0, &[PI]), vec![-1.0]);
    }

    #[test]
    fn node_encoding_values() {
        assert_eq!(node_encode_cosine(0, &[1.0, 2.0]), vec![1.0, 1.0]);
        assert_eq!(node_encode(3, &NodeEncoding::Identity), vec![3.0]);
        assert!(node_encode_cosine(1, &[FRAC_PI_2])[0].abs() < 1e-15);
        assert_eq!(node_encode(9, &NodeEncoding::Zero(2)), vec![0.0, 0.0]);
    }
}
