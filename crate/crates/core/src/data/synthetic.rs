use crate::data::{Dataset, FieldSchema, Instance};
use crate::error::{Error, Result};
use crate::numerics::{sigmoid_scalar, Rng};

/// Parameters of the planted-interaction generator.
///
/// Every field draws its value uniformly from `1..=vocab_size`. The click
/// logit is
///
/// ```text
/// bias + main_scale · Σ_{i∈I} a_i[x_i]
///      + interaction_scale · Σ_{i<j∈I} ⟨u_i[x_i], u_j[x_j]⟩ / √latent_dim
/// ```
///
/// over the informative set `I`; the other fields carry no signal.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub n_fields: usize,
    pub n_informative: usize,
    pub vocab_size: usize,
    pub n_rows: usize,
    pub seed: u64,
    pub latent_dim: usize,
    pub interaction_scale: f64,
    pub main_scale: f64,
    pub bias: f64,
}

impl SyntheticSpec {
    pub fn new(n_fields: usize, n_informative: usize, vocab_size: usize, n_rows: usize, seed: u64) -> Self {
        Self {
            n_fields,
            n_informative,
            vocab_size,
            n_rows,
            seed,
            latent_dim: 4,
            interaction_scale: 2.0,
            main_scale: 0.3,
            bias: -0.3,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub dataset: Dataset,
    /// Informative field positions, ascending.
    pub informative: Vec<usize>,
    /// True click probability of each instance.
    pub bayes_scores: Vec<f64>,
}

impl SyntheticData {
    /// Bayes scores aligned with a subset of instances given by index.
    pub fn scores_for(&self, rows: &[usize]) -> Vec<f64> {
        rows.iter().map(|&i| self.bayes_scores[i]).collect()
    }
}

pub fn generate_synthetic(
    n_fields: usize,
    n_informative: usize,
    vocab_size: usize,
    n_rows: usize,
    seed: u64,
) -> Result<SyntheticData> {
    SyntheticSpec::new(n_fields, n_informative, vocab_size, n_rows, seed).generate()
}

impl SyntheticSpec {
    pub fn generate(&self) -> Result<SyntheticData> {
        if self.n_fields == 0 || self.n_informative > self.n_fields {
            return Err(Error::Parameter(format!(
                "need 0 <= n_informative ({}) <= n_fields ({}) and n_fields > 0",
                self.n_informative, self.n_fields
            )));
        }
        if self.vocab_size == 0 || self.latent_dim == 0 {
            return Err(Error::Parameter("vocab_size and latent_dim must be positive".into()));
        }
        let root = Rng::new(self.seed);

        let mut fields: Vec<usize> = (0..self.n_fields).collect();
        root.derive(1).shuffle(&mut fields);
        let mut informative = fields[..self.n_informative].to_vec();
        informative.sort_unstable();

        let mut prm = root.derive(2);
        let r = self.latent_dim;
        // Tables indexed by value 1..=vocab_size; slot 0 unused.
        let main: Vec<Vec<f64>> = informative
            .iter()
            .map(|_| (0..=self.vocab_size).map(|_| prm.normal()).collect())
            .collect();
        let latent: Vec<Vec<f64>> = informative
            .iter()
            .map(|_| (0..(self.vocab_size + 1) * r).map(|_| prm.normal()).collect())
            .collect();
        let norm = 1.0 / (r as f64).sqrt();

        let mut draw = root.derive(3);
        let mut instances = Vec::with_capacity(self.n_rows);
        let mut bayes_scores = Vec::with_capacity(self.n_rows);
        for _ in 0..self.n_rows {
            let indices: Vec<u32> = (0..self.n_fields)
                .map(|_| 1 + draw.below(self.vocab_size) as u32)
                .collect();
            let mut logit = self.bias;
            for (a, &f) in informative.iter().enumerate() {
                logit += self.main_scale * main[a][indices[f] as usize];
            }
            for a in 0..informative.len() {
                let xa = indices[informative[a]] as usize;
                for b in a + 1..informative.len() {
                    let xb = indices[informative[b]] as usize;
                    let dot: f64 = (0..r)
                        .map(|c| latent[a][xa * r + c] * latent[b][xb * r + c])
                        .sum();
                    logit += self.interaction_scale * norm * dot;
                }
            }
            let p = sigmoid_scalar(logit);
            let label = u8::from(draw.uniform() < p);
            bayes_scores.push(p);
            instances.push(Instance::new(indices, label));
        }
        let schema = (0..self.n_fields)
            .map(|i| FieldSchema::categorical(format!("f{i}")))
            .collect();
        let dataset = Dataset::new(schema, vec![self.vocab_size + 1; self.n_fields], instances)?;
        Ok(SyntheticData {
            dataset,
            informative,
            bayes_scores,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_data() {
        let a = generate_synthetic(6, 2, 7, 300, 5).unwrap();
        let b = generate_synthetic(6, 2, 7, 300, 5).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.informative, b.informative);
        assert_eq!(a.bayes_scores, b.bayes_scores);
        assert_eq!(a.informative.len(), 2);
    }

    #[test]
    fn no_informative_fields_means_constant_score() {
        let s = generate_synthetic(4, 0, 5, 200, 1).unwrap();
        assert!(s.bayes_scores.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn indices_stay_in_range() {
        let s = generate_synthetic(5, 3, 4, 500, 2).unwrap();
        assert!(s
            .dataset
            .instances
            .iter()
            .all(|i| i.indices.iter().all(|&x| (1..=4).contains(&x))));
        assert!(generate_synthetic(3, 4, 5, 10, 0).is_err());
    }
}
