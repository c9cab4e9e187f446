//! Synthetic user funnel with known probabilities.
//!
//! Each user has latent traits `z ~ N(0, I)` and a short- and long-horizon
//! activity trend. Static fields are binned noisy projections of the traits,
//! behaviour sequences are Poisson counts whose rates follow the traits and
//! trends. The browse/collect/cart marginals and the purchase-given-behaviour
//! conditionals are logistic in the traits and trends; the conditionals also
//! carry a pairwise trait interaction that no additive model can express.
//!
//! Purchase is realised through the funnel: each behaviour happens with its
//! marginal, and each realised behaviour converts with its conditional. A user
//! purchases if any route converts, so the true purchase probability is
//! `1 - Π_c (1 - p_c · q_c)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as StatNormal};

use super::binning::{bin_numeric, BinningSpec};
use super::record::{Dataset, ExampleRecord, GroundTruth, Labels};
use crate::error::{Error, Result};
use crate::tensor::kernels::sigmoid;

/// Bypasses the logistic model with constant probabilities
/// `(p_browse, p_collect, p_cart, q_browse, q_collect, q_cart)`.
pub type FixedProbabilities = [f64; 6];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub cardinalities: Vec<usize>,
    /// Days in the short sequence.
    pub short_len: usize,
    /// Periods in the long sequence.
    pub long_len: usize,
    /// Behaviour channels per time step.
    pub channels: usize,
    pub trait_dim: usize,
    /// Seeds the coefficients of the generative model (the "world").
    pub coefficient_seed: u64,
    /// Multiplies every logistic coefficient, intercepts included.
    pub coefficient_scale: f64,
    /// Std-dev of per-user logit noise the features cannot see.
    pub label_noise: f64,
    pub train_size: usize,
    pub test_size: usize,
    pub fixed_probabilities: Option<FixedProbabilities>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            cardinalities: vec![10, 10, 10, 10, 10, 10, 8, 8, 8, 8, 6, 4],
            short_len: 14,
            long_len: 8,
            channels: 4,
            trait_dim: 6,
            coefficient_seed: 2021,
            coefficient_scale: 1.0,
            label_noise: 0.3,
            train_size: 50_000,
            test_size: 10_000,
            fixed_probabilities: None,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cardinalities.is_empty() || self.cardinalities.contains(&0) {
            return Err(Error::Config("cardinalities must be non-empty and positive".into()));
        }
        if self.short_len == 0 || self.long_len == 0 || self.channels == 0 || self.trait_dim < 2 {
            return Err(Error::Config(
                "sequence lengths and channels must be positive, trait_dim >= 2".into(),
            ));
        }
        if !(self.coefficient_scale.is_finite() && self.label_noise.is_finite() && self.label_noise >= 0.0) {
            return Err(Error::Config("coefficient_scale and label_noise must be finite".into()));
        }
        if let Some(fixed) = &self.fixed_probabilities {
            if fixed.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::Config("fixed probabilities must lie in [0, 1]".into()));
            }
        }
        Ok(())
    }
}

struct FieldModel {
    loading: Vec<f64>,
    noise: f64,
    bins: BinningSpec,
}

struct Logit {
    intercept: f64,
    traits: Vec<f64>,
    short_trend: f64,
    long_trend: f64,
    interaction: f64,
}

impl Logit {
    fn eval(&self, u: &Latent) -> f64 {
        self.intercept
            + dot(&self.traits, &u.traits)
            + self.short_trend * u.short_trend
            + self.long_trend * u.long_trend
            + self.interaction * u.traits[0] * u.traits[1]
    }
}

struct Latent {
    traits: Vec<f64>,
    short_trend: f64,
    long_trend: f64,
}

/// Coefficients of the generative model, drawn once per coefficient seed.
pub struct FunnelWorld {
    config: GeneratorConfig,
    fields: Vec<FieldModel>,
    channel_base: Vec<f64>,
    channel_traits: Vec<Vec<f64>>,
    short_trend_dir: Vec<f64>,
    long_trend_dir: Vec<f64>,
    marginals: [Logit; 3],
    conditionals: [Logit; 3],
    volume: Logit,
}

const FIELD_NOISE: f64 = 0.35;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize, sd: f64) -> Vec<f64> {
    let normal = Normal::new(0.0, sd).expect("finite sd");
    (0..n).map(|_| normal.sample(rng)).collect()
}

impl FunnelWorld {
    pub fn new(config: &GeneratorConfig) -> Result<Self> {
        config.validate()?;
        let k = config.trait_dim;
        let scale = config.coefficient_scale;
        let mut rng = ChaCha8Rng::seed_from_u64(config.coefficient_seed);

        // The first 2k fields each track one trait; any further fields are noise.
        let informative = config.cardinalities.len().min(2 * k);
        let mut fields = Vec::with_capacity(config.cardinalities.len());
        for (f, &card) in config.cardinalities.iter().enumerate() {
            let mut loading = vec![0.0; k];
            if f < informative {
                loading[f % k] = 1.0;
                let other = (f + 1 + f / k) % k;
                loading[other] += if f < k { 0.25 } else { -0.25 };
            }
            let sd = (dot(&loading, &loading) + FIELD_NOISE * FIELD_NOISE).sqrt();
            let normal = StatNormal::new(0.0, sd).expect("finite sd");
            let edges = (1..card)
                .map(|i| normal.inverse_cdf(i as f64 / card as f64))
                .collect();
            fields.push(FieldModel {
                loading,
                noise: FIELD_NOISE,
                bins: BinningSpec::new(edges)?,
            });
        }

        // Daily rates for browse, collect, cart, purchase, then any extra channels.
        let base_rates = [3.0, 0.4, 0.6, 0.25];
        let channel_base = (0..config.channels)
            .map(|c| f64::ln(*base_rates.get(c).unwrap_or(&0.5)))
            .collect();
        let channel_traits = (0..config.channels)
            .map(|_| gaussian_vec(&mut rng, k, 0.35))
            .collect();
        let short_trend_dir = gaussian_vec(&mut rng, k, 1.0 / (k as f64).sqrt());
        let long_trend_dir = gaussian_vec(&mut rng, k, 1.0 / (k as f64).sqrt());

        let mut logit = |intercept: f64, short: f64, long: f64, interaction: f64, sd: f64| Logit {
            intercept: intercept * scale,
            traits: gaussian_vec(&mut rng, k, sd).into_iter().map(|v| v * scale).collect(),
            short_trend: short * scale,
            long_trend: long * scale,
            interaction: interaction * scale,
        };
        let marginals = [
            logit(0.2, 0.8, 0.4, 0.0, 0.6),
            logit(-1.2, 0.5, 0.6, 0.0, 0.6),
            logit(-0.8, 0.9, 0.3, 0.0, 0.6),
        ];
        let conditionals = [
            logit(-1.8, 0.6, 0.5, 0.9, 0.5),
            logit(-0.6, 0.4, 0.6, 0.9, 0.5),
            logit(0.0, 0.7, 0.4, 0.9, 0.5),
        ];
        let volume = Logit {
            intercept: 0.3 * scale,
            traits: gaussian_vec(&mut rng, k, 0.25).into_iter().map(|v| v * scale).collect(),
            short_trend: 0.3 * scale,
            long_trend: 0.2 * scale,
            interaction: 0.0,
        };

        Ok(FunnelWorld {
            config: config.clone(),
            fields,
            channel_base,
            channel_traits,
            short_trend_dir,
            long_trend_dir,
            marginals,
            conditionals,
            volume,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    /// Example `index` of the population drawn with `seed`. Each index has its
    /// own random stream, so any slice of the population can be generated
    /// independently.
    pub fn sample(&self, seed: u64, index: u64) -> Result<ExampleRecord> {
        let cfg = &self.config;
        let k = cfg.trait_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index);
        let std = Normal::new(0.0, 1.0).expect("unit normal");

        let traits: Vec<f64> = (0..k).map(|_| std.sample(&mut rng)).collect();
        let latent = Latent {
            short_trend: (dot(&self.short_trend_dir, &traits) + 0.5 * std.sample(&mut rng)).tanh(),
            long_trend: (dot(&self.long_trend_dir, &traits) + 0.5 * std.sample(&mut rng)).tanh(),
            traits,
        };

        let fields = self
            .fields
            .iter()
            .map(|f| {
                let v = dot(&f.loading, &latent.traits) + f.noise * std.sample(&mut rng);
                bin_numeric(v, &f.bins)
            })
            .collect::<Result<Vec<_>>>()?;

        let rates: Vec<f64> = self
            .channel_base
            .iter()
            .zip(&self.channel_traits)
            .map(|(base, w)| (base + dot(w, &latent.traits)).exp())
            .collect();
        let short_seq = counts(&mut rng, &rates, cfg.short_len, latent.short_trend, 1.0);
        let long_seq = counts(&mut rng, &rates, cfg.long_len, latent.long_trend, 7.0);

        let (p, q) = match cfg.fixed_probabilities {
            Some(fixed) => ([fixed[0], fixed[1], fixed[2]], [fixed[3], fixed[4], fixed[5]]),
            None => {
                let mut noisy = |l: &Logit| sigmoid(l.eval(&latent) + cfg.label_noise * std.sample(&mut rng));
                (
                    [noisy(&self.marginals[0]), noisy(&self.marginals[1]), noisy(&self.marginals[2])],
                    [
                        noisy(&self.conditionals[0]),
                        noisy(&self.conditionals[1]),
                        noisy(&self.conditionals[2]),
                    ],
                )
            }
        };

        let mut behaved = [0u8; 3];
        let mut converted = false;
        for c in 0..3 {
            let happened = rng.random::<f64>() < p[c];
            behaved[c] = happened as u8;
            let converts = rng.random::<f64>() < q[c];
            converted |= happened && converts;
        }
        let order_volume = if converted {
            let lambda = self.volume.eval(&latent).exp();
            1 + Poisson::new(lambda).expect("positive rate").sample(&mut rng) as u32
        } else {
            0
        };

        let p_purchase = 1.0 - (0..3).map(|c| 1.0 - p[c] * q[c]).product::<f64>();
        Ok(ExampleRecord {
            fields,
            short_seq,
            long_seq,
            labels: Labels {
                browse: behaved[0],
                collect: behaved[1],
                cart: behaved[2],
                purchase: converted as u8,
            },
            order_volume,
            truth: Some(GroundTruth {
                p_browse: p[0],
                p_collect: p[1],
                p_cart: p[2],
                q_browse: q[0],
                q_collect: q[1],
                q_cart: q[2],
                p_purchase,
            }),
        })
    }

    /// Examples `offset .. offset + count` of the population drawn with `seed`.
    pub fn population(&self, seed: u64, offset: u64, count: usize) -> Result<Dataset> {
        (0..count as u64).map(|i| self.sample(seed, offset + i)).collect()
    }
}

fn counts(rng: &mut ChaCha8Rng, rates: &[f64], steps: usize, trend: f64, span: f64) -> Vec<Vec<u32>> {
    (0..steps)
        .map(|s| {
            let position = if steps > 1 {
                s as f64 / (steps - 1) as f64 - 0.5
            } else {
                0.0
            };
            let lift = (1.5 * trend * position).exp();
            rates
                .iter()
                .map(|r| {
                    let lambda = (r * span * lift).clamp(1e-6, 1e6);
                    Poisson::new(lambda).expect("positive rate").sample(rng) as u32
                })
                .collect()
        })
        .collect()
}

/// Train and test splits of one synthetic population.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticData {
    pub train: Dataset,
    pub test: Dataset,
}

/// Draws `train_size + test_size` users; the test split continues the index
/// range of the training split, so the two never share a random stream.
pub fn generate_synthetic(config: &GeneratorConfig, seed: u64) -> Result<SyntheticData> {
    let world = FunnelWorld::new(config)?;
    let train = world.population(seed, 0, config.train_size)?;
    let test = world.population(seed, config.train_size as u64, config.test_size)?;
    Ok(SyntheticData { train, test })
}
