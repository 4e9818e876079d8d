//! Multiple-access schemes and their decoding models.
//!
//! Every scheme shares the channels, the sensing constraint and the power
//! budget; they differ only in which streams interfere with which decoder
//! and in bandwidth:
//!
//! | scheme  | common stream | private bandwidth | private interference                    |
//! |---------|---------------|-------------------|-----------------------------------------|
//! | CoRSMA  | yes           | `B`               | all other private streams               |
//! | SDMA    | no            | `B`               | all other private streams               |
//! | NOMA    | no            | `B/U`             | stronger CSs of the same cluster only   |
//! | OMA     | no            | `B/K`             | none                                    |
//!
//! [`rate_model`] builds the decoding structure consumed by the exact
//! evaluator and the optimizers. The free functions [`sdma_rate`],
//! [`noma_rates`] and [`oma_rate`] evaluate each scheme's rate formula
//! directly and serve as independent references.

use serde::{Deserialize, Serialize};

use crate::association::Association;
use crate::channel::Channels;
use crate::rates::{rate, BeamformingState, CsLink, RateModel, Stream};
use crate::scenario::Scenario;
use crate::types::{inner_sq, norm_sq};

/// Runs the shared pipeline under a comparison scheme.
///
/// The baseline optimizers are this crate's constructions: each scheme
/// goes through the same association, deployment and relaxed beamforming
/// stages as CoRSMA, with its own decoding model. SDMA has no common
/// stream, NOMA decodes in SIC order over `B/U` and OMA transmits
/// interference-free over `B/K`. The sensing constraint and power budget
/// are the same for every scheme.
pub fn optimize_baseline(scheme: Scheme, scenario: &Scenario, opts: &crate::pipeline::RunOptions) -> crate::Result<crate::pipeline::Solution> {
    crate::pipeline::run(scenario, &crate::pipeline::RunOptions { scheme, ..*opts })
}

/// Multiple-access scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Scheme {
    #[default]
    #[serde(rename = "corsma")]
    CoRsma,
    #[serde(rename = "sdma")]
    Sdma,
    #[serde(rename = "noma")]
    Noma,
    #[serde(rename = "oma")]
    Oma,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::CoRsma, Scheme::Sdma, Scheme::Noma, Scheme::Oma];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::CoRsma => "corsma",
            Scheme::Sdma => "sdma",
            Scheme::Noma => "noma",
            Scheme::Oma => "oma",
        }
    }

    pub fn has_common(self) -> bool {
        self == Scheme::CoRsma
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Scheme {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Scheme::ALL
            .into_iter()
            .find(|x| x.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown scheme `{s}` (expected corsma, sdma, noma or oma)"))
    }
}

/// Members of cluster `u` sorted by ascending `‖h_{u,k}‖`, ties by index.
pub fn noma_order(ch: &Channels, u: usize, members: &[usize]) -> Vec<usize> {
    let mut order = members.to_vec();
    order.sort_by(|&a, &b| norm_sq(&ch.h[u][a]).total_cmp(&norm_sq(&ch.h[u][b])).then(a.cmp(&b)));
    order
}

/// Decoding structure of `scheme` for the given association and channels.
pub fn rate_model(
    scheme: Scheme,
    s: &Scenario,
    association: &Association,
    ch: &Channels,
    sensing_interference: bool,
) -> RateModel {
    let all_private: Vec<(usize, usize)> = association
        .clusters
        .iter()
        .enumerate()
        .flat_map(|(u, c)| c.iter().map(move |&j| (u, j)))
        .collect();
    let sensing: Vec<(usize, Stream)> = if sensing_interference {
        (0..association.n_uav()).map(|u| (u, Stream::Sensing)).collect()
    } else {
        Vec::new()
    };
    let links = (0..s.n_cs)
        .map(|k| {
            let serving = association.serving[k];
            let (private_bandwidth, mut private_interference): (f64, Vec<(usize, Stream)>) = match scheme {
                Scheme::CoRsma | Scheme::Sdma => (
                    s.bandwidth,
                    all_private.iter().filter(|(_, j)| *j != k).map(|&(u, j)| (u, Stream::Private(j))).collect(),
                ),
                Scheme::Noma => {
                    let order = noma_order(ch, serving, &association.clusters[serving]);
                    let pos = order.iter().position(|&j| j == k).expect("k is in its cluster");
                    (
                        s.bandwidth / association.n_uav() as f64,
                        order[pos + 1..].iter().map(|&j| (serving, Stream::Private(j))).collect(),
                    )
                }
                Scheme::Oma => (s.bandwidth / s.n_cs as f64, Vec::new()),
            };
            // Under NOMA and OMA the sensing beam shares the serving UAV's band only.
            let sensing_here: Vec<(usize, Stream)> = match scheme {
                Scheme::CoRsma | Scheme::Sdma => sensing.clone(),
                Scheme::Noma | Scheme::Oma => {
                    sensing.iter().copied().filter(|(u, _)| *u == serving).collect()
                }
            };
            private_interference.extend(sensing_here.iter().copied());
            let (common_bandwidth, common_interference) = if scheme.has_common() {
                let mut ci: Vec<(usize, Stream)> =
                    all_private.iter().map(|&(u, j)| (u, Stream::Private(j))).collect();
                ci.extend(sensing.iter().copied());
                (Some(s.bandwidth), ci)
            } else {
                (None, Vec::new())
            };
            CsLink { serving, private_bandwidth, common_bandwidth, private_interference, common_interference }
        })
        .collect();
    RateModel { scheme, links }
}

/// SDMA rate of CS `k`, treating every other private stream as noise.
pub fn sdma_rate(k: usize, s: &Scenario, ch: &Channels, beams: &BeamformingState, association: &Association) -> f64 {
    let u = association.serving[k];
    let signal = beams.uavs[u].private_of(k).map_or(0.0, |p| inner_sq(&ch.h[u][k], p));
    let mut interference = 0.0;
    for (i, b) in beams.uavs.iter().enumerate() {
        for (j, p) in &b.private {
            if *j != k {
                interference += inner_sq(&ch.h[i][k], p);
            }
        }
    }
    rate(s.bandwidth, signal / (interference + s.noise_power))
}

/// NOMA rates of all CSs: bandwidth `B/U`, and CS `k` is interfered only
/// by the CSs of its cluster with larger channel norm.
pub fn noma_rates(s: &Scenario, ch: &Channels, beams: &BeamformingState, association: &Association) -> Vec<f64> {
    let bw = s.bandwidth / association.n_uav() as f64;
    let mut out = vec![0.0; s.n_cs];
    for (u, cluster) in association.clusters.iter().enumerate() {
        let norms: Vec<(f64, usize)> = cluster.iter().map(|&k| (norm_sq(&ch.h[u][k]), k)).collect();
        for &k in cluster {
            let nk = norm_sq(&ch.h[u][k]);
            let signal = inner_sq(&ch.h[u][k], beams.uavs[u].private_of(k).expect("served CS has a beam"));
            let interference: f64 = norms
                .iter()
                .filter(|&&(n, j)| n > nk || (n == nk && j > k))
                .map(|&(_, j)| inner_sq(&ch.h[u][k], beams.uavs[u].private_of(j).expect("served CS has a beam")))
                .sum();
            out[k] = rate(bw, signal / (interference + s.noise_power));
        }
    }
    out
}

/// OMA rate of CS `k` over its own `B/K` band.
pub fn oma_rate(k: usize, s: &Scenario, ch: &Channels, beams: &BeamformingState, association: &Association) -> f64 {
    let u = association.serving[k];
    let signal = beams.uavs[u].private_of(k).map_or(0.0, |p| inner_sq(&ch.h[u][k], p));
    rate(s.bandwidth / s.n_cs as f64, signal / s.noise_power)
}

/// `B log₂(1 + ‖h‖² P / σ²)`, the rate of a lone user served with all power.
pub fn single_user_capacity(bandwidth: f64, channel_norm_sq: f64, power: f64, noise: f64) -> f64 {
    rate(bandwidth, channel_norm_sq * power / noise)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ChannelMode;
    use crate::rates::evaluate;
    use crate::types::{c64, point, CVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(seed: u64, u: usize, k: usize) -> (Scenario, Association, Vec<crate::types::Point>, Channels) {
        let mut s = Scenario::defaults(seed);
        s.n_uav = u;
        s.n_cs = k;
        s.cs_positions = crate::scenario::uniform_layout(k, [500.0, 500.0], seed);
        s.rate_threshold = vec![0.0; k];
        s.weights = vec![1.0 / k as f64; k];
        let a = crate::association::kmeans_associate(&s.cs_positions, u, seed, 100, 4).unwrap();
        let pos = a.centroids.clone();
        let ch = Channels::build(&s, ChannelMode::Rayleigh, &pos, seed);
        (s, a, pos, ch)
    }

    fn random_beams(rng: &mut ChaCha8Rng, nt: usize, a: &Association, common: bool) -> BeamformingState {
        let mut b = BeamformingState::zeros(nt, a);
        let rv = |rng: &mut ChaCha8Rng| CVector::from_fn(nt, |_, _| c64(rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1)));
        for ub in &mut b.uavs {
            if common {
                ub.common = rv(rng);
            }
            for (_, p) in &mut ub.private {
                *p = rv(rng);
            }
            ub.sensing = rv(rng);
        }
        b
    }

    #[test]
    fn sdma_model_matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for seed in 0..20 {
            let (s, a, _, ch) = setup(seed, 3, 6);
            let b = random_beams(&mut rng, s.nt, &a, false);
            let model = rate_model(Scheme::Sdma, &s, &a, &ch, false);
            let r = evaluate(&s, &ch, &model, &b, &vec![0.0; 6]).unwrap();
            for k in 0..6 {
                let d = sdma_rate(k, &s, &ch, &b, &a);
                assert!((r.private_rate[k] - d).abs() <= 1e-9 * d.max(1.0));
            }
            // The CoRSMA private rate with zero common beams coincides.
            let rs = evaluate(&s, &ch, &rate_model(Scheme::CoRsma, &s, &a, &ch, false), &b, &vec![0.0; 6]).unwrap();
            assert_eq!(rs.private_rate, r.private_rate);
        }
    }

    #[test]
    fn noma_model_matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for seed in 0..100 {
            let (s, a, _, ch) = setup(seed, 2, 5);
            let b = random_beams(&mut rng, s.nt, &a, false);
            let model = rate_model(Scheme::Noma, &s, &a, &ch, false);
            let r = evaluate(&s, &ch, &model, &b, &vec![0.0; 5]).unwrap();
            let d = noma_rates(&s, &ch, &b, &a);
            for k in 0..5 {
                assert!((r.private_rate[k] - d[k]).abs() <= 1e-9 * d[k].max(1.0));
            }
        }
    }

    #[test]
    fn noma_two_cs_equal_beams() {
        let mut s = Scenario::defaults(0);
        s.n_uav = 1;
        s.n_cs = 2;
        s.cs_positions = vec![point(0.0, 0.0), point(200.0, 0.0)];
        s.rate_threshold = vec![0.0; 2];
        s.weights = vec![0.5; 2];
        let a = Association::from_clusters(vec![vec![0, 1]], vec![point(0.0, 0.0)]);
        let ch = Channels::build(&s, ChannelMode::LosOnes, &[point(0.0, 0.0)], 0);
        let model = rate_model(Scheme::Noma, &s, &a, &ch, false);
        // CS 1 is farther, hence weaker, and sees CS 0's stream.
        assert_eq!(model.links[1].private_interference, vec![(0, Stream::Private(0))]);
        assert!(model.links[0].private_interference.is_empty());
        assert_eq!(model.links[0].private_bandwidth, s.bandwidth);
    }

    #[test]
    fn noma_single_member_cluster_is_interference_free() {
        let (s, a, _, ch) = setup(3, 3, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = random_beams(&mut rng, s.nt, &a, false);
        let r = noma_rates(&s, &ch, &b, &a);
        for k in 0..3 {
            let u = a.serving[k];
            let snr = inner_sq(&ch.h[u][k], b.uavs[u].private_of(k).unwrap()) / s.noise_power;
            assert!((r[k] - s.bandwidth / 3.0 * (1.0 + snr).log2()).abs() <= 1e-9 * r[k]);
        }
    }

    #[test]
    fn oma_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (mut s, a, _, ch) = setup(5, 2, 4);
        let b = random_beams(&mut rng, s.nt, &a, false);
        let model = rate_model(Scheme::Oma, &s, &a, &ch, true);
        let r = evaluate(&s, &ch, &model, &b, &vec![0.0; 4]).unwrap();
        for k in 0..4 {
            let u = a.serving[k];
            let snr = inner_sq(&ch.h[u][k], b.uavs[u].private_of(k).unwrap()) / s.noise_power;
            let direct = s.bandwidth / 4.0 * (1.0 + snr).log2();
            assert!((oma_rate(k, &s, &ch, &b, &a) - direct).abs() <= 1e-9 * direct);
            // Sensing interference enabled: OMA link sees its own UAV's sensing beam only.
            assert_eq!(model.links[k].private_interference, vec![(u, Stream::Sensing)]);
            let _ = r.private_rate[k];
        }
        let full = oma_rate(0, &s, &ch, &b, &a);
        s.bandwidth /= 2.0;
        assert!((oma_rate(0, &s, &ch, &b, &a) - full / 2.0).abs() <= 1e-12 * full);
    }

    #[test]
    fn single_cs_schemes_coincide() {
        let (s, a, _, ch) = setup(6, 1, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let b = random_beams(&mut rng, s.nt, &a, false);
        let sd = sdma_rate(0, &s, &ch, &b, &a);
        let om = oma_rate(0, &s, &ch, &b, &a);
        assert!((sd - om).abs() <= 1e-12 * sd);
    }

    #[test]
    fn noma_order_is_label_invariant() {
        let (s, a, _, ch) = setup(8, 1, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let b = random_beams(&mut rng, s.nt, &a, false);
        let rates = noma_rates(&s, &ch, &b, &a);
        // Reverse the membership list: the order comes from norms, not input order.
        let mut rev = a.clone();
        rev.clusters[0].reverse();
        let model = rate_model(Scheme::Noma, &s, &rev, &ch, false);
        let r = evaluate(&s, &ch, &model, &b, &vec![0.0; 5]).unwrap();
        for k in 0..5 {
            assert!((r.private_rate[k] - rates[k]).abs() <= 1e-9 * rates[k].max(1.0));
        }
    }

    #[test]
    fn scheme_names_round_trip() {
        for sc in Scheme::ALL {
            assert_eq!(sc.name().parse::<Scheme>().unwrap(), sc);
            assert_eq!(serde_json::to_string(&sc).unwrap(), format!("\"{}\"", sc.name()));
        }
        assert!("rsma".parse::<Scheme>().is_err());
    }
}
