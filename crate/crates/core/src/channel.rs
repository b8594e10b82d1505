//! Per-link mmWave channel: LOS/NLOS blockage, Nakagami fading, SNR and rate.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use thiserror::Error;

use crate::config::ValidatedConfig;
use crate::geometry::Deployment;
use crate::rng::RandomStream;

#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    #[error("negative distance {0} m")]
    NegativeDistance(f64),
    #[error("negative transmit power {0} W")]
    NegativePower(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LinkState {
    Los,
    Nlos,
}

impl LinkState {
    pub fn pathloss_exponent(self, cfg: &ValidatedConfig) -> f64 {
        match self {
            LinkState::Los => cfg.pathloss_los,
            LinkState::Nlos => cfg.pathloss_nlos,
        }
    }

    pub fn nakagami_order(self, cfg: &ValidatedConfig) -> u32 {
        match self {
            LinkState::Los => cfg.nakagami_los,
            LinkState::Nlos => cfg.nakagami_nlos,
        }
    }
}

/// `(p_los, p_nlos)` with `p_los = e^{-βr}`.
pub fn blockage_probability(r: f64, beta: f64) -> Result<(f64, f64), ChannelError> {
    if r < 0.0 || r.is_nan() {
        return Err(ChannelError::NegativeDistance(r));
    }
    let p_los = (-beta * r).exp();
    Ok((p_los, 1.0 - p_los))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Link {
    pub state: LinkState,
    /// Unit-mean Gamma power fading.
    pub fading: f64,
    /// `r^{-α} h`, without beam gain.
    pub gain: f64,
}

/// Links indexed like [`Deployment::assoc`].
#[derive(Debug, Clone)]
pub struct ChannelRealization {
    pub links: Vec<Vec<Link>>,
}

impl ChannelRealization {
    pub fn gains(&self, ap: usize) -> Vec<f64> {
        self.links[ap].iter().map(|l| l.gain).collect()
    }
}

/// Samples one fading power `h ~ Gamma(N, 1/N)`.
pub fn sample_fading(order: u32, rng: &mut RandomStream) -> f64 {
    let n = f64::from(order);
    Gamma::new(n, 1.0 / n)
        .expect("order validated >= 2")
        .sample(rng)
}

pub fn realize_channel(
    dep: &Deployment,
    cfg: &ValidatedConfig,
    rng: &mut RandomStream,
) -> ChannelRealization {
    let los = Gamma::new(f64::from(cfg.nakagami_los), 1.0 / f64::from(cfg.nakagami_los))
        .expect("validated order");
    let nlos = Gamma::new(f64::from(cfg.nakagami_nlos), 1.0 / f64::from(cfg.nakagami_nlos))
        .expect("validated order");
    let links = dep
        .distances
        .iter()
        .map(|ds| {
            ds.iter()
                .map(|&r| {
                    let p_los = (-cfg.blockage_beta * r).exp();
                    let state = if rng.random::<f64>() < p_los {
                        LinkState::Los
                    } else {
                        LinkState::Nlos
                    };
                    let fading = match state {
                        LinkState::Los => los.sample(rng),
                        LinkState::Nlos => nlos.sample(rng),
                    }
                    // Gamma sampling can underflow to zero for tiny draws
                    .max(f64::MIN_POSITIVE);
                    let gain = r.powf(-state.pathloss_exponent(cfg)) * fading;
                    Link { state, fading, gain }
                })
                .collect()
        })
        .collect();
    ChannelRealization { links }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkRate {
    pub snr: f64,
    /// bit/s
    pub rate: f64,
}

/// `snr = P g G / σ²`, `rate = B log2(1 + snr)`.
pub fn link_rate(power: f64, gain: f64, cfg: &ValidatedConfig) -> Result<LinkRate, ChannelError> {
    if power < 0.0 || power.is_nan() {
        return Err(ChannelError::NegativePower(power));
    }
    Ok(rate_unchecked(power, gain, cfg))
}

#[inline]
pub(crate) fn rate_unchecked(power: f64, gain: f64, cfg: &ValidatedConfig) -> LinkRate {
    let snr = power * gain * cfg.beam_gain / cfg.noise_power;
    LinkRate {
        snr,
        rate: cfg.subchannel_bw * snr.ln_1p() / std::f64::consts::LN_2,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::NetworkConfig;
    use crate::geometry::{associate, deploy_aps, Point};

    fn cfg() -> ValidatedConfig {
        NetworkConfig::default().validate().unwrap()
    }

    #[test]
    fn blockage_values() {
        assert_eq!(blockage_probability(0.0, 0.002).unwrap(), (1.0, 0.0));
        let (l, n) = blockage_probability(500.0, 0.002).unwrap();
        assert!((l - 0.367_879_441).abs() < 1e-8);
        assert!((n - 0.632_120_559).abs() < 1e-8);
        let (l, n) = blockage_probability(100.0, 0.002).unwrap();
        assert!((l - 0.818_730_753).abs() < 1e-8);
        assert_eq!(l + n, 1.0);
        assert_eq!(
            blockage_probability(-1.0, 0.002),
            Err(ChannelError::NegativeDistance(-1.0))
        );
    }

    #[test]
    fn rate_examples() {
        let c = cfg();
        let r = link_rate(0.0, 1e-6, &c).unwrap();
        assert_eq!((r.snr, r.rate), (0.0, 0.0));

        // gain chosen so that snr = 1
        let g = c.noise_power / (1.0 * c.beam_gain);
        let r = link_rate(1.0, g, &c).unwrap();
        assert!((r.snr - 1.0).abs() < 1e-12);
        assert!((r.rate - 10e6).abs() < 1e-3);

        let g = 3.0 * c.noise_power / (0.5 * c.beam_gain);
        let r = link_rate(0.5, g, &c).unwrap();
        assert!((r.snr - 3.0).abs() < 1e-12);
        assert!((r.rate - 20e6).abs() < 1e-3);

        assert!(matches!(
            link_rate(-1.0, 1.0, &c),
            Err(ChannelError::NegativePower(_))
        ));
    }

    #[test]
    fn rate_is_increasing_and_concave_in_power() {
        let c = cfg();
        let g = 1e-7;
        let step = 1e-3;
        let rates: Vec<f64> = (0..200)
            .map(|i| link_rate(i as f64 * step, g, &c).unwrap().rate)
            .collect();
        for w in rates.windows(3) {
            assert!(w[1] > w[0]);
            assert!(w[2] - w[1] <= w[1] - w[0] + 1e-6);
        }
    }

    #[test]
    fn fading_has_unit_mean_and_inverse_mean() {
        let mut rng = RandomStream::new(5);
        let n = 100_000;
        let (mut sum, mut inv) = (0.0, 0.0);
        for _ in 0..n {
            let h = sample_fading(3, &mut rng);
            sum += h;
            inv += 1.0 / h;
        }
        assert!((sum / n as f64 - 1.0).abs() < 0.02);
        assert!((inv / n as f64 - 1.5).abs() < 0.02);
    }

    #[test]
    fn los_fraction_tracks_blockage_law() {
        let c = cfg();
        let layout = deploy_aps(&c).unwrap();
        // UE 100 m east of AP 0 at (87.5, 87.5) still belongs to AP 0
        let ue = Point::new(87.5, 87.5 + 80.0);
        let dep = associate(&layout, &[ue], &c);
        assert_eq!(dep.assoc[0], vec![0]);
        let r = dep.distances[0][0];
        let p = (-c.blockage_beta * r).exp();
        let mut rng = RandomStream::new(17);
        let draws = 20_000;
        let los = (0..draws)
            .filter(|_| realize_channel(&dep, &c, &mut rng).links[0][0].state == LinkState::Los)
            .count();
        let frac = los as f64 / draws as f64;
        let se = (p * (1.0 - p) / draws as f64).sqrt();
        assert!((frac - p).abs() < 2.0 * se + 1e-12, "{frac} vs {p} (se {se})");
    }

    #[test]
    fn realization_is_deterministic_and_consistent() {
        let c = cfg();
        let layout = deploy_aps(&c).unwrap();
        let mut rng = RandomStream::new(8);
        let ues = crate::geometry::sample_ues(&c, &mut rng);
        let dep = associate(&layout, &ues, &c);
        let a = realize_channel(&dep, &c, &mut RandomStream::new(1));
        let b = realize_channel(&dep, &c, &mut RandomStream::new(1));
        for (la, lb) in a.links.iter().zip(&b.links) {
            assert_eq!(la, lb);
        }
        for (n, links) in a.links.iter().enumerate() {
            for (i, l) in links.iter().enumerate() {
                assert!(l.gain > 0.0);
                let r: f64 = dep.distances[n][i];
                let expect = r.powf(-l.state.pathloss_exponent(&c)) * l.fading;
                assert!((l.gain - expect).abs() <= 1e-15 * expect);
            }
        }
    }
}
