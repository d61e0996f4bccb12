use crate::dynamics::SystemParams;

/// One user's transmission in a slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transmission {
    pub user: usize,
    pub power: f64,
    pub gain: f64,
}

/// Users whose backed-off rate `beta W log2(1 + P H / N0 W)` fits under the
/// SINR-limited capacity, treating every other transmitter as noise.
pub fn capture_decode(tx: &[Transmission], params: &SystemParams, beta: f64) -> Vec<usize> {
    let noise = params.noise_power();
    let total: f64 = tx.iter().map(|t| t.power * t.gain).sum();
    tx.iter()
        .filter(|t| {
            let signal = t.power * t.gain;
            let rate = beta * (signal / noise).ln_1p();
            let interference = (total - signal).max(0.0);
            let capacity = (signal / (interference + noise)).ln_1p();
            rate <= capacity * (1.0 + 1e-12)
        })
        .map(|t| t.user)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> SystemParams {
        SystemParams {
            tau_s: 1e-3,
            bandwidth_hz: 1e3,
            noise_w_per_hz: 1e-3,
            lambda_pkts_per_s: 1.0,
            mean_packet_bits: 1000.0,
            buffer_pkts: 5,
            users: 2,
        }
    }

    #[test]
    fn lone_transmitter_is_decoded() {
        let t = [Transmission { user: 3, power: 10.0, gain: 0.5 }];
        assert_eq!(capture_decode(&t, &params(), 0.9), vec![3]);
        assert_eq!(capture_decode(&t, &params(), 1.0), vec![3]);
    }

    #[test]
    fn equal_strong_pair_collides() {
        let t = [
            Transmission { user: 0, power: 1e4, gain: 1.0 },
            Transmission { user: 1, power: 1e4, gain: 1.0 },
        ];
        assert!(capture_decode(&t, &params(), 0.9).is_empty());
    }

    #[test]
    fn vanishing_rate_always_decodes() {
        let t = [
            Transmission { user: 0, power: 1e4, gain: 1.0 },
            Transmission { user: 1, power: 1e4, gain: 2.0 },
            Transmission { user: 2, power: 5.0, gain: 0.1 },
        ];
        assert_eq!(capture_decode(&t, &params(), 1e-12), vec![0, 1, 2]);
    }
}
