use std::fmt;

use serde::{Deserialize, Serialize};

/// Adversarial-training regime: which patches enter a hardening pool and how
/// many new train patches each order produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Regime {
    /// Pool holds all patches of orders `<= n` rather than only order `n`.
    pub successive: bool,
    /// Train patches optimised per order.
    pub k: usize,
}

impl Regime {
    pub fn new(successive: bool, k: usize) -> Self {
        Self { successive, k }
    }

    /// The four standard settings: `{non-successive, successive} × {1, 3}`.
    pub fn standard_settings() -> [Regime; 4] {
        [
            Regime::new(false, 1),
            Regime::new(true, 1),
            Regime::new(false, 3),
            Regime::new(true, 3),
        ]
    }

    pub fn is_standard_setting(&self) -> bool {
        self.k == 1 || self.k == 3
    }

    pub fn tag(&self) -> String {
        format!("{}-k{}", if self.successive { "successive" } else { "non-successive" }, self.k)
    }

    pub fn parse(s: &str) -> Option<Self> {
        let (kind, k) = s.rsplit_once("-k")?;
        let k: usize = k.parse().ok()?;
        let successive = match kind {
            "successive" => true,
            "non-successive" => false,
            _ => return None,
        };
        (k >= 1).then_some(Self { successive, k })
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tag())
    }
}
