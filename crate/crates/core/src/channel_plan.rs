//! ITU-T 100 GHz C-band grid arithmetic and flat-top DWDM filter models.
//!
//! Channel `n` sits at `190.0 + 0.1 n` THz. Wavelengths are vacuum
//! wavelengths in nanometres.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speed of light expressed in nm·THz.
pub const SPEED_OF_LIGHT_NM_THZ: f64 = 299_792.458;
pub const GRID_ORIGIN_THZ: f64 = 190.0;
pub const GRID_SPACING_THZ: f64 = 0.1;
pub const MIN_CHANNEL: u8 = 1;
pub const MAX_CHANNEL: u8 = 72;

/// Slack used when deciding whether a frequency sits on a passband edge.
const EDGE_TOLERANCE_THZ: f64 = 1e-9;

/// A channel on the 100 GHz grid. Serialized as its bare index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct ItuChannel(u8);

impl ItuChannel {
    pub fn new(index: u8) -> Result<Self> {
        if (MIN_CHANNEL..=MAX_CHANNEL).contains(&index) {
            Ok(Self(index))
        } else {
            Err(Error::Domain(format!(
                "channel index {index} outside C-band grid {MIN_CHANNEL}..={MAX_CHANNEL}"
            )))
        }
    }

    pub fn index(self) -> u8 {
        self.0
    }

    /// Grid frequency in THz. Computed as `(1900 + n) / 10` so the result is
    /// the correctly rounded decimal value.
    pub fn frequency_thz(self) -> f64 {
        (1900.0 + f64::from(self.0)) / 10.0
    }

    pub fn wavelength_nm(self) -> f64 {
        SPEED_OF_LIGHT_NM_THZ / self.frequency_thz()
    }
}

impl TryFrom<u8> for ItuChannel {
    type Error = Error;

    fn try_from(index: u8) -> Result<Self> {
        Self::new(index)
    }
}

impl From<ItuChannel> for u8 {
    fn from(ch: ItuChannel) -> u8 {
        ch.0
    }
}

impl fmt::Display for ItuChannel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "C{}", self.0)
    }
}

pub fn wavelength_to_frequency_thz(wavelength_nm: f64) -> f64 {
    SPEED_OF_LIGHT_NM_THZ / wavelength_nm
}

pub fn channel_to_wavelength(index: u8) -> Result<f64> {
    Ok(ItuChannel::new(index)?.wavelength_nm())
}

/// Nearest grid channel to `wavelength_nm`. Fails when the wavelength is
/// more than 50 GHz away from every channel.
pub fn wavelength_to_channel(wavelength_nm: f64) -> Result<ItuChannel> {
    if !wavelength_nm.is_finite() || wavelength_nm <= 0.0 {
        return Err(Error::NoChannel { wavelength_nm });
    }
    let freq = wavelength_to_frequency_thz(wavelength_nm);
    let offset = (freq - GRID_ORIGIN_THZ) / GRID_SPACING_THZ;
    let nearest = offset.round();
    if !(f64::from(MIN_CHANNEL)..=f64::from(MAX_CHANNEL)).contains(&nearest) {
        return Err(Error::NoChannel { wavelength_nm });
    }
    let ch = ItuChannel(nearest as u8);
    if (freq - ch.frequency_thz()).abs() > GRID_SPACING_THZ / 2.0 + EDGE_TOLERANCE_THZ {
        return Err(Error::NoChannel { wavelength_nm });
    }
    Ok(ch)
}

/// Energy-conserving partner of `one_side` about `pump`: `2 pump - one_side`.
pub fn conjugate_channel(pump: ItuChannel, one_side: ItuChannel) -> Result<ItuChannel> {
    let index = 2 * i32::from(pump.0) - i32::from(one_side.0);
    u8::try_from(index)
        .map_err(|_| {
            Error::Domain(format!(
                "conjugate of {one_side} about {pump} is off-grid ({index})"
            ))
        })
        .and_then(ItuChannel::new)
}

/// Which DWDM output the model describes. `Transmit` passes the band,
/// `Reflect` passes everything else.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DwdmPort {
    #[default]
    Transmit,
    Reflect,
}

pub const DEFAULT_PASSBAND_GHZ: f64 = 100.0;
pub const DEFAULT_INSERTION_LOSS_DB: f64 = 0.5;
pub const DEFAULT_ISOLATION_DB: f64 = 30.0;

/// Flat-top DWDM filter with one isolation floor. Band edges are inclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DwdmFilter {
    pub center: ItuChannel,
    #[serde(default = "default_passband")]
    pub passband_ghz: f64,
    #[serde(default = "default_il")]
    pub insertion_loss_db: f64,
    #[serde(default = "default_isolation")]
    pub isolation_db: f64,
    #[serde(default)]
    pub port: DwdmPort,
}

fn default_passband() -> f64 {
    DEFAULT_PASSBAND_GHZ
}
fn default_il() -> f64 {
    DEFAULT_INSERTION_LOSS_DB
}
fn default_isolation() -> f64 {
    DEFAULT_ISOLATION_DB
}

impl DwdmFilter {
    /// Transmit-port filter with the default 100 GHz / 0.5 dB / 30 dB figures.
    pub fn new(center: ItuChannel) -> Self {
        Self {
            center,
            passband_ghz: DEFAULT_PASSBAND_GHZ,
            insertion_loss_db: DEFAULT_INSERTION_LOSS_DB,
            isolation_db: DEFAULT_ISOLATION_DB,
            port: DwdmPort::Transmit,
        }
    }

    pub fn reflecting(center: ItuChannel) -> Self {
        Self {
            port: DwdmPort::Reflect,
            ..Self::new(center)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.insertion_loss_db >= 0.0 && self.insertion_loss_db.is_finite()) {
            return Err(Error::Domain(format!(
                "insertion loss must be >= 0 dB, got {}",
                self.insertion_loss_db
            )));
        }
        if !(self.isolation_db > 0.0 && self.isolation_db.is_finite()) {
            return Err(Error::Domain(format!(
                "isolation must be > 0 dB, got {}",
                self.isolation_db
            )));
        }
        if !(self.passband_ghz > 0.0 && self.passband_ghz.is_finite()) {
            return Err(Error::Domain(format!(
                "passband must be > 0 GHz, got {}",
                self.passband_ghz
            )));
        }
        Ok(())
    }

    pub fn in_band(&self, wavelength_nm: f64) -> bool {
        let detuning =
            (wavelength_to_frequency_thz(wavelength_nm) - self.center.frequency_thz()).abs();
        detuning <= self.passband_ghz / 2000.0 + EDGE_TOLERANCE_THZ
    }

    /// Power transmittance at `wavelength_nm`, always in `[0, 1]`.
    pub fn transmittance(&self, wavelength_nm: f64) -> f64 {
        let passes = match self.port {
            DwdmPort::Transmit => self.in_band(wavelength_nm),
            DwdmPort::Reflect => !self.in_band(wavelength_nm),
        };
        let loss_db = if passes {
            self.insertion_loss_db
        } else {
            self.insertion_loss_db + self.isolation_db
        };
        db_to_fraction(loss_db).clamp(0.0, 1.0)
    }
}

pub fn filter_transmittance(filter: &DwdmFilter, wavelength_nm: f64) -> f64 {
    filter.transmittance(wavelength_nm)
}

/// `10^(-loss/10)`.
pub fn db_to_fraction(loss_db: f64) -> f64 {
    10f64.powf(-loss_db / 10.0)
}
