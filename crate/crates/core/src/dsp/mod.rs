//! The measurement chain: demodulation, the band filter, time-resolved peak
//! area, spectra and Lorentzian line fits.

pub mod area;
pub mod demod;
pub mod filter;
pub mod lorentz;
pub mod psd;

pub use area::{peak_area, PeakAreaSeries};
pub use demod::demodulate;
pub use filter::{FilterSpec, Window};
pub use lorentz::{lorentzian_fit, LorentzianFit};
pub use psd::{welch_psd, Spectrum};
