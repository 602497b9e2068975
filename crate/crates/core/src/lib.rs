//! Model-free extremum seeking built from generating vector fields.
//!
//! The library assembles control loops of the form
//!
//! ```text
//!     dx_i/dt = F1(J(x) - J*) u1_i(t) + F2(J(x) - J*) u2_i(t)
//! ```
//!
//! where `J` is a cost observed only through its values, `(F1, F2)` is a
//! generator pair tied together by the identity `F2 F1' - F1 F2' = F0`, and
//! `(u1_i, u2_i)` are high-frequency dither signals.  On the slow time scale
//! such a loop behaves like the gradient flow `dx/dt = -F0(J - J*) ∇J(x)`,
//! which is what makes the scheme an optimizer: the oscillatory system needs
//! no gradient measurements, yet it tracks the descent flow up to an `O(ε)`
//! residual.
//!
//! Modules:
//!
//! * [`costs`] — cost functions with the regularity constants (`gamma`,
//!   `kappa`, `mu`, `m1`) that the convergence estimates consume.
//! * [`dithers`] — the sinusoidal dither pairs, their averaging coefficients
//!   `beta`, and the amplitude aggregate `nu`.
//! * [`generators`] — builtin generator families, a constructor that completes
//!   `(F1, F0)` into a valid pair by quadrature, and bound estimation for the
//!   vanishing families.
//! * [`dynamics`] — the oscillatory and averaged vector fields, a fixed-step
//!   RK4 integrator, and trajectory capture/CSV output.
//! * [`certificates`] — decay envelopes, the per-period descent inequality,
//!   remainder bounds, and an `epsilon` certificate that turns measured
//!   constants into an admissible dither frequency.
//! * [`expr`] — a small arithmetic expression parser used for user-supplied
//!   scalar functions.

pub mod certificates;
pub mod costs;
pub mod dithers;
pub mod dynamics;
pub mod error;
pub mod expr;
pub mod generators;
pub mod numeric;

pub use error::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
