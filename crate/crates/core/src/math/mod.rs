//! Word-level modular arithmetic and the negacyclic NTT.

pub mod modulus;
pub mod ntt;
pub mod prime;
