pub mod crypto;
pub mod ledger;
pub mod merkle;
pub mod por;
pub mod protocol;
pub mod sap;
pub mod scenario;
