pub mod oracle;
pub mod oracle_net;
