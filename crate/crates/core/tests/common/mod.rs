#![allow(dead_code)]

use std::sync::Arc;

use medledger::chaincode::{Chaincode, ChaincodeError, TxContext};
use medledger::channel::ChannelFile;
use medledger::identity::Role;
use medledger::network::Network;

/// Minimal key-value chaincode for pipeline tests.
///
/// | op     | args        | effect                                   |
/// |--------|-------------|------------------------------------------|
/// | `put`  | key, value  | blind write                              |
/// | `incr` | key         | read u64 (absent = 0), write value + 1   |
/// | `copy` | src, dst    | read src, write it to dst (or delete)    |
/// | `del`  | key         | blind delete                             |
/// | `get`  | key         | read, return value                       |
/// | `fail` | -           | reject                                   |
pub struct Kv;

pub fn kv_u64(v: &[u8]) -> u64 {
    u64::from_be_bytes(v.try_into().unwrap_or([0; 8]))
}

impl Chaincode for Kv {
    fn invoke(&self, ctx: &mut TxContext<'_>, op: &str, args: &[Vec<u8>]) -> Result<Vec<u8>, ChaincodeError> {
        let key = |i: usize| -> Result<String, ChaincodeError> {
            args.get(i)
                .and_then(|a| String::from_utf8(a.clone()).ok())
                .ok_or_else(|| ChaincodeError::new("BadArguments", "missing key"))
        };
        match op {
            "put" => {
                let v = args.get(1).cloned().unwrap_or_default();
                ctx.put(key(0)?, v);
                Ok(Vec::new())
            }
            "incr" => {
                let k = key(0)?;
                let n = ctx.get(&k).map_or(0, |v| kv_u64(&v)) + 1;
                ctx.put(k, n.to_be_bytes().to_vec());
                Ok(n.to_be_bytes().to_vec())
            }
            "copy" => {
                let (src, dst) = (key(0)?, key(1)?);
                match ctx.get(&src) {
                    Some(v) => ctx.put(dst, v),
                    None => ctx.delete(dst),
                }
                Ok(Vec::new())
            }
            "del" => {
                ctx.delete(key(0)?);
                Ok(Vec::new())
            }
            "get" => Ok(ctx.get(&key(0)?).unwrap_or_default()),
            "fail" => Err(ChaincodeError::new("Refused", "always fails")),
            other => Err(ChaincodeError::new("UnknownOperation", other)),
        }
    }
}

pub fn channel(max_block_txs: u32, block_timeout_ticks: u64) -> ChannelFile {
    let mut file = ChannelFile::default_file();
    file.channel.max_block_txs = max_block_txs;
    file.channel.block_timeout_ticks = block_timeout_ticks;
    file
}

/// KV network with one enrolled client called `client`.
pub fn kv_network(seed: u64, max_block_txs: u32, block_timeout_ticks: u64) -> Network {
    let mut net = Network::with_chaincode(channel(max_block_txs, block_timeout_ticks), seed, Arc::new(Kv)).unwrap();
    net.enroll("client", "orgA", Role::Hospital).unwrap();
    net
}

pub fn args(parts: &[&str]) -> Vec<Vec<u8>> {
    parts.iter().map(|p| p.as_bytes().to_vec()).collect()
}

/// EHR network with `hosp1`, `hosp2`, `patient1`, practitioner `drbob` and
/// researcher `lab`, all registered.
pub fn ehr_network(seed: u64) -> Network {
    ehr_network_with(ChannelFile::default_file(), seed)
}

pub fn ehr_network_with(file: ChannelFile, seed: u64) -> Network {
    let mut net = Network::new(file, seed).unwrap();
    for (s, org, role) in [
        ("hosp1", "orgA", Role::Hospital),
        ("hosp2", "orgB", Role::Hospital),
        ("patient1", "orgA", Role::Patient),
        ("drbob", "orgB", Role::Practitioner),
        ("lab", "orgB", Role::Researcher),
    ] {
        net.enroll(s, org, role).unwrap();
        net.register(s).unwrap();
    }
    net
}
