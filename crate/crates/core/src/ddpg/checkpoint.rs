//! Binary agent container.
//!
//! Layout (little-endian): magic `HDPG`, version `u32`, hidden width `u32`,
//! then actor, critic, target actor and target critic, each as a `u32`
//! length followed by `f64` parameters; then the reward baseline (`f64`
//! value, `u8` initialized flag), the noise scale `f64` and the episode
//! counter `u64`. Optimizer moments and the replay buffer are not stored.

use std::io::{Read, Write};

use super::{Agent, DdpgConfig, DdpgError};
use crate::nn::Mlp;

pub const AGENT_MAGIC: [u8; 4] = *b"HDPG";
pub const AGENT_VERSION: u32 = 1;

pub fn write_agent<W: Write>(agent: &Agent, mut w: W) -> Result<(), DdpgError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&AGENT_MAGIC);
    buf.extend_from_slice(&AGENT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(agent.config().hidden as u32).to_le_bytes());
    for net in [
        &agent.actor,
        &agent.critic,
        &agent.actor_target,
        &agent.critic_target,
    ] {
        let p = net.params();
        buf.extend_from_slice(&(p.len() as u32).to_le_bytes());
        p.iter()
            .for_each(|v| buf.extend_from_slice(&v.to_le_bytes()));
    }
    buf.extend_from_slice(&agent.baseline.value.to_le_bytes());
    buf.push(agent.baseline.initialized as u8);
    buf.extend_from_slice(&agent.sigma.to_le_bytes());
    buf.extend_from_slice(&agent.episodes.to_le_bytes());
    w.write_all(&buf)?;
    Ok(())
}

struct Reader<'a>(&'a [u8]);

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N], DdpgError> {
        if self.0.len() < N {
            return Err(DdpgError::Format("truncated".into()));
        }
        let (head, rest) = self.0.split_at(N);
        self.0 = rest;
        Ok(head.try_into().unwrap())
    }

    fn u32(&mut self) -> Result<u32, DdpgError> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    fn f64(&mut self) -> Result<f64, DdpgError> {
        Ok(f64::from_le_bytes(self.take()?))
    }

    fn net_into(&mut self, net: &mut Mlp) -> Result<(), DdpgError> {
        let n = self.u32()? as usize;
        if n != net.param_count() {
            return Err(DdpgError::Format(format!(
                "network has {n} parameters, expected {}",
                net.param_count()
            )));
        }
        let values = (0..n).map(|_| self.f64()).collect::<Result<Vec<_>, _>>()?;
        net.set_params(&values);
        Ok(())
    }
}

/// Restores an agent saved by [`write_agent`]. `config` must use the saved
/// hidden width; optimizers and replay start empty, and `seed` reseeds the
/// exploration noise.
pub fn read_agent<R: Read>(mut r: R, config: DdpgConfig, seed: u64) -> Result<Agent, DdpgError> {
    let mut data = Vec::new();
    r.read_to_end(&mut data)?;
    let mut rd = Reader(&data);
    if rd.take::<4>()? != AGENT_MAGIC {
        return Err(DdpgError::Format("bad magic".into()));
    }
    let version = rd.u32()?;
    if version != AGENT_VERSION {
        return Err(DdpgError::Format(format!("unsupported version {version}")));
    }
    let hidden = rd.u32()? as usize;
    if hidden != config.hidden {
        return Err(DdpgError::Format(format!(
            "hidden width {hidden}, config expects {}",
            config.hidden
        )));
    }
    let mut agent = Agent::new(config, seed);
    rd.net_into(&mut agent.actor)?;
    rd.net_into(&mut agent.critic)?;
    rd.net_into(&mut agent.actor_target)?;
    rd.net_into(&mut agent.critic_target)?;
    agent.baseline.value = rd.f64()?;
    agent.baseline.initialized = rd.take::<1>()?[0] != 0;
    agent.sigma = rd.f64()?;
    agent.episodes = u64::from_le_bytes(rd.take()?);
    if !rd.0.is_empty() {
        return Err(DdpgError::Format(format!("{} trailing bytes", rd.0.len())));
    }
    Ok(agent)
}
