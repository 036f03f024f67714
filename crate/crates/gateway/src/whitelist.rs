use std::net::IpAddr;

use ipnet::IpNet;

/// Source-address filter. Loopback is always admitted so a single-machine
/// setup needs no configuration; anything else must match an entry.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Whitelist {
    entries: Vec<IpNet>,
}

impl Whitelist {
    pub fn new(entries: Vec<IpNet>) -> Self {
        Self { entries }
    }

    /// Accepts CIDR (`10.0.0.0/24`) or a bare address.
    pub fn allow(&mut self, entry: &str) -> Result<(), String> {
        let net = entry
            .parse::<IpNet>()
            .or_else(|_| entry.parse::<IpAddr>().map(IpNet::from))
            .map_err(|_| format!("bad address or prefix `{entry}`"))?;
        if !self.entries.contains(&net) {
            self.entries.push(net);
        }
        Ok(())
    }

    pub fn entries(&self) -> &[IpNet] {
        &self.entries
    }

    pub fn admit(&self, addr: IpAddr) -> bool {
        let addr = match addr {
            IpAddr::V6(v6) => v6.to_ipv4_mapped().map(IpAddr::V4).unwrap_or(addr),
            v4 => v4,
        };
        addr.is_loopback() || self.entries.iter().any(|n| n.contains(&addr))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prefix_membership() {
        let mut w = Whitelist::default();
        w.allow("10.0.0.0/24").unwrap();
        assert!(w.admit("10.0.0.5".parse().unwrap()));
        assert!(!w.admit("10.0.1.5".parse().unwrap()));
        assert!(w.admit("::ffff:10.0.0.9".parse().unwrap()));
        w.allow("2001:db8::/32").unwrap();
        assert!(w.admit("2001:db8::1".parse().unwrap()));
        assert!(w.allow("nonsense").is_err());
    }

    #[test]
    fn empty_list_admits_only_loopback() {
        let w = Whitelist::default();
        assert!(w.admit("127.0.0.1".parse().unwrap()));
        assert!(w.admit("::1".parse().unwrap()));
        assert!(!w.admit("192.168.1.1".parse().unwrap()));
    }
}
