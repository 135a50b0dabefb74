//! `--fault` argument syntax.
//!
//! `SITE:bit=B:cycle=C` where `SITE` is either a full site id as printed by
//! `ftmm sites --list` (e.g. `w_broadcast/r3/c1`) or a category name,
//! optionally followed by `:site=I` to pick the `I`-th site of that category.

use anyhow::{anyhow, bail, Context, Result};
use ftmm::fault::{FaultSite, FaultSpec, SiteCategory};

pub fn parse_fault(arg: &str, catalog: &[FaultSite]) -> Result<FaultSpec> {
    let mut parts = arg.split(':');
    let selector = parts.next().unwrap_or_default();
    let (mut index, mut bit, mut cycle) = (None, None, None);
    for part in parts {
        let (key, value) = part.split_once('=').ok_or_else(|| anyhow!("expected key=value, got `{part}`"))?;
        let value: u64 = value.parse().with_context(|| format!("bad number in `{part}`"))?;
        match key {
            "site" => index = Some(value as usize),
            "bit" => bit = Some(value as u32),
            "cycle" => cycle = Some(value),
            _ => bail!("unknown fault field `{key}` (expected site, bit, cycle)"),
        }
    }
    let bit = bit.ok_or_else(|| anyhow!("fault `{arg}` needs bit=B"))?;
    let cycle = cycle.ok_or_else(|| anyhow!("fault `{arg}` needs cycle=C"))?;

    let site = if selector.contains('/') {
        if index.is_some() {
            bail!("site=I only applies to a category selector");
        }
        *catalog.iter().find(|s| s.id() == selector).ok_or_else(|| anyhow!("no site `{selector}` in this engine"))?
    } else {
        let category: SiteCategory = selector.parse().map_err(|e: String| anyhow!(e))?;
        let index = index.unwrap_or(0);
        *catalog
            .iter()
            .filter(|s| s.category() == category)
            .nth(index)
            .ok_or_else(|| anyhow!("category `{category}` has no site #{index} in this engine"))?
    };
    FaultSpec::new(site, bit, cycle).ok_or_else(|| anyhow!("bit {bit} out of range for `{site}` ({} bits)", site.width()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ftmm::fault::enumerate_sites;
    use ftmm::{EngineConfig, Protection};

    fn catalog() -> Vec<FaultSite> {
        enumerate_sites(&EngineConfig::reference(Protection::Full))
    }

    #[test]
    fn category_and_id_forms() {
        let c = catalog();
        let a = parse_fault("w_broadcast:bit=3:cycle=40", &c).unwrap();
        assert_eq!(a.site, FaultSite::WBroadcast { row: 0, col: 0 });
        assert_eq!((a.bit, a.cycle), (3, 40));
        let b = parse_fault("w_broadcast:site=5:bit=3:cycle=40", &c).unwrap();
        assert_eq!(b.site, FaultSite::WBroadcast { row: 1, col: 1 });
        let d = parse_fault("fsm_state/shadow:bit=0:cycle=1", &c).unwrap();
        assert_eq!(d.site.id(), "fsm_state/shadow");
    }

    #[test]
    fn rejects_bad_specs() {
        let c = catalog();
        for bad in ["w_broadcast:bit=3", "nope:bit=0:cycle=0", "interrupt_wire:bit=1:cycle=0", "x_data:bit=1:cycle=0:x=2"] {
            assert!(parse_fault(bad, &c).is_err(), "{bad}");
        }
    }
}
