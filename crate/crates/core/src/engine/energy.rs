//! Memory energy model: per-access read/write energy plus leakage power
//! integrated over the simulated runtime.

use std::path::Path;

use serde::Serialize;

use super::{AccessCounters, MemGroup};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GroupEnergy {
    pub read_pj: f64,
    pub write_pj: f64,
    pub leakage_mw: f64,
    pub size_kb: f64,
}

/// Energy parameters per memory group, clock and optional logic power.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyTable {
    pub groups: [GroupEnergy; MemGroup::COUNT],
    pub clock_mhz: f64,
    pub logic_mw: f64,
}

impl Default for EnergyTable {
    fn default() -> Self {
        let g = |read_pj, write_pj, leakage_mw, size_kb| GroupEnergy {
            read_pj,
            write_pj,
            leakage_mw,
            size_kb,
        };
        Self {
            groups: [
                g(11.26, 8.07, 12.39, 675.0),
                g(22.66, 21.44, 3.08, 156.0),
                g(9.71, 8.19, 10.19, 520.0),
                g(9.18, 7.83, 1.43, 68.0),
            ],
            clock_mhz: 200.0,
            logic_mw: 0.0,
        }
    }
}

impl EnergyTable {
    /// Parses whitespace-separated lines `<group> <read_pj> <write_pj>
    /// <leakage_mw> <size_kb>`, plus optional `clock_mhz <v>` and
    /// `logic_mw <v>`. Unlisted groups keep their defaults; `#` starts a
    /// comment.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut table = Self::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                msg,
            };
            let mut fields = line.split_whitespace();
            let key = fields.next().unwrap_or_default();
            let nums: Vec<f64> = fields
                .map(|f| f.parse::<f64>().map_err(|e| err(format!("bad number {f:?}: {e}"))))
                .collect::<Result<_>>()?;
            if nums.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(err("values must be finite and non-negative".into()));
            }
            match (key, nums.as_slice()) {
                ("clock_mhz", [v]) if *v > 0.0 => table.clock_mhz = *v,
                ("logic_mw", [v]) => table.logic_mw = *v,
                (name, [r, w, l, s]) => {
                    let group =
                        MemGroup::from_name(name).ok_or_else(|| err(format!("unknown memory group {name:?}")))?;
                    table.groups[group as usize] = GroupEnergy {
                        read_pj: *r,
                        write_pj: *w,
                        leakage_mw: *l,
                        size_kb: *s,
                    };
                }
                _ => return Err(err(format!("malformed entry {line:?}"))),
            }
        }
        Ok(table)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn total_size_kb(&self) -> f64 {
        self.groups.iter().map(|g| g.size_kb).sum()
    }

    pub fn seconds(&self, cycles: u64) -> f64 {
        cycles as f64 / (self.clock_mhz * 1e6)
    }
}

/// Energy in picojoules.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct EnergyBreakdown {
    pub dynamic_pj: [f64; MemGroup::COUNT],
    pub leakage_pj: [f64; MemGroup::COUNT],
    pub logic_pj: f64,
}

impl EnergyBreakdown {
    /// Σ (reads·E_read + writes·E_write).
    pub fn mem_rw_pj(&self) -> f64 {
        self.dynamic_pj.iter().sum()
    }

    pub fn leakage_total_pj(&self) -> f64 {
        self.leakage_pj.iter().sum()
    }

    pub fn logic_plus_leakage_pj(&self) -> f64 {
        self.logic_pj + self.leakage_total_pj()
    }

    pub fn total_pj(&self) -> f64 {
        self.mem_rw_pj() + self.logic_plus_leakage_pj()
    }
}

/// Dynamic energy from access counts, leakage and logic from runtime
/// `seconds` (mW·s = 1e9 pJ).
pub fn energy_estimate(acc: &AccessCounters, seconds: f64, table: &EnergyTable) -> EnergyBreakdown {
    let mut out = EnergyBreakdown::default();
    for g in MemGroup::ALL {
        let (r, w) = acc.get(g);
        let e = &table.groups[g as usize];
        out.dynamic_pj[g as usize] = r as f64 * e.read_pj + w as f64 * e.write_pj;
        out.leakage_pj[g as usize] = e.leakage_mw * seconds * 1e9;
    }
    out.logic_pj = table.logic_mw * seconds * 1e9;
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_sizes() {
        let t = EnergyTable::default();
        assert_eq!(t.total_size_kb(), 1419.0);
        assert_eq!(t.seconds(200), 1e-6);
    }

    #[test]
    fn parse_overrides_and_rejects_unknown() {
        let p = Path::new("energy.txt");
        let t = EnergyTable::parse("# test\nsorting 1 2 3 4\nclock_mhz 100\n", p).unwrap();
        assert_eq!(t.groups[MemGroup::Sorting as usize].read_pj, 1.0);
        assert_eq!(t.groups[MemGroup::Iwe as usize].read_pj, 11.26);
        assert_eq!(t.clock_mhz, 100.0);
        assert!(EnergyTable::parse("dram 1 2 3 4\n", p).is_err());
        assert!(EnergyTable::parse("iwe 1 2\n", p).is_err());
    }

    #[test]
    fn estimate_by_hand() {
        let mut acc = AccessCounters::default();
        acc.read(MemGroup::Iwe, 10);
        acc.write(MemGroup::Iwe, 5);
        let t = EnergyTable::default();
        let e = energy_estimate(&acc, 1e-3, &t);
        assert!((e.dynamic_pj[0] - (112.6 + 40.35)).abs() < 1e-9);
        assert!((e.leakage_pj[0] - 12.39e6).abs() < 1e-3);
        assert_eq!(e.logic_pj, 0.0);
    }
}
