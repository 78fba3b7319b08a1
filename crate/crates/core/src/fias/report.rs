use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::{FiasCategory, FiasMatrix, FiasMetrics};

/// Subtotals by transition direction. Rows are the earlier category.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Quadrants {
    /// Teacher to teacher.
    pub a: u64,
    /// Student or silence to teacher.
    pub b: u64,
    /// Teacher to student or silence.
    pub c: u64,
    /// Student or silence to student or silence.
    pub d: u64,
}

impl Quadrants {
    pub fn of(m: &FiasMatrix) -> Self {
        Quadrants {
            a: m.block_sum(1..=7, 1..=7),
            b: m.block_sum(8..=10, 1..=7),
            c: m.block_sum(1..=7, 8..=10),
            d: m.block_sum(8..=10, 8..=10),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiasReport {
    pub matrix: FiasMatrix,
    pub quadrants: Quadrants,
    pub metrics: FiasMetrics,
    pub flags: Vec<String>,
}

pub fn report(matrix: &FiasMatrix, metrics: &FiasMetrics) -> FiasReport {
    let mut flags = Vec::new();
    if metrics.flags.idr_undefined {
        flags.push("idr_undefined".to_string());
    }
    if metrics.flags.sir_degenerate {
        flags.push("sir_degenerate".to_string());
    }
    FiasReport {
        matrix: *matrix,
        quadrants: Quadrants::of(matrix),
        metrics: metrics.clone(),
        flags,
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |v| format!("{v:.3}"))
}

impl FiasReport {
    /// Aligned plain-text rendering of the grid, quadrants and metrics.
    pub fn to_text(&self) -> String {
        let width = self
            .matrix
            .cells
            .iter()
            .flatten()
            .map(|v| v.to_string().len())
            .max()
            .unwrap_or(1)
            .max(3);
        let mut s = String::new();
        let _ = write!(s, "{:>4} |", "");
        for c in FiasCategory::ALL {
            let _ = write!(s, " {:>width$}", c.code());
        }
        s.push_str(" | sum\n");
        s.push_str(&"-".repeat(6 + 10 * (width + 1) + 6));
        s.push('\n');
        for from in FiasCategory::ALL {
            let _ = write!(s, "{:>4} |", from.code());
            for to in FiasCategory::ALL {
                let _ = write!(s, " {:>width$}", self.matrix.get(from, to));
            }
            let _ = writeln!(s, " | {}", self.matrix.row_sum(from));
        }
        let q = self.quadrants;
        let _ = writeln!(s, "\nquadrants: A={} B={} C={} D={}", q.a, q.b, q.c, q.d);
        let m = &self.metrics;
        let _ = writeln!(
            s,
            "TT={:.3} ST={:.3} IDR={} SIR={:.3}",
            m.tt,
            m.st,
            fmt_opt(m.idr),
            m.sir
        );
        let _ = writeln!(
            s,
            "excluding silence: TT={} ST={}",
            fmt_opt(m.tt_excluding_silence),
            fmt_opt(m.st_excluding_silence)
        );
        if !self.flags.is_empty() {
            let _ = writeln!(s, "flags: {}", self.flags.join(", "));
        }
        s
    }
}
