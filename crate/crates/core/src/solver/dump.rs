//! Plain-text dump of an assembled program for cross-checking elsewhere.
//!
//! Layout, one item per line:
//!
//! ```text
//! program <num_vars> <eq_rows> <ub_rows>
//! H            followed by num_vars rows of num_vars numbers
//! c            followed by one row of num_vars numbers
//! A_eq b_eq    followed by eq_rows rows: num_vars coefficients then the rhs
//! A_ub b_ub    followed by ub_rows rows: num_vars coefficients then the rhs
//! nonneg       followed by one row of 0/1 flags
//! ```
//!
//! Numbers are written with `{:e}` so they round-trip exactly.

use std::io::{self, Write};

use super::ConvexProgram;

fn write_row<W: Write>(out: &mut W, vals: impl Iterator<Item = f64>) -> io::Result<()> {
    let line: Vec<String> = vals.map(|v| format!("{v:e}")).collect();
    writeln!(out, "{}", line.join(" "))
}

pub fn write_program<W: Write>(prog: &ConvexProgram, out: &mut W) -> io::Result<()> {
    let n = prog.num_vars();
    let (eq, ub) = (prog.eq_rows(), prog.ub_rows());
    writeln!(out, "program {n} {} {}", eq.len(), ub.len())?;
    writeln!(out, "H")?;
    let h = prog.hessian_dense();
    for r in 0..n {
        write_row(out, h.row(r).iter().copied())?;
    }
    writeln!(out, "c")?;
    write_row(out, prog.linear().iter().copied())?;
    for (name, set) in [("A_eq b_eq", eq), ("A_ub b_ub", ub)] {
        writeln!(out, "{name}")?;
        let dense = set.dense(n);
        for r in 0..set.len() {
            write_row(out, dense.row(r).iter().copied().chain([set.rhs[r]]))?;
        }
    }
    writeln!(out, "nonneg")?;
    let flags: Vec<&str> = prog.nonneg().iter().map(|&b| if b { "1" } else { "0" }).collect();
    writeln!(out, "{}", flags.join(" "))
}
