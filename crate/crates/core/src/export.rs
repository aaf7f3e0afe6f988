//! Population and sample serialization: CSV with shortest-roundtrip float
//! formatting, and the compact columnar PSIM1 binary (little-endian, one
//! f64 array per variable, optional per-column NA bitmask planes).

use std::io::{Read, Write};

use crate::domain::{SimulationDomain, VarId, VarKind};
use crate::error::{Result, SimError};
use crate::population::Population;

const MAGIC: &[u8; 5] = b"PSIM1";
const VERSION: u8 = 1;
const FLAG_MASK: u8 = 0x01;

/// NA lookup used by the sample writer: (column, row) -> masked?
pub type MaskFn<'a> = &'a dyn Fn(usize, usize) -> bool;

/// Writes `id,var1,var2,...` header plus one row per individual. Integer
/// and binary variables print without a fractional part.
pub fn write_csv<W: Write>(pop: &Population, out: &mut W) -> Result<()> {
    write_csv_masked(pop, None, out)
}

pub fn write_csv_masked<W: Write>(
    pop: &Population,
    mask: Option<MaskFn<'_>>,
    out: &mut W,
) -> Result<()> {
    let domain = pop.domain();
    let mut header = String::from("id");
    for v in domain.variables() {
        header.push(',');
        header.push_str(&v.name);
    }
    header.push('\n');
    out.write_all(header.as_bytes())?;

    let kinds: Vec<VarKind> = domain.variables().iter().map(|v| v.kind).collect();
    let mut line = String::with_capacity(64);
    for row in 0..pop.len() {
        line.clear();
        line.push_str(&pop.ids()[row].to_string());
        for (j, kind) in kinds.iter().enumerate() {
            line.push(',');
            if mask.map(|f| f(j, row)).unwrap_or(false) {
                line.push_str("NA");
            } else {
                push_value(&mut line, pop.column(VarId(j))[row], *kind);
            }
        }
        line.push('\n');
        out.write_all(line.as_bytes())?;
    }
    Ok(())
}

fn push_value(line: &mut String, v: f64, kind: VarKind) {
    use std::fmt::Write as _;
    match kind {
        VarKind::Integer | VarKind::Binary if v.fract() == 0.0 && v.abs() < 9e15 => {
            let _ = write!(line, "{}", v as i64);
        }
        _ => {
            let _ = write!(line, "{v}");
        }
    }
}

/// Writes the PSIM1 columnar binary; bit-exact across platforms.
pub fn write_binary<W: Write>(
    pop: &Population,
    mask: Option<MaskFn<'_>>,
    out: &mut W,
) -> Result<()> {
    let domain = pop.domain();
    let n = pop.len();
    let m = domain.n_variables();
    out.write_all(MAGIC)?;
    out.write_all(&[VERSION, if mask.is_some() { FLAG_MASK } else { 0 }])?;
    out.write_all(&(m as u32).to_le_bytes())?;
    out.write_all(&(n as u64).to_le_bytes())?;
    out.write_all(&pop.next_id().to_le_bytes())?;
    for v in domain.variables() {
        let name = v.name.as_bytes();
        out.write_all(&(name.len() as u16).to_le_bytes())?;
        out.write_all(name)?;
        out.write_all(&[match v.kind {
            VarKind::Real => 0u8,
            VarKind::Integer => 1,
            VarKind::Binary => 2,
        }])?;
    }
    for &id in pop.ids() {
        out.write_all(&id.to_le_bytes())?;
    }
    for j in 0..m {
        for &v in pop.column(VarId(j)) {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    if let Some(mask) = mask {
        let plane_len = n.div_ceil(8);
        let mut plane = vec![0u8; plane_len];
        for j in 0..m {
            plane.iter_mut().for_each(|b| *b = 0);
            for row in 0..n {
                if mask(j, row) {
                    plane[row / 8] |= 1 << (row % 8);
                }
            }
            out.write_all(&plane)?;
        }
    }
    Ok(())
}

/// A decoded PSIM1 file.
pub struct BinaryContents {
    pub population: Population,
    /// Per-column NA planes when the file carried a mask.
    pub mask: Option<Vec<Vec<bool>>>,
}

pub fn read_binary<R: Read>(input: &mut R) -> Result<BinaryContents> {
    let mut head = [0u8; 7];
    input.read_exact(&mut head)?;
    if &head[..5] != MAGIC {
        return Err(SimError::Format("bad magic, not a PSIM1 file".into()));
    }
    if head[5] != VERSION {
        return Err(SimError::Format(format!("unsupported version {}", head[5])));
    }
    let has_mask = head[6] & FLAG_MASK != 0;
    let m = read_u32(input)? as usize;
    let n = read_u64(input)? as usize;
    let next_id = read_u64(input)?;

    let mut builder = SimulationDomain::builder();
    for _ in 0..m {
        let len = read_u16(input)? as usize;
        let mut buf = vec![0u8; len];
        input.read_exact(&mut buf)?;
        let name =
            String::from_utf8(buf).map_err(|e| SimError::Format(format!("bad name: {e}")))?;
        let mut kind_byte = [0u8; 1];
        input.read_exact(&mut kind_byte)?;
        let kind = match kind_byte[0] {
            0 => VarKind::Real,
            1 => VarKind::Integer,
            2 => VarKind::Binary,
            k => return Err(SimError::Format(format!("bad variable kind {k}"))),
        };
        builder = builder.variable(&name, kind);
    }
    let domain = builder.build()?;

    let mut ids = Vec::with_capacity(n);
    for _ in 0..n {
        ids.push(read_u64(input)?);
    }
    let mut columns = Vec::with_capacity(m);
    for _ in 0..m {
        let mut col = Vec::with_capacity(n);
        for _ in 0..n {
            let mut b = [0u8; 8];
            input.read_exact(&mut b)?;
            col.push(f64::from_le_bytes(b));
        }
        columns.push(col);
    }
    let mask = if has_mask {
        let plane_len = n.div_ceil(8);
        let mut planes = Vec::with_capacity(m);
        for _ in 0..m {
            let mut plane = vec![0u8; plane_len];
            input.read_exact(&mut plane)?;
            planes.push((0..n).map(|r| plane[r / 8] & (1 << (r % 8)) != 0).collect());
        }
        Some(planes)
    } else {
        None
    };

    Ok(BinaryContents {
        population: Population::from_parts(domain, ids, columns, next_id),
        mask,
    })
}

fn read_u16<R: Read>(r: &mut R) -> Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Writes a tracker time series as `step,name1,name2,...` CSV.
pub fn write_trackers_csv<W: Write>(
    trackers: &[crate::engine::TrackerSeries],
    out: &mut W,
) -> Result<()> {
    let mut header = String::from("step");
    for t in trackers {
        header.push(',');
        header.push_str(&t.name);
    }
    header.push('\n');
    out.write_all(header.as_bytes())?;
    let steps = trackers.first().map(|t| t.values.len()).unwrap_or(0);
    let mut line = String::new();
    for i in 0..steps {
        line.clear();
        use std::fmt::Write as _;
        let _ = write!(line, "{}", i + 1);
        for t in trackers {
            let _ = write!(line, ",{}", t.values[i]);
        }
        line.push('\n');
        out.write_all(line.as_bytes())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::VarKind;

    fn pop() -> Population {
        let d = SimulationDomain::builder()
            .variable("x", VarKind::Real)
            .variable("flag", VarKind::Binary)
            .build()
            .unwrap();
        let mut p = Population::with_defaults(&d, 3);
        let x = d.var("x").unwrap();
        let f = d.var("flag").unwrap();
        p.set(x, 0, 1.5);
        p.set(x, 1, -0.25);
        p.set(x, 2, 1e-9);
        p.set(f, 2, 1.0);
        p
    }

    #[test]
    fn csv_layout_and_na_tokens() {
        let p = pop();
        let mut out = Vec::new();
        write_csv(&p, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "id,x,flag");
        assert_eq!(lines[1], "0,1.5,0");
        assert_eq!(lines[3], "2,0.000000001,1");

        let mask = |j: usize, row: usize| j == 0 && row == 1;
        let mut out = Vec::new();
        write_csv_masked(&p, Some(&mask), &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.lines().nth(2).unwrap().contains("NA"));
    }

    #[test]
    fn binary_round_trip_is_bit_exact() {
        let p = pop();
        let mut buf = Vec::new();
        write_binary(&p, None, &mut buf).unwrap();
        assert_eq!(&buf[..5], b"PSIM1");
        let back = read_binary(&mut buf.as_slice()).unwrap();
        assert!(back.population.bit_identical(&p));
        assert!(back.mask.is_none());
        assert_eq!(back.population.next_id(), p.next_id());
    }

    #[test]
    fn binary_mask_planes_round_trip() {
        let p = pop();
        let mask = |j: usize, row: usize| (j + row) % 2 == 0;
        let mut buf = Vec::new();
        write_binary(&p, Some(&mask), &mut buf).unwrap();
        let back = read_binary(&mut buf.as_slice()).unwrap();
        let planes = back.mask.unwrap();
        for j in 0..2 {
            for row in 0..3 {
                assert_eq!(planes[j][row], mask(j, row), "cell ({j},{row})");
            }
        }
    }

    #[test]
    fn identical_populations_serialize_identically() {
        let p = pop();
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_binary(&p, None, &mut a).unwrap();
        write_binary(&p.clone(), None, &mut b).unwrap();
        assert_eq!(a, b);
    }
}
